//! Restarted GMRES and flexible GMRES with right preconditioning.
//!
//! Both share one Arnoldi loop (modified Gram–Schmidt with a selective second
//! pass, Givens rotations for the least-squares update). Plain GMRES keeps
//! only the Krylov basis and applies the preconditioner once more when the
//! cycle ends; fGMRES stores every preconditioned direction, so the
//! preconditioner may change from one iteration to the next.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crate::{Error, Result};

pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

/// Approximate inverse `z ≈ M⁻¹ r`.
pub trait Preconditioner: Sync {
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }
}

impl<P: Preconditioner + ?Sized> Preconditioner for &P {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        (**self).apply(r, z)
    }
}

impl<A: LinearOperator + ?Sized> LinearOperator for &A {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        (**self).apply(x, y)
    }
}

/// Wraps a closure as a preconditioner.
pub struct FnPreconditioner<F>(pub F);

impl<F: Fn(&[f64], &mut [f64]) + Sync> Preconditioner for FnPreconditioner<F> {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        (self.0)(r, z)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KrylovConfig {
    pub restart: usize,
    pub rtol: f64,
    pub max_iters: usize,
    pub flexible: bool,
}

impl KrylovConfig {
    /// GMRES(50), rtol 1e-6.
    pub fn gmres() -> Self {
        KrylovConfig {
            restart: 50,
            rtol: 1e-6,
            max_iters: 2000,
            flexible: false,
        }
    }

    /// fGMRES(30), rtol 1e-6.
    pub fn fgmres() -> Self {
        KrylovConfig {
            restart: 30,
            rtol: 1e-6,
            max_iters: 2000,
            flexible: true,
        }
    }

    /// Inner coarse-level solve of the two-level preconditioner.
    pub fn coarse() -> Self {
        KrylovConfig {
            restart: 50,
            rtol: 1e-1,
            max_iters: 4,
            flexible: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.restart == 0 {
            return Err(Error::InvalidArgument("restart must be at least 1".into()));
        }
        if !(self.rtol > 0.0 && self.rtol < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "rtol must lie in (0, 1), got {}",
                self.rtol
            )));
        }
        Ok(())
    }
}

impl Default for KrylovConfig {
    fn default() -> Self {
        Self::gmres()
    }
}

/// Convergence history of one solve.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub converged: bool,
    pub rhs_norm: f64,
    /// `residual_norms[0]` is the initial residual; entry `k` the (estimated)
    /// residual after iteration `k`.
    pub residual_norms: Vec<f64>,
    /// Seconds since the start of the solve, aligned with `residual_norms`.
    pub elapsed: Vec<f64>,
    pub restarts: usize,
}

impl SolveReport {
    pub fn final_residual(&self) -> f64 {
        self.residual_norms.last().copied().unwrap_or(0.0)
    }

    pub fn relative_residual(&self) -> f64 {
        if self.rhs_norm > 0.0 {
            self.final_residual() / self.rhs_norm
        } else {
            0.0
        }
    }

    pub fn wall_time(&self) -> f64 {
        self.elapsed.last().copied().unwrap_or(0.0)
    }

    /// CSV with columns `iteration,residual_norm,wall_time`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iteration,residual_norm,wall_time")?;
        for (k, (r, t)) in self.residual_norms.iter().zip(&self.elapsed).enumerate() {
            writeln!(out, "{k},{r:.12e},{t:.6}")?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Second Gram–Schmidt pass once the estimated loss of orthogonality,
/// `ε · ‖w_before‖ / ‖w_after‖`, exceeds this.
const REORTHOGONALIZE_ABOVE: f64 = 1e-8;

/// Right-preconditioned restarted GMRES.
pub fn gmres<A, P>(op: &A, pc: &P, b: &[f64], cfg: &KrylovConfig, x0: Option<&[f64]>) -> Result<(Vec<f64>, SolveReport)>
where
    A: LinearOperator + ?Sized,
    P: Preconditioner + ?Sized,
{
    let cfg = KrylovConfig {
        flexible: false,
        ..*cfg
    };
    krylov(op, pc, b, &cfg, x0)
}

/// Restarted flexible GMRES; `pc` may vary between applications.
pub fn fgmres<A, P>(
    op: &A,
    pc: &P,
    b: &[f64],
    cfg: &KrylovConfig,
    x0: Option<&[f64]>,
) -> Result<(Vec<f64>, SolveReport)>
where
    A: LinearOperator + ?Sized,
    P: Preconditioner + ?Sized,
{
    let cfg = KrylovConfig { flexible: true, ..*cfg };
    krylov(op, pc, b, &cfg, x0)
}

/// Dispatches on `cfg.flexible`.
pub fn solve<A, P>(op: &A, pc: &P, b: &[f64], cfg: &KrylovConfig, x0: Option<&[f64]>) -> Result<(Vec<f64>, SolveReport)>
where
    A: LinearOperator + ?Sized,
    P: Preconditioner + ?Sized,
{
    krylov(op, pc, b, cfg, x0)
}

fn krylov<A, P>(op: &A, pc: &P, b: &[f64], cfg: &KrylovConfig, x0: Option<&[f64]>) -> Result<(Vec<f64>, SolveReport)>
where
    A: LinearOperator + ?Sized,
    P: Preconditioner + ?Sized,
{
    cfg.validate()?;
    let n = op.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: b.len(),
        });
    }
    let mut x = match x0 {
        Some(x0) if x0.len() != n => {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: x0.len(),
            })
        }
        Some(x0) => x0.to_vec(),
        None => vec![0.0; n],
    };

    let start = Instant::now();
    let rhs_norm = norm(b);
    let mut report = SolveReport {
        rhs_norm,
        ..Default::default()
    };
    if rhs_norm == 0.0 {
        report.converged = true;
        report.residual_norms.push(0.0);
        report.elapsed.push(0.0);
        return Ok((x, report));
    }
    let target = cfg.rtol * rhs_norm;
    let m = cfg.restart;

    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    let mut directions: Vec<Vec<f64>> = Vec::new();
    // Hessenberg columns, each of length m + 1.
    let mut hess = vec![vec![0.0; m + 1]; m];
    let mut cs = vec![0.0; m];
    let mut sn = vec![0.0; m];
    let mut g = vec![0.0; m + 1];

    let residual = |x: &[f64], r: &mut [f64], w: &mut [f64]| {
        op.apply(x, w);
        for i in 0..n {
            r[i] = b[i] - w[i];
        }
        norm(r)
    };

    let mut beta = residual(&x, &mut r, &mut w);
    report.residual_norms.push(beta);
    report.elapsed.push(start.elapsed().as_secs_f64());

    loop {
        if beta <= target {
            report.converged = true;
            break;
        }
        if report.iterations >= cfg.max_iters {
            break;
        }

        basis.clear();
        directions.clear();
        basis.push(r.iter().map(|v| v / beta).collect());
        g.fill(0.0);
        g[0] = beta;

        let mut k = 0;
        let mut breakdown = false;
        while k < m && report.iterations < cfg.max_iters {
            pc.apply(&basis[k], &mut z);
            op.apply(&z, &mut w);
            if cfg.flexible {
                directions.push(z.clone());
            }

            let before = norm(&w);
            let col = &mut hess[k];
            col.fill(0.0);
            for (j, v) in basis.iter().enumerate() {
                let h = dot(&w, v);
                col[j] = h;
                axpy(-h, v, &mut w);
            }
            let mut after = norm(&w);
            if after > 0.0 && f64::EPSILON * before / after > REORTHOGONALIZE_ABOVE {
                for (j, v) in basis.iter().enumerate() {
                    let h = dot(&w, v);
                    col[j] += h;
                    axpy(-h, v, &mut w);
                }
                after = norm(&w);
            }
            col[k + 1] = after;

            for j in 0..k {
                let t = cs[j] * col[j] + sn[j] * col[j + 1];
                col[j + 1] = -sn[j] * col[j] + cs[j] * col[j + 1];
                col[j] = t;
            }
            let denom = col[k].hypot(col[k + 1]);
            if denom == 0.0 {
                cs[k] = 1.0;
                sn[k] = 0.0;
            } else {
                cs[k] = col[k] / denom;
                sn[k] = col[k + 1] / denom;
            }
            col[k] = cs[k] * col[k] + sn[k] * col[k + 1];
            col[k + 1] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];

            report.iterations += 1;
            k += 1;
            report.residual_norms.push(g[k].abs());
            report.elapsed.push(start.elapsed().as_secs_f64());

            if after <= 1e-14 * before.max(f64::MIN_POSITIVE) {
                breakdown = true;
                break;
            }
            if g[k].abs() <= target {
                break;
            }
            basis.push(w.iter().map(|v| v / after).collect());
        }

        // Back substitution for the k×k triangular system.
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = g[i];
            for j in i + 1..k {
                s -= hess[j][i] * y[j];
            }
            y[i] = if hess[i][i] != 0.0 { s / hess[i][i] } else { 0.0 };
        }
        if cfg.flexible {
            for (yj, d) in y.iter().zip(&directions) {
                axpy(*yj, d, &mut x);
            }
        } else {
            w.fill(0.0);
            for (yj, v) in y.iter().zip(&basis) {
                axpy(*yj, v, &mut w);
            }
            pc.apply(&w, &mut z);
            axpy(1.0, &z, &mut x);
        }

        beta = residual(&x, &mut r, &mut w);
        if let Some(last) = report.residual_norms.last_mut() {
            *last = beta;
        }
        report.restarts += 1;
        if breakdown && beta > target {
            // Exact invariant subspace but the true residual disagrees:
            // the preconditioned operator is singular on it, nothing more to gain.
            break;
        }
    }
    Ok((x, report))
}
