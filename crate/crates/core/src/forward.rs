//! Crank–Nicolson forward solver and synthetic, noisy observations.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::fem::{assemble_spatial, SpatialOperators};
use crate::linalg::{gmres, CsrMatrix, Ilu0, KrylovConfig};
use crate::mesh::{BoundaryTag, SpatialMesh, TimeGrid};
use crate::{par, Error, Result};

pub type ScalarField = Arc<dyn Fn([f64; 3]) -> f64 + Send + Sync>;
pub type SpaceTimeField = Arc<dyn Fn([f64; 3], f64) -> f64 + Send + Sync>;

/// Coefficients and boundary/initial data of the convection-diffusion model.
#[derive(Clone)]
pub struct ProblemSpec {
    pub diffusivity: ScalarField,
    pub velocity: [f64; 3],
    /// Dirichlet data `p` on the `|x1| = 2` and `|x2| = 2` faces.
    pub dirichlet: SpaceTimeField,
    /// Neumann flux `q = a ∂C/∂n` on the `|x3| = 2` faces.
    pub neumann: SpaceTimeField,
    pub initial: ScalarField,
    pub t_final: f64,
}

impl ProblemSpec {
    /// `a = 1`, `v = (1, 1, 1)`, homogeneous data, `T = 1`.
    pub fn standard() -> Self {
        ProblemSpec {
            diffusivity: Arc::new(|_| 1.0),
            velocity: [1.0; 3],
            dirichlet: Arc::new(|_, _| 0.0),
            neumann: Arc::new(|_, _| 0.0),
            initial: Arc::new(|_| 0.0),
            t_final: 1.0,
        }
    }

    pub fn spatial_operators(&self, mesh: &SpatialMesh) -> Result<SpatialOperators> {
        let a = self.diffusivity.clone();
        assemble_spatial(mesh, move |x| a(x), self.velocity)
    }
}

impl Default for ProblemSpec {
    fn default() -> Self {
        Self::standard()
    }
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("velocity", &self.velocity)
            .field("t_final", &self.t_final)
            .finish_non_exhaustive()
    }
}

/// Nodal values `f(x_j, t^n)` for `n = 0..=M`.
pub fn sample_source<F>(mesh: &SpatialMesh, grid: &TimeGrid, f: F) -> Vec<Vec<f64>>
where
    F: Fn([f64; 3], f64) -> f64 + Sync + Send,
{
    (0..grid.levels())
        .map(|n| {
            let t = grid.time(n);
            par::map_slice(mesh.nodes(), |&x| f(x, t))
        })
        .collect()
}

/// One Crank–Nicolson step, `lhs C^n = rhs C^{n-1} + loads`, with
/// Dirichlet rows of `lhs` replaced by identity rows.
pub struct ForwardStepper {
    lhs: CsrMatrix,
    rhs: CsrMatrix,
    mass: CsrMatrix,
    face_mass: CsrMatrix,
    ilu: Ilu0,
    tau: f64,
    dirichlet: Vec<usize>,
}

impl ForwardStepper {
    pub fn new(mesh: &SpatialMesh, ops: &SpatialOperators, tau: f64) -> Result<Self> {
        let t = ops.state_transport();
        let mut lhs = CsrMatrix::linear_combination(&[(1.0, &ops.mass), (0.5 * tau, &t)])?;
        let rhs = CsrMatrix::linear_combination(&[(1.0, &ops.mass), (-0.5 * tau, &t)])?;
        let dirichlet: Vec<usize> = (0..mesh.num_nodes())
            .filter(|&i| mesh.tag(i) == BoundaryTag::Dirichlet)
            .collect();
        for &i in &dirichlet {
            lhs.set_identity_row(i);
        }
        let ilu = Ilu0::factor(&lhs)?;
        Ok(ForwardStepper {
            lhs,
            rhs,
            mass: ops.mass.clone(),
            face_mass: ops.face_mass.clone(),
            ilu,
            tau,
            dirichlet,
        })
    }

    /// `B + τ/2 (A + Eᵀ)` with Dirichlet rows set to identity.
    pub fn lhs(&self) -> &CsrMatrix {
        &self.lhs
    }

    /// `B − τ/2 (A + Eᵀ)`, unmodified.
    pub fn rhs_matrix(&self) -> &CsrMatrix {
        &self.rhs
    }

    /// Right-hand side of the step `n−1 → n`. `f` and `q` are nodal values at
    /// both ends of the interval; `p` holds the Dirichlet values at `t^n`.
    pub fn step_rhs(&self, prev: &[f64], f: (&[f64], &[f64]), q: (&[f64], &[f64]), p: &[f64]) -> Vec<f64> {
        let n = prev.len();
        let mut b = self.rhs.mul(prev);
        let favg: Vec<f64> = (0..n).map(|i| 0.5 * (f.0[i] + f.1[i])).collect();
        let qavg: Vec<f64> = (0..n).map(|i| 0.5 * (q.0[i] + q.1[i])).collect();
        let bf = self.mass.mul(&favg);
        let bq = self.face_mass.mul(&qavg);
        for i in 0..n {
            b[i] += self.tau * (bf[i] + bq[i]);
        }
        for &i in &self.dirichlet {
            b[i] = p[i];
        }
        b
    }

    /// Solve one step by ILU(0)-preconditioned GMRES, starting from `guess`.
    pub fn solve(&self, b: &[f64], guess: &[f64]) -> Result<(Vec<f64>, usize)> {
        let cfg = KrylovConfig {
            rtol: 1e-10,
            max_iters: 1000,
            ..KrylovConfig::gmres()
        };
        let (x, rep) = gmres(&self.lhs, &self.ilu, b, &cfg, Some(guess))?;
        if !rep.converged {
            return Err(Error::NotConverged {
                solver: "forward step",
                iterations: rep.iterations,
                residual: rep.relative_residual(),
            });
        }
        Ok((x, rep.iterations))
    }
}

/// States `C^0 .. C^M` and the total number of inner iterations.
#[derive(Clone, Debug)]
pub struct ForwardSolution {
    pub states: Vec<Vec<f64>>,
    pub iterations: usize,
}

/// March the state equation from `C^0 = C0` with nodal source values
/// `source[n]`, `n = 0..=M`.
pub fn solve_forward(
    mesh: &SpatialMesh,
    grid: &TimeGrid,
    ops: &SpatialOperators,
    spec: &ProblemSpec,
    source: &[Vec<f64>],
) -> Result<ForwardSolution> {
    let nn = mesh.num_nodes();
    if source.len() != grid.levels() {
        return Err(Error::DimensionMismatch {
            expected: grid.levels(),
            found: source.len(),
        });
    }
    if let Some(bad) = source.iter().find(|s| s.len() != nn) {
        return Err(Error::DimensionMismatch {
            expected: nn,
            found: bad.len(),
        });
    }
    let stepper = ForwardStepper::new(mesh, ops, grid.tau())?;
    let flux = |t: f64| -> Vec<f64> { par::map_slice(mesh.nodes(), |&x| (spec.neumann)(x, t)) };
    let mut states = Vec::with_capacity(grid.levels());
    states.push(par::map_slice(mesh.nodes(), |&x| (spec.initial)(x)));
    let mut q_prev = flux(0.0);
    let mut iterations = 0;
    for n in 1..grid.levels() {
        let t = grid.time(n);
        let q_now = flux(t);
        let p: Vec<f64> = par::map_slice(mesh.nodes(), |&x| (spec.dirichlet)(x, t));
        let prev = &states[n - 1];
        let b = stepper.step_rhs(prev, (&source[n - 1], &source[n]), (&q_prev, &q_now), &p);
        let (c, its) = stepper.solve(&b, prev)?;
        iterations += its;
        states.push(c);
        q_prev = q_now;
    }
    Ok(ForwardSolution { states, iterations })
}

/// Multiplicative noise model attached to an observation set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Noise {
    pub epsilon: f64,
    pub seed: u64,
}

/// Interval-averaged measurements at snapped mesh nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    /// Node indices on the inversion mesh.
    pub nodes: Vec<usize>,
    pub coords: Vec<[f64; 3]>,
    /// `values[n - 1][p]` is the average over `[t^{n-1}, t^n]` at point `p`.
    pub values: Vec<Vec<f64>>,
    pub noise: Option<Noise>,
}

impl ObservationSet {
    pub fn steps(&self) -> usize {
        self.values.len()
    }

    /// Interval average `n` (1-based) scattered to a full nodal vector.
    pub fn interval_field(&self, n: usize, num_nodes: usize) -> Vec<f64> {
        let mut out = vec![0.0; num_nodes];
        for (p, &node) in self.nodes.iter().enumerate() {
            out[node] = self.values[n - 1][p];
        }
        out
    }

    /// CSV with columns `node_id,x,y,z,n,value`, `n = 1..=M`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "node_id,x,y,z,n,value")?;
        for (k, row) in self.values.iter().enumerate() {
            for (p, v) in row.iter().enumerate() {
                let x = self.coords[p];
                writeln!(out, "{},{},{},{},{},{:.17e}", self.nodes[p], x[0], x[1], x[2], k + 1, v)?;
            }
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut nodes: Vec<usize> = Vec::new();
        let mut coords = Vec::new();
        let mut values: Vec<Vec<f64>> = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|e| Error::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
            let line = line.trim();
            if line.is_empty() || (idx == 0 && line.starts_with("node_id")) {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 6 {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("expected 6 columns, found {}", fields.len()),
                });
            }
            let num = |s: &str| -> Result<f64> {
                s.parse().map_err(|_| Error::Parse {
                    line: lineno,
                    message: format!("bad number `{s}`"),
                })
            };
            let int = |s: &str| -> Result<usize> {
                s.parse().map_err(|_| Error::Parse {
                    line: lineno,
                    message: format!("bad index `{s}`"),
                })
            };
            let node = int(fields[0])?;
            let x = [num(fields[1])?, num(fields[2])?, num(fields[3])?];
            let n = int(fields[4])?;
            let v = num(fields[5])?;
            if n == 0 {
                return Err(Error::Parse {
                    line: lineno,
                    message: "interval index starts at 1".into(),
                });
            }
            let p = match nodes.iter().position(|&m| m == node) {
                Some(p) => p,
                None => {
                    nodes.push(node);
                    coords.push(x);
                    nodes.len() - 1
                }
            };
            if values.len() < n {
                values.resize_with(n, Vec::new);
            }
            let row = &mut values[n - 1];
            if row.len() <= p {
                row.resize(p + 1, f64::NAN);
            }
            row[p] = v;
        }
        for (k, row) in values.iter_mut().enumerate() {
            row.resize(nodes.len(), f64::NAN);
            if row.iter().any(|v| v.is_nan()) {
                return Err(Error::Parse {
                    line: 0,
                    message: format!("interval {} is missing points", k + 1),
                });
            }
        }
        Ok(ObservationSet {
            nodes,
            coords,
            values,
            noise: None,
        })
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

/// Pointwise samples `series[stride·n][series_nodes[p]]`, `n = 0..=M`.
pub fn pointwise_samples(series: &[Vec<f64>], series_nodes: &[usize], stride: usize) -> Result<Vec<Vec<f64>>> {
    if stride == 0 || !(series.len() - 1).is_multiple_of(stride) {
        return Err(Error::InvalidArgument(format!(
            "{} levels cannot be subsampled with stride {stride}",
            series.len()
        )));
    }
    Ok(series
        .iter()
        .step_by(stride)
        .map(|c| series_nodes.iter().map(|&j| c[j]).collect())
        .collect())
}

/// `v ← v + ε r v` with standard normal `r`, drawn level by level.
pub fn perturb_samples(samples: &mut [Vec<f64>], epsilon: f64, seed: u64) {
    if epsilon == 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for row in samples.iter_mut() {
        for v in row.iter_mut() {
            let r: f64 = StandardNormal.sample(&mut rng);
            *v += epsilon * r * *v;
        }
    }
}

/// Perturb pointwise samples (levels `0..=M`), then average over intervals.
pub fn generate_observations(
    mut samples: Vec<Vec<f64>>,
    nodes: Vec<usize>,
    coords: Vec<[f64; 3]>,
    epsilon: f64,
    seed: u64,
) -> Result<ObservationSet> {
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise level must be non-negative, got {epsilon}"
        )));
    }
    if samples.len() < 2 {
        return Err(Error::InvalidArgument("need at least two time levels".into()));
    }
    if nodes.len() != coords.len() || samples.iter().any(|s| s.len() != nodes.len()) {
        return Err(Error::DimensionMismatch {
            expected: nodes.len(),
            found: coords.len(),
        });
    }
    perturb_samples(&mut samples, epsilon, seed);
    let values = samples
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| 0.5 * (a + b)).collect())
        .collect();
    Ok(ObservationSet {
        nodes,
        coords,
        values,
        noise: Some(Noise { epsilon, seed }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip() {
        let obs = generate_observations(
            vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.5]],
            vec![4, 9],
            vec![[0.0, 0.5, -1.0], [1.0, 1.0, 1.0]],
            0.0,
            1,
        )
        .unwrap();
        let mut buf = Vec::new();
        obs.write_csv(&mut buf).unwrap();
        let back = ObservationSet::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.nodes, obs.nodes);
        assert_eq!(back.values, obs.values);
        assert_eq!(back.values[1], vec![4.0, 5.25]);
    }

    #[test]
    fn csv_rejects_garbage() {
        assert!(ObservationSet::read_csv("node_id,x,y,z,n,value\n1,2,3\n".as_bytes()).is_err());
        assert!(ObservationSet::read_csv("1,0,0,0,0,1.0\n".as_bytes()).is_err());
    }

    #[test]
    fn stride_must_divide() {
        let series = vec![vec![0.0]; 5];
        assert!(pointwise_samples(&series, &[0], 2).is_ok());
        assert!(pointwise_samples(&series, &[0], 3).is_err());
    }
}
