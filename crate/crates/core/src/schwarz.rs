//! Space-time restricted additive Schwarz preconditioners.
//!
//! The one-level preconditioner solves on every extended subdomain and keeps
//! only the owned part of each local solution:
//! `z = Σ_s (R⁰_s)ᵀ M_s⁻¹ Rᵟ_s r`. Because owned sets partition the unknowns,
//! every entry of `z` is written exactly once and the result is independent of
//! the order in which subdomains finish.
//!
//! The two-level preconditioner composes a coarse-space solve and a fine
//! one-level sweep multiplicatively:
//! `y = P F_c⁻¹ R x`, `z = y + M⁻¹ (x − F_h y)`.

use crate::linalg::{
    gmres, BlockIlu, BlockSparseMatrix, DenseLu, KrylovConfig, LinearOperator, Preconditioner, DENSE_LIMIT,
};
use crate::mesh::SpaceTimeDecomposition;
use crate::{par, Error, Result};

/// How each subdomain problem is solved.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LocalSolver {
    /// Block ILU(k).
    Ilu(usize),
    /// Dense LU of the local matrix.
    Exact,
}

enum LocalFactor {
    Ilu(BlockIlu),
    Dense(DenseLu),
}

impl LocalFactor {
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        match self {
            LocalFactor::Ilu(f) => {
                let mut x = vec![0.0; b.len()];
                f.solve(b, &mut x);
                x
            }
            LocalFactor::Dense(lu) => lu.solve(b),
        }
    }
}

struct SubdomainSolver {
    /// Extended point blocks, ascending.
    extended: Vec<usize>,
    /// Positions within `extended` of the owned blocks.
    owned_local: Vec<usize>,
    factor: LocalFactor,
}

/// One-level restricted additive Schwarz.
pub struct OneLevelSchwarz {
    dim: usize,
    subdomains: Vec<SubdomainSolver>,
}

impl OneLevelSchwarz {
    pub fn build(
        matrix: &BlockSparseMatrix,
        decomposition: &SpaceTimeDecomposition,
        local: LocalSolver,
    ) -> Result<Self> {
        if decomposition.num_blocks() != matrix.block_rows() {
            return Err(Error::DimensionMismatch {
                expected: matrix.block_rows(),
                found: decomposition.num_blocks(),
            });
        }
        let built: Vec<Result<SubdomainSolver>> = par::map_slice(decomposition.subdomains(), |sd| {
            let wrap = |e: Error| Error::Subdomain {
                subdomain: sd.id,
                source: Box::new(e),
            };
            let extended = decomposition.extended_blocks(sd);
            let owned = decomposition.owned_blocks(sd);
            let mut owned_local = Vec::with_capacity(owned.len());
            let mut cursor = 0;
            for b in owned {
                cursor += extended[cursor..].partition_point(|&e| e < b);
                owned_local.push(cursor);
            }
            let sub = matrix.principal_submatrix(&extended).map_err(wrap)?;
            let factor = match local {
                LocalSolver::Ilu(0) => LocalFactor::Ilu(BlockIlu::factor_in_place(sub).map_err(wrap)?),
                LocalSolver::Ilu(k) => LocalFactor::Ilu(BlockIlu::factor(&sub, k).map_err(wrap)?),
                LocalSolver::Exact => {
                    if sub.dim() > DENSE_LIMIT {
                        return Err(wrap(Error::TooLarge {
                            dim: sub.dim(),
                            limit: DENSE_LIMIT,
                        }));
                    }
                    LocalFactor::Dense(DenseLu::factor(sub.to_dense()).map_err(wrap)?)
                }
            };
            Ok(SubdomainSolver {
                extended,
                owned_local,
                factor,
            })
        });
        Ok(OneLevelSchwarz {
            dim: matrix.dim(),
            subdomains: built.into_iter().collect::<Result<_>>()?,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_subdomains(&self) -> usize {
        self.subdomains.len()
    }

    /// Extended point blocks of subdomain `s`.
    pub fn extended_blocks(&self, s: usize) -> &[usize] {
        &self.subdomains[s].extended
    }

    fn local_solutions(&self, r: &[f64]) -> Vec<Vec<f64>> {
        par::map_slice(&self.subdomains, |sd| {
            let mut local = Vec::with_capacity(3 * sd.extended.len());
            for &b in &sd.extended {
                local.extend_from_slice(&r[3 * b..3 * b + 3]);
            }
            sd.factor.solve(&local)
        })
    }

    /// Owned-only scatter: `write(global_index, value)` once per owned unknown.
    fn scatter(&self, locals: &[Vec<f64>], mut write: impl FnMut(usize, f64)) {
        for (sd, x) in self.subdomains.iter().zip(locals) {
            for &p in &sd.owned_local {
                let b = sd.extended[p];
                for c in 0..3 {
                    write(3 * b + c, x[3 * p + c]);
                }
            }
        }
    }

    /// Number of subdomains that write each scalar unknown during one
    /// application. The restricted variant gives exactly one everywhere.
    pub fn write_counts(&self) -> Vec<usize> {
        let locals: Vec<Vec<f64>> = self
            .subdomains
            .iter()
            .map(|sd| vec![0.0; 3 * sd.extended.len()])
            .collect();
        let mut counts = vec![0usize; self.dim];
        self.scatter(&locals, |i, _| counts[i] += 1);
        counts
    }
}

impl Preconditioner for OneLevelSchwarz {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let locals = self.local_solutions(r);
        z.fill(0.0);
        self.scatter(&locals, |i, v| z[i] = v);
    }
}

/// Per-axis interpolation stencil from coarse to fine grid points.
#[derive(Clone, Debug)]
struct AxisTransfer {
    ratio: usize,
    coarse_points: usize,
    /// For each fine point: `(coarse point, weight)` pairs.
    prolong: Vec<[(usize, f64); 2]>,
}

impl AxisTransfer {
    fn new(coarse_cells: usize, ratio: usize) -> Self {
        let fine_cells = coarse_cells * ratio;
        let prolong = (0..=fine_cells)
            .map(|i| {
                let c = (i / ratio).min(coarse_cells - 1);
                let w = (i - c * ratio) as f64 / ratio as f64;
                [(c, 1.0 - w), (c + 1, w)]
            })
            .collect();
        AxisTransfer {
            ratio,
            coarse_points: coarse_cells + 1,
            prolong,
        }
    }

    fn fine_points(&self) -> usize {
        self.prolong.len()
    }

    /// Fine points and weights contributing to coarse point `c` under `Pᵀ`.
    fn restrict_stencil(&self, c: usize) -> Vec<(usize, f64)> {
        let centre = c * self.ratio;
        let lo = centre.saturating_sub(self.ratio - 1);
        let hi = (centre + self.ratio - 1).min(self.fine_points() - 1);
        (lo..=hi)
            .map(|i| (i, 1.0 - i.abs_diff(centre) as f64 / self.ratio as f64))
            .collect()
    }
}

/// Coarse-to-fine restriction used by the two-level method.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Restriction {
    /// Sample the fine vector at coarse points.
    Injection,
    /// Transpose of the prolongation.
    Transpose,
}

/// Grid transfers between nested space-time meshes, applied to each of the
/// three point-block components independently.
#[derive(Clone, Debug)]
pub struct Transfer {
    space: AxisTransfer,
    time: AxisTransfer,
    pub restriction: Restriction,
}

impl Transfer {
    pub fn new(
        fine_cells: usize,
        fine_steps: usize,
        coarse_cells: usize,
        coarse_steps: usize,
        restriction: Restriction,
    ) -> Result<Self> {
        if coarse_cells == 0
            || coarse_steps == 0
            || !fine_cells.is_multiple_of(coarse_cells)
            || !fine_steps.is_multiple_of(coarse_steps)
        {
            return Err(Error::InvalidArgument(format!(
                "meshes are not nested: fine {fine_cells}/{fine_steps}, coarse {coarse_cells}/{coarse_steps}"
            )));
        }
        Ok(Transfer {
            space: AxisTransfer::new(coarse_cells, fine_cells / coarse_cells),
            time: AxisTransfer::new(coarse_steps, fine_steps / coarse_steps),
            restriction,
        })
    }

    fn fine_nodes(&self) -> usize {
        self.space.fine_points().pow(3)
    }

    fn coarse_nodes(&self) -> usize {
        self.space.coarse_points.pow(3)
    }

    pub fn fine_dim(&self) -> usize {
        3 * self.fine_nodes() * self.time.fine_points()
    }

    pub fn coarse_dim(&self) -> usize {
        3 * self.coarse_nodes() * self.time.coarse_points
    }

    /// Trilinear in space, linear in time.
    pub fn prolong(&self, coarse: &[f64], fine: &mut [f64]) {
        assert_eq!(coarse.len(), self.coarse_dim());
        assert_eq!(fine.len(), self.fine_dim());
        let nf = self.space.fine_points();
        let nc = self.space.coarse_points;
        let fine_nodes = self.fine_nodes();
        let coarse_nodes = self.coarse_nodes();
        let sp = &self.space.prolong;
        par::for_each_chunk_mut(fine, 3 * fine_nodes, |start, level| {
            let n = start / (3 * fine_nodes);
            for (node, out) in level.chunks_exact_mut(3).enumerate() {
                let (i, j, k) = (node % nf, (node / nf) % nf, node / (nf * nf));
                let mut acc = [0.0; 3];
                for &(tc, wt) in &self.time.prolong[n] {
                    if wt == 0.0 {
                        continue;
                    }
                    for &(kc, wk) in &sp[k] {
                        if wk == 0.0 {
                            continue;
                        }
                        for &(jc, wj) in &sp[j] {
                            if wj == 0.0 {
                                continue;
                            }
                            for &(ic, wi) in &sp[i] {
                                if wi == 0.0 {
                                    continue;
                                }
                                let w = wt * wk * wj * wi;
                                let b = tc * coarse_nodes + ic + nc * (jc + nc * kc);
                                for c in 0..3 {
                                    acc[c] += w * coarse[3 * b + c];
                                }
                            }
                        }
                    }
                }
                out.copy_from_slice(&acc);
            }
        });
    }

    pub fn restrict(&self, fine: &[f64], coarse: &mut [f64]) {
        assert_eq!(coarse.len(), self.coarse_dim());
        assert_eq!(fine.len(), self.fine_dim());
        let nf = self.space.fine_points();
        let nc = self.space.coarse_points;
        let (rs, rt) = (self.space.ratio, self.time.ratio);
        let fine_nodes = self.fine_nodes();
        let coarse_nodes = self.coarse_nodes();
        let stencils: Vec<Vec<(usize, f64)>> = (0..nc).map(|c| self.space.restrict_stencil(c)).collect();
        par::for_each_chunk_mut(coarse, 3 * coarse_nodes, |start, level| {
            let n = start / (3 * coarse_nodes);
            let time_stencil = self.time.restrict_stencil(n);
            for (node, out) in level.chunks_exact_mut(3).enumerate() {
                let (i, j, k) = (node % nc, (node / nc) % nc, node / (nc * nc));
                match self.restriction {
                    Restriction::Injection => {
                        let b = rt * n * fine_nodes + rs * i + nf * (rs * j + nf * rs * k);
                        out.copy_from_slice(&fine[3 * b..3 * b + 3]);
                    }
                    Restriction::Transpose => {
                        let mut acc = [0.0; 3];
                        for &(tf, wt) in &time_stencil {
                            for &(kf, wk) in &stencils[k] {
                                for &(jf, wj) in &stencils[j] {
                                    for &(if_, wi) in &stencils[i] {
                                        let w = wt * wk * wj * wi;
                                        let b = tf * fine_nodes + if_ + nf * (jf + nf * kf);
                                        for c in 0..3 {
                                            acc[c] += w * fine[3 * b + c];
                                        }
                                    }
                                }
                            }
                        }
                        out.copy_from_slice(&acc);
                    }
                }
            }
        });
    }

    /// `injection(prolong(v))`; equals `v` on nested meshes.
    pub fn roundtrip(&self, coarse: &[f64]) -> Vec<f64> {
        let mut fine = vec![0.0; self.fine_dim()];
        self.prolong(coarse, &mut fine);
        let inj = Transfer {
            restriction: Restriction::Injection,
            ..self.clone()
        };
        let mut out = vec![0.0; self.coarse_dim()];
        inj.restrict(&fine, &mut out);
        out
    }
}

/// Coarse-level solve inside the two-level preconditioner.
pub enum CoarseSolver {
    /// A few GMRES iterations preconditioned by coarse one-level Schwarz.
    Iterative {
        matrix: BlockSparseMatrix,
        preconditioner: OneLevelSchwarz,
        config: KrylovConfig,
    },
    /// Dense LU of the coarse matrix (small problems only).
    Exact(DenseLu),
}

impl CoarseSolver {
    pub fn iterative(matrix: BlockSparseMatrix, preconditioner: OneLevelSchwarz, config: KrylovConfig) -> Self {
        CoarseSolver::Iterative {
            matrix,
            preconditioner,
            config,
        }
    }

    pub fn exact(matrix: &BlockSparseMatrix) -> Result<Self> {
        if matrix.dim() > DENSE_LIMIT {
            return Err(Error::TooLarge {
                dim: matrix.dim(),
                limit: DENSE_LIMIT,
            });
        }
        Ok(CoarseSolver::Exact(DenseLu::factor(matrix.to_dense())?))
    }

    fn dim(&self) -> usize {
        match self {
            CoarseSolver::Iterative { matrix, .. } => matrix.dim(),
            CoarseSolver::Exact(lu) => lu.dim(),
        }
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        match self {
            CoarseSolver::Iterative {
                matrix,
                preconditioner,
                config,
            } => match gmres(matrix, preconditioner, b, config, None) {
                // An unconverged inner solve is still a usable correction.
                Ok((x, _)) => x,
                Err(_) => vec![0.0; b.len()],
            },
            CoarseSolver::Exact(lu) => lu.solve(b),
        }
    }
}

/// Multiplicative coarse-fine hybrid. The inner coarse solve is iterative,
/// so the outer Krylov method must be flexible.
pub struct TwoLevelSchwarz<'a> {
    fine: &'a BlockSparseMatrix,
    fine_pc: OneLevelSchwarz,
    coarse: CoarseSolver,
    transfer: Transfer,
}

impl<'a> TwoLevelSchwarz<'a> {
    pub fn new(
        fine: &'a BlockSparseMatrix,
        fine_pc: OneLevelSchwarz,
        coarse: CoarseSolver,
        transfer: Transfer,
    ) -> Result<Self> {
        if transfer.fine_dim() != fine.dim() || fine_pc.dim() != fine.dim() {
            return Err(Error::DimensionMismatch {
                expected: fine.dim(),
                found: transfer.fine_dim(),
            });
        }
        if transfer.coarse_dim() != coarse.dim() {
            return Err(Error::DimensionMismatch {
                expected: coarse.dim(),
                found: transfer.coarse_dim(),
            });
        }
        Ok(TwoLevelSchwarz {
            fine,
            fine_pc,
            coarse,
            transfer,
        })
    }

    pub fn fine_preconditioner(&self) -> &OneLevelSchwarz {
        &self.fine_pc
    }

    /// `y = P F_c⁻¹ R x`.
    pub fn coarse_correction(&self, x: &[f64]) -> Vec<f64> {
        let mut xc = vec![0.0; self.transfer.coarse_dim()];
        self.transfer.restrict(x, &mut xc);
        let yc = self.coarse.solve(&xc);
        let mut y = vec![0.0; x.len()];
        self.transfer.prolong(&yc, &mut y);
        y
    }
}

impl Preconditioner for TwoLevelSchwarz<'_> {
    fn apply(&self, x: &[f64], z: &mut [f64]) {
        let y = self.coarse_correction(x);
        let mut r = vec![0.0; x.len()];
        self.fine.apply(&y, &mut r);
        for (ri, xi) in r.iter_mut().zip(x) {
            *ri = xi - *ri;
        }
        self.fine_pc.apply(&r, z);
        for (zi, yi) in z.iter_mut().zip(&y) {
            *zi += yi;
        }
    }
}
