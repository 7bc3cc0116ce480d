//! The global space-time KKT system in point-block ordering.
//!
//! Unknowns are grouped per (node, time level) into a block `(C, G, f)`;
//! blocks are numbered time-level-major, `block = n·N + j`. Block row `(j, n)`
//! holds:
//!
//! - the state equation of step `n` (identity for `n = 0` and Dirichlet nodes),
//! - the adjoint equation of step `n + 1` (identity for `n = M` and Dirichlet nodes),
//! - the optimality condition for `f` tested with `φ_j θ_n`.
//!
//! Each row therefore couples only levels `n − 1`, `n`, `n + 1`.

use std::io::Write;
use std::path::Path;

use crate::fem::{Measurements, RegularizationSpec, SpatialOperators, TemporalOperators};
use crate::forward::{ObservationSet, ProblemSpec};
use crate::linalg::{Block, BlockSparseMatrix, ZERO_BLOCK};
use crate::mesh::{SpatialMesh, TimeGrid};
use crate::{par, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Var {
    C = 0,
    G = 1,
    F = 2,
}

impl Var {
    pub const ALL: [Var; 3] = [Var::C, Var::G, Var::F];
}

/// Bijection between `(node, level, var)` and scalar indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DofMap {
    nodes: usize,
    levels: usize,
}

impl DofMap {
    pub fn new(nodes: usize, levels: usize) -> Self {
        DofMap { nodes, levels }
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn num_blocks(&self) -> usize {
        self.nodes * self.levels
    }

    pub fn dim(&self) -> usize {
        3 * self.num_blocks()
    }

    #[inline]
    pub fn block(&self, node: usize, level: usize) -> usize {
        level * self.nodes + node
    }

    #[inline]
    pub fn index(&self, node: usize, level: usize, var: Var) -> usize {
        3 * self.block(node, level) + var as usize
    }

    pub fn decode(&self, index: usize) -> (usize, usize, Var) {
        let block = index / 3;
        (block % self.nodes, block / self.nodes, Var::ALL[index % 3])
    }

    /// Position of a scalar unknown in the variable-major layout
    /// `(C^0..C^M, G^0..G^M, f^0..f^M)`.
    pub fn variable_major_index(&self, index: usize) -> usize {
        let (node, level, var) = self.decode(index);
        ((var as usize) * self.levels + level) * self.nodes + node
    }
}

/// Everything the KKT matrix depends on.
#[derive(Clone, Copy)]
pub struct KktInputs<'a> {
    pub mesh: &'a SpatialMesh,
    pub grid: &'a TimeGrid,
    pub spatial: &'a SpatialOperators,
    pub temporal: &'a TemporalOperators,
    pub reg: &'a RegularizationSpec,
    pub measurements: &'a Measurements,
    pub spec: &'a ProblemSpec,
}

impl KktInputs<'_> {
    fn validate(&self) -> Result<()> {
        let n = self.mesh.num_nodes();
        for found in [self.spatial.dim(), self.measurements.diag.len()] {
            if found != n {
                return Err(Error::DimensionMismatch { expected: n, found });
            }
        }
        if self.temporal.levels() != self.grid.levels() {
            return Err(Error::DimensionMismatch {
                expected: self.grid.levels(),
                found: self.temporal.levels(),
            });
        }
        self.reg.validate()
    }

    pub fn dofs(&self) -> DofMap {
        DofMap::new(self.mesh.num_nodes(), self.grid.levels())
    }
}

#[derive(Clone, Debug)]
pub struct KktSystem {
    pub matrix: BlockSparseMatrix,
    pub rhs: Vec<f64>,
    pub dofs: DofMap,
}

pub fn assemble_kkt(inputs: &KktInputs<'_>, obs: &ObservationSet) -> Result<KktSystem> {
    let matrix = assemble_kkt_matrix(inputs)?;
    let rhs = assemble_kkt_rhs(inputs, obs)?;
    Ok(KktSystem {
        matrix,
        rhs,
        dofs: inputs.dofs(),
    })
}

/// Assemble `F_h`.
pub fn assemble_kkt_matrix(inputs: &KktInputs<'_>) -> Result<BlockSparseMatrix> {
    inputs.validate()?;
    let dofs = inputs.dofs();
    let nn = dofs.nodes();
    let levels = dofs.levels();
    let steps = levels - 1;
    let tau = inputs.grid.tau();
    let ops = inputs.spatial;
    let t = inputs.temporal;
    let reg = inputs.reg;
    let b3 = &inputs.measurements.diag;
    let dirichlet: Vec<bool> = (0..nn).map(|j| inputs.mesh.is_dirichlet(j)).collect();

    let sp_ptr = ops.mass.row_ptr();
    let sp_cols = ops.mass.cols();
    let mass = ops.mass.values();
    let state = ops.state_transport();
    let adjoint = ops.adjoint_transport();
    let (state, adjoint) = (state.values(), adjoint.values());

    let window = |n: usize| n.saturating_sub(1)..(n + 2).min(levels);
    let mut row_ptr = Vec::with_capacity(dofs.num_blocks() + 1);
    row_ptr.push(0usize);
    for n in 0..levels {
        let width = window(n).len();
        for j in 0..nn {
            let last = *row_ptr.last().unwrap_or(&0);
            row_ptr.push(last + width * (sp_ptr[j + 1] - sp_ptr[j]));
        }
    }
    let nnz = *row_ptr.last().unwrap_or(&0);
    let mut cols = vec![0usize; nnz];
    let mut blocks = vec![ZERO_BLOCK; nnz];

    // One task per time level; each owns a contiguous slice of the arrays.
    let mut tasks = Vec::with_capacity(levels);
    {
        let (mut crest, mut brest) = (cols.as_mut_slice(), blocks.as_mut_slice());
        for n in 0..levels {
            let len = row_ptr[(n + 1) * nn] - row_ptr[n * nn];
            let (c, cr) = crest.split_at_mut(len);
            let (b, br) = brest.split_at_mut(len);
            tasks.push((c, b));
            crest = cr;
            brest = br;
        }
    }
    par::for_each_mut(&mut tasks, |n, (cols, blocks)| {
        let base = row_ptr[n * nn];
        for j in 0..nn {
            let mut pos = row_ptr[n * nn + j] - base;
            for m in window(n) {
                for p in sp_ptr[j]..sp_ptr[j + 1] {
                    let k = sp_cols[p];
                    cols[pos] = dofs.block(k, m);
                    let blk: &mut Block = &mut blocks[pos];
                    pos += 1;

                    // state equation of step n
                    if n == 0 || dirichlet[j] {
                        if m == n && k == j {
                            blk[0] = 1.0;
                        }
                    } else if m == n {
                        blk[0] = mass[p] + 0.5 * tau * state[p];
                        blk[2] = -0.5 * tau * mass[p];
                    } else if m + 1 == n {
                        blk[0] = -mass[p] + 0.5 * tau * state[p];
                        blk[2] = -0.5 * tau * mass[p];
                    }

                    // adjoint equation of step n + 1
                    if n == steps || dirichlet[j] {
                        if m == n && k == j {
                            blk[4] = 1.0;
                        }
                    } else if m == n || m == n + 1 {
                        let sign = if m == n { 1.0 } else { -1.0 };
                        blk[4] = sign * mass[p] + 0.5 * tau * adjoint[p];
                        if k == j {
                            blk[3] = 0.5 * tau * b3[j];
                        }
                    }

                    // optimality in f
                    blk[7] = -t.mt(n, m) * mass[p];
                    blk[8] = reg.w_entry(ops, t, n, m, p);
                }
            }
        }
    });
    BlockSparseMatrix::new(dofs.num_blocks(), row_ptr, cols, blocks)
}

/// Assemble `b`: initial and Dirichlet data, Neumann loads, observations.
pub fn assemble_kkt_rhs(inputs: &KktInputs<'_>, obs: &ObservationSet) -> Result<Vec<f64>> {
    inputs.validate()?;
    let dofs = inputs.dofs();
    let nn = dofs.nodes();
    let steps = dofs.levels() - 1;
    if obs.steps() != steps {
        return Err(Error::DimensionMismatch {
            expected: steps,
            found: obs.steps(),
        });
    }
    if let Some(&bad) = obs
        .nodes
        .iter()
        .find(|&&j| j >= nn || !inputs.measurements.is_measured(j))
    {
        return Err(Error::InvalidArgument(format!(
            "observation node {bad} is not a measurement node"
        )));
    }
    let mesh = inputs.mesh;
    let grid = inputs.grid;
    let spec = inputs.spec;
    let tau = grid.tau();
    let nodes = mesh.nodes();
    let b3 = &inputs.measurements.diag;

    let flux: Vec<Vec<f64>> = (0..=steps)
        .map(|n| par::map_slice(nodes, |&x| (spec.neumann)(x, grid.time(n))))
        .collect();
    let mut rhs = vec![0.0; dofs.dim()];
    for n in 0..=steps {
        let load = if n > 0 {
            let qbar: Vec<f64> = flux[n - 1].iter().zip(&flux[n]).map(|(a, b)| 0.5 * (a + b)).collect();
            inputs.spatial.face_mass.mul(&qbar)
        } else {
            Vec::new()
        };
        let data = if n < steps {
            obs.interval_field(n + 1, nn)
        } else {
            Vec::new()
        };
        for j in 0..nn {
            let dir = mesh.is_dirichlet(j);
            rhs[dofs.index(j, n, Var::C)] = if n == 0 {
                (spec.initial)(nodes[j])
            } else if dir {
                (spec.dirichlet)(nodes[j], grid.time(n))
            } else {
                tau * load[j]
            };
            if n < steps && !dir {
                rhs[dofs.index(j, n, Var::G)] = tau * b3[j] * data[j];
            }
        }
    }
    Ok(rhs)
}

/// Nodal time series of the three fields, each indexed `[level][node]`.
#[derive(Clone, Debug, PartialEq)]
pub struct KktSolution {
    pub c: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
    pub f: Vec<Vec<f64>>,
}

pub fn extract_solution(dofs: &DofMap, u: &[f64]) -> Result<KktSolution> {
    if u.len() != dofs.dim() {
        return Err(Error::DimensionMismatch {
            expected: dofs.dim(),
            found: u.len(),
        });
    }
    let field = |var: Var| -> Vec<Vec<f64>> {
        (0..dofs.levels())
            .map(|n| (0..dofs.nodes()).map(|j| u[dofs.index(j, n, var)]).collect())
            .collect()
    };
    Ok(KktSolution {
        c: field(Var::C),
        g: field(Var::G),
        f: field(Var::F),
    })
}

pub fn interleave(dofs: &DofMap, sol: &KktSolution) -> Result<Vec<f64>> {
    let mut u = vec![0.0; dofs.dim()];
    for (var, series) in [(Var::C, &sol.c), (Var::G, &sol.g), (Var::F, &sol.f)] {
        if series.len() != dofs.levels() {
            return Err(Error::DimensionMismatch {
                expected: dofs.levels(),
                found: series.len(),
            });
        }
        for (n, level) in series.iter().enumerate() {
            if level.len() != dofs.nodes() {
                return Err(Error::DimensionMismatch {
                    expected: dofs.nodes(),
                    found: level.len(),
                });
            }
            for (j, &v) in level.iter().enumerate() {
                u[dofs.index(j, n, var)] = v;
            }
        }
    }
    Ok(u)
}

/// Discrete objective: interval-averaged misfit at the measurement nodes plus
/// `½ fᵀ W f`.
pub fn evaluate_objective(
    c: &[Vec<f64>],
    f: &[Vec<f64>],
    obs: &ObservationSet,
    tau: f64,
    spatial: &SpatialOperators,
    temporal: &TemporalOperators,
    reg: &RegularizationSpec,
) -> Result<f64> {
    let levels = temporal.levels();
    if c.len() != levels || f.len() != levels || obs.steps() + 1 != levels {
        return Err(Error::DimensionMismatch {
            expected: levels,
            found: c.len().min(f.len()),
        });
    }
    let mut misfit = 0.0;
    for n in 1..levels {
        for (p, &j) in obs.nodes.iter().enumerate() {
            let d = 0.5 * (c[n - 1][j] + c[n][j]) - obs.values[n - 1][p];
            misfit += tau * d * d;
        }
    }
    Ok(0.5 * misfit + 0.5 * regularization_energy(f, spatial, temporal, reg))
}

/// `fᵀ W f = Σ_{m,n} (β1 Lt[m,n] f^mᵀ B f^n + β2 Mt[m,n] f^mᵀ S f^n)`.
pub fn regularization_energy(
    f: &[Vec<f64>],
    spatial: &SpatialOperators,
    temporal: &TemporalOperators,
    reg: &RegularizationSpec,
) -> f64 {
    let s = reg.spatial_matrix(spatial);
    let levels = f.len();
    let mut total = 0.0;
    for m in 0..levels {
        let bf = spatial.mass.mul(&f[m]);
        let sf = s.mul(&f[m]);
        for n in m.saturating_sub(1)..(m + 2).min(levels) {
            let fb: f64 = f[n].iter().zip(&bf).map(|(a, b)| a * b).sum();
            let fs: f64 = f[n].iter().zip(&sf).map(|(a, b)| a * b).sum();
            total += reg.beta1 * temporal.lt(m, n) * fb + reg.beta2 * temporal.mt(m, n) * fs;
        }
    }
    total
}

/// Write the nonzero entries of `F_h` as `row col value` lines (0-based).
pub fn write_triplets<W: Write>(matrix: &BlockSparseMatrix, mut out: W) -> std::io::Result<()> {
    for i in 0..matrix.block_rows() {
        let (cols, blocks) = matrix.row(i);
        for r in 0..3 {
            for (&c, blk) in cols.iter().zip(blocks) {
                for s in 0..3 {
                    let v = blk[3 * r + s];
                    if v != 0.0 {
                        writeln!(out, "{} {} {:.17e}", 3 * i + r, 3 * c + s, v)?;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Write `b` one value per line.
pub fn write_vector<W: Write>(v: &[f64], mut out: W) -> std::io::Result<()> {
    for x in v {
        writeln!(out, "{x:.17e}")?;
    }
    Ok(())
}

impl KktSystem {
    /// Dump `F_h` (triplets) and `b` to two text files.
    pub fn dump(&self, matrix_path: &Path, rhs_path: &Path) -> Result<()> {
        let open = |p: &Path| {
            std::fs::File::create(p)
                .map(std::io::BufWriter::new)
                .map_err(|e| Error::io(p, e))
        };
        let mut w = open(matrix_path)?;
        write_triplets(&self.matrix, &mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(matrix_path, e))?;
        let mut w = open(rhs_path)?;
        write_vector(&self.rhs, &mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(rhs_path, e))
    }
}
