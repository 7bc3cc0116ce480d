#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::Arc;

use stkkt::experiment::{assemble_instance, generate_data, DataSet, Instance, MeasurementGrid, RunConfig};
use stkkt::fem::assemble_temporal;
use stkkt::forward::{sample_source, solve_forward, ProblemSpec};
use stkkt::mesh::{SpatialMesh, TimeGrid};

/// `C* = t sin(πx₁/4) x₂ x₃` with `a = 1`, `v = (1, 1, 1)`.
pub fn manufactured_exact(x: [f64; 3], t: f64) -> f64 {
    t * (PI * x[0] / 4.0).sin() * x[1] * x[2]
}

pub fn manufactured_source(x: [f64; 3], t: f64) -> f64 {
    let k = PI / 4.0;
    let s = (k * x[0]).sin();
    let c = (k * x[0]).cos();
    let (y, z) = (x[1], x[2]);
    s * y * z + t * k * k * s * y * z + t * (k * c * y * z + s * (y + z))
}

pub fn manufactured_spec() -> ProblemSpec {
    ProblemSpec {
        dirichlet: Arc::new(manufactured_exact),
        // a ∂C/∂n on x₃ = ±2 with outward normal ±e₃.
        neumann: Arc::new(|x, t| x[2].signum() * t * (PI * x[0] / 4.0).sin() * x[1]),
        initial: Arc::new(|x| manufactured_exact(x, 0.0)),
        ..ProblemSpec::standard()
    }
}

/// Largest mass-norm error over all time levels.
pub fn manufactured_error(cells: usize, steps: usize) -> f64 {
    let mesh = SpatialMesh::build(cells).unwrap();
    let grid = TimeGrid::build(steps, 1.0).unwrap();
    let spec = manufactured_spec();
    let ops = spec.spatial_operators(&mesh).unwrap();
    let f = sample_source(&mesh, &grid, manufactured_source);
    let sol = solve_forward(&mesh, &grid, &ops, &spec, &f).unwrap();
    let exact = sample_source(&mesh, &grid, manufactured_exact);
    sol.states
        .iter()
        .zip(&exact)
        .map(|(c, e)| {
            let d: Vec<f64> = c.iter().zip(e).map(|(a, b)| a - b).collect();
            ops.mass.bilinear(&d, &d).sqrt()
        })
        .fold(0.0, f64::max)
}

/// Least-squares slope of `-log2 e` against the refinement level, for
/// errors on meshes that halve `h` and `τ` at each step.
pub fn convergence_slope(errors: &[f64]) -> f64 {
    let n = errors.len() as f64;
    let xs: Vec<f64> = (0..errors.len()).map(|i| i as f64).collect();
    let ys: Vec<f64> = errors.iter().map(|e| -e.log2()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Small configuration with data generated on the inversion mesh itself.
pub fn small_config(cells: usize, steps: usize) -> RunConfig {
    RunConfig {
        cells,
        steps,
        coarse_cells: cells,
        coarse_steps: steps,
        data_refine: 1,
        parts: [1, 1, 1],
        time_parts: 1,
        measurements: MeasurementGrid::Uniform(3),
        epsilon: 0.0,
        ..RunConfig::default()
    }
}

pub fn build(cfg: &RunConfig) -> (DataSet, Instance) {
    let data = generate_data(cfg).unwrap();
    let inst = assemble_instance(cfg, &data).unwrap();
    (data, inst)
}

pub fn temporal(steps: usize) -> stkkt::fem::TemporalOperators {
    assemble_temporal(&TimeGrid::build(steps, 1.0).unwrap())
}

pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

/// Deterministic pseudo-random vector without pulling in an RNG.
pub fn pseudo_random(n: usize, seed: u64) -> Vec<f64> {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (0..n)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect()
}

/// Dense KKT matrix in the variable-major layout `(C^0..C^M, G^0..G^M,
/// f^0..f^M)`, written block by block from the block formulas using only
/// the spatial matrices, the measurement diagonal and hat-function integrals.
pub fn variable_major_oracle(inst: &Instance) -> stkkt::linalg::DenseMatrix {
    use stkkt::fem::RegKind;
    let n = inst.mesh.num_nodes();
    let levels = inst.grid.levels();
    let steps = levels - 1;
    let tau = inst.grid.tau();
    let ops = &inst.spatial;
    let b3 = &inst.measurements.diag;
    let reg = &inst.reg;
    let mut f = stkkt::linalg::DenseMatrix::zeros(3 * n * levels, 3 * n * levels);
    let at = |var: usize, level: usize, node: usize| (var * levels + level) * n + node;

    let b = |i: usize, j: usize| ops.mass.get(i, j);
    let a = |i: usize, j: usize| ops.stiffness.get(i, j);
    let e = |i: usize, j: usize| ops.convection.get(i, j);
    let s = |i: usize, j: usize| match reg.kind {
        RegKind::H1H1 => ops.unit_stiffness.get(i, j),
        RegKind::H1L2 => ops.mass.get(i, j),
    };
    let mt = |m: usize, k: usize| match m.abs_diff(k) {
        0 if m == 0 || m == steps => tau / 3.0,
        0 => 2.0 * tau / 3.0,
        1 => tau / 6.0,
        _ => 0.0,
    };
    let lt = |m: usize, k: usize| match m.abs_diff(k) {
        0 if m == 0 || m == steps => 1.0 / tau,
        0 => 2.0 / tau,
        1 => -1.0 / tau,
        _ => 0.0,
    };

    for lvl in 0..levels {
        for i in 0..n {
            let dir = inst.mesh.is_dirichlet(i);
            // BC rows
            let r = at(0, lvl, i);
            if lvl == 0 || dir {
                f.set(r, at(0, lvl, i), 1.0);
            } else {
                for j in 0..n {
                    // A1 and A2 with the convection term transposed for +v·∇C.
                    let t = a(i, j) + e(j, i);
                    f.set(r, at(0, lvl, j), b(i, j) + 0.5 * tau * t);
                    f.set(r, at(0, lvl - 1, j), -b(i, j) + 0.5 * tau * t);
                    f.set(r, at(2, lvl, j), -0.5 * tau * b(i, j));
                    f.set(r, at(2, lvl - 1, j), -0.5 * tau * b(i, j));
                }
            }
            // BG rows
            let r = at(1, lvl, i);
            if lvl == steps || dir {
                f.set(r, at(1, lvl, i), 1.0);
            } else {
                for j in 0..n {
                    let t = a(i, j) + e(i, j);
                    f.set(r, at(1, lvl, j), b(i, j) + 0.5 * tau * t);
                    f.set(r, at(1, lvl + 1, j), -b(i, j) + 0.5 * tau * t);
                }
                f.set(r, at(0, lvl, i), 0.5 * tau * b3[i]);
                f.set(r, at(0, lvl + 1, i), 0.5 * tau * b3[i]);
            }
            // Bf rows
            let r = at(2, lvl, i);
            for k in 0..levels {
                for j in 0..n {
                    f.add(r, at(1, k, j), -mt(lvl, k) * b(i, j));
                    f.add(
                        r,
                        at(2, k, j),
                        reg.beta1 * lt(lvl, k) * b(i, j) + reg.beta2 * mt(lvl, k) * s(i, j),
                    );
                }
            }
        }
    }
    f
}
