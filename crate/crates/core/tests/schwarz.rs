mod common;

use common::*;
use stkkt::experiment::assemble_coarse_matrix;
use stkkt::linalg::{
    dense_lu_solve, fgmres, gmres, BlockSparseMatrix, DenseLu, KrylovConfig, LinearOperator, Preconditioner, ZERO_BLOCK,
};
use stkkt::mesh::{SpaceTimeDecomposition, SpatialMesh, TimeGrid};
use stkkt::par;
use stkkt::schwarz::{CoarseSolver, LocalSolver, OneLevelSchwarz, Restriction, Transfer, TwoLevelSchwarz};
use stkkt::Error;

fn decomposition(
    inst: &stkkt::experiment::Instance,
    parts: [usize; 3],
    tp: usize,
    delta: usize,
) -> SpaceTimeDecomposition {
    SpaceTimeDecomposition::build(&inst.mesh, &inst.grid, parts, tp, delta).unwrap()
}

fn apply(pc: &impl Preconditioner, x: &[f64]) -> Vec<f64> {
    let mut z = vec![0.0; x.len()];
    pc.apply(x, &mut z);
    z
}

#[test]
fn single_subdomain_exact_solve_is_the_inverse() {
    for (cells, steps) in [(2, 4), (4, 4)] {
        let mut cfg = small_config(cells, steps);
        cfg.epsilon = 0.01;
        let (_, inst) = build(&cfg);
        let a = &inst.system.matrix;
        let pc = OneLevelSchwarz::build(a, &decomposition(&inst, [1, 1, 1], 1, 1), LocalSolver::Exact).unwrap();
        let r = pseudo_random(a.dim(), 4);
        let z = apply(&pc, &r);
        let want = dense_lu_solve(a, &r).unwrap();
        assert!(rel_diff(&z, &want) <= 1e-10);
        let (_, rep) = gmres(a, &pc, &inst.system.rhs, &KrylovConfig::gmres(), None).unwrap();
        assert!(
            rep.converged && rep.iterations <= 2,
            "{cells}³: {} iterations",
            rep.iterations
        );
    }
}

/// Keep only couplings inside each owned set.
fn owned_block_diagonal(a: &BlockSparseMatrix, dec: &SpaceTimeDecomposition) -> BlockSparseMatrix {
    let mut owner = vec![0usize; a.block_rows()];
    for sd in dec.subdomains() {
        for b in dec.owned_blocks(sd) {
            owner[b] = sd.id;
        }
    }
    let mut out = a.clone();
    for i in 0..out.block_rows() {
        let (cols, blocks) = out.row_mut(i);
        let cols = cols.to_vec();
        for (c, blk) in cols.iter().zip(blocks.iter_mut()) {
            if owner[*c] != owner[i] {
                *blk = ZERO_BLOCK;
            }
        }
    }
    out
}

#[test]
fn aligned_block_diagonal_operator_is_inverted_exactly() {
    let (_, inst) = build(&small_config(4, 4));
    let dec = decomposition(&inst, [2, 2, 1], 2, 0);
    let a = owned_block_diagonal(&inst.system.matrix, &dec);
    let pc = OneLevelSchwarz::build(&a, &dec, LocalSolver::Exact).unwrap();
    let x = pseudo_random(a.dim(), 8);
    let mut ax = vec![0.0; x.len()];
    a.apply(&x, &mut ax);
    assert!(rel_diff(&apply(&pc, &ax), &x) <= 1e-10);
    let b = pseudo_random(a.dim(), 9);
    let (_, rep) = gmres(&a, &pc, &b, &KrylovConfig::gmres(), None).unwrap();
    assert!(rep.converged && rep.iterations <= 2);
}

#[test]
fn zero_overlap_equals_block_jacobi() {
    let (_, inst) = build(&small_config(4, 4));
    let a = &inst.system.matrix;
    let dec = decomposition(&inst, [2, 1, 2], 2, 0);
    let pc = OneLevelSchwarz::build(a, &dec, LocalSolver::Exact).unwrap();
    let r = pseudo_random(a.dim(), 10);
    let z = apply(&pc, &r);

    let dense = a.to_dense();
    let mut want = vec![0.0; r.len()];
    for sd in dec.subdomains() {
        let idx: Vec<usize> = dec
            .owned_blocks(sd)
            .iter()
            .flat_map(|&b| [3 * b, 3 * b + 1, 3 * b + 2])
            .collect();
        let mut local = stkkt::linalg::DenseMatrix::zeros(idx.len(), idx.len());
        for (p, &i) in idx.iter().enumerate() {
            for (q, &j) in idx.iter().enumerate() {
                local.set(p, q, dense.get(i, j));
            }
        }
        let rhs: Vec<f64> = idx.iter().map(|&i| r[i]).collect();
        let x = DenseLu::factor(local).unwrap().solve(&rhs);
        for (p, &i) in idx.iter().enumerate() {
            want[i] = x[p];
        }
    }
    assert!(rel_diff(&z, &want) <= 1e-12);
}

#[test]
fn local_problems_drop_outside_couplings() {
    let (_, inst) = build(&small_config(4, 4));
    let a = &inst.system.matrix;
    let dec = decomposition(&inst, [2, 2, 2], 2, 1);
    let dense = a.to_dense();
    let pc = OneLevelSchwarz::build(a, &dec, LocalSolver::Exact).unwrap();
    let r = pseudo_random(a.dim(), 12);
    let z = apply(&pc, &r);
    let mut want = vec![f64::NAN; r.len()];
    for sd in dec.subdomains() {
        let ext = dec.extended_blocks(sd);
        assert_eq!(pc.extended_blocks(sd.id), ext.as_slice());
        let local = a.principal_submatrix(&ext).unwrap();
        assert_eq!(local.dim(), 3 * ext.len());
        // Entrywise: F_h with every coupling to outside unknowns removed.
        let idx: Vec<usize> = ext.iter().flat_map(|&b| [3 * b, 3 * b + 1, 3 * b + 2]).collect();
        let ld = local.to_dense();
        let mut zeroed = stkkt::linalg::DenseMatrix::zeros(idx.len(), idx.len());
        for (p, &i) in idx.iter().enumerate() {
            for (q, &j) in idx.iter().enumerate() {
                assert_eq!(ld.get(p, q), dense.get(i, j));
                zeroed.set(p, q, dense.get(i, j));
            }
        }
        let rhs: Vec<f64> = idx.iter().map(|&i| r[i]).collect();
        let x = DenseLu::factor(zeroed).unwrap().solve(&rhs);
        for b in dec.owned_blocks(sd) {
            let p = ext.binary_search(&b).unwrap();
            for c in 0..3 {
                want[3 * b + c] = x[3 * p + c];
            }
        }
    }
    assert!(want.iter().all(|v| v.is_finite()));
    assert!(rel_diff(&z, &want) <= 1e-12);
}

#[test]
fn every_unknown_written_once() {
    let (_, inst) = build(&small_config(4, 4));
    for (parts, tp, delta) in [
        ([1, 1, 1], 1, 0),
        ([2, 2, 2], 2, 1),
        ([3, 1, 2], 3, 2),
        ([4, 4, 4], 4, 1),
    ] {
        let dec = decomposition(&inst, parts, tp, delta);
        let pc = OneLevelSchwarz::build(&inst.system.matrix, &dec, LocalSolver::Ilu(0)).unwrap();
        assert!(pc.write_counts().iter().all(|&c| c == 1));
    }
}

#[test]
fn application_is_linear_and_deterministic() {
    let (_, inst) = build(&small_config(4, 4));
    let a = &inst.system.matrix;
    let dec = decomposition(&inst, [2, 2, 2], 2, 1);
    let pc = OneLevelSchwarz::build(a, &dec, LocalSolver::Ilu(1)).unwrap();
    let x = pseudo_random(a.dim(), 1);
    let y = pseudo_random(a.dim(), 2);
    let (alpha, beta) = (1.7, -0.4);
    let combo: Vec<f64> = x.iter().zip(&y).map(|(p, q)| alpha * p + beta * q).collect();
    let (zx, zy, zc) = (apply(&pc, &x), apply(&pc, &y), apply(&pc, &combo));
    let scale = zc.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 0..x.len() {
        assert!((zc[i] - alpha * zx[i] - beta * zy[i]).abs() <= 1e-13 * scale.max(1.0) * 10.0);
    }
    assert!(apply(&pc, &vec![0.0; a.dim()]).iter().all(|&v| v == 0.0));

    let one = par::with_workers(1, || {
        let pc = OneLevelSchwarz::build(a, &dec, LocalSolver::Ilu(1)).unwrap();
        apply(&pc, &x)
    });
    let many = par::with_workers(4, || {
        let pc = OneLevelSchwarz::build(a, &dec, LocalSolver::Ilu(1)).unwrap();
        apply(&pc, &x)
    });
    assert_eq!(one, many);
    assert_eq!(one, zx);
}

#[test]
fn singular_local_block_names_subdomain() {
    let (_, inst) = build(&small_config(2, 2));
    let mut a = inst.system.matrix.clone();
    let target = a.block_rows() - 1;
    let (cols, blocks) = a.row_mut(target);
    let d = cols.binary_search(&target).unwrap();
    blocks[d] = ZERO_BLOCK;
    let dec = decomposition(&inst, [1, 1, 1], 2, 0);
    match OneLevelSchwarz::build(&a, &dec, LocalSolver::Ilu(0)) {
        Err(Error::Subdomain { subdomain, .. }) => assert_eq!(subdomain, 1),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("singular block accepted"),
    }
}

#[test]
fn exact_solver_refuses_large_subdomains() {
    let (_, inst) = build(&small_config(8, 4));
    let dec = decomposition(&inst, [1, 1, 1], 1, 0);
    assert!(matches!(
        OneLevelSchwarz::build(&inst.system.matrix, &dec, LocalSolver::Exact),
        Err(Error::Subdomain { .. })
    ));
}

fn sample_coarse(cells: usize, steps: usize, f: impl Fn([f64; 3], f64) -> f64) -> Vec<f64> {
    let mesh = SpatialMesh::build(cells).unwrap();
    let grid = TimeGrid::build(steps, 1.0).unwrap();
    let mut v = Vec::new();
    for n in 0..grid.levels() {
        for x in mesh.nodes() {
            for c in 0..3 {
                v.push(f(*x, grid.time(n)) * (c + 1) as f64);
            }
        }
    }
    v
}

#[test]
fn transfers_roundtrip_and_reproduce_multilinear_fields() {
    let t = Transfer::new(8, 6, 4, 3, Restriction::Injection).unwrap();
    let constant = vec![2.5; t.coarse_dim()];
    assert_eq!(t.roundtrip(&constant), constant);
    let x1 = sample_coarse(4, 3, |x, _| x[0]);
    assert_eq!(t.roundtrip(&x1), x1);
    let random = pseudo_random(t.coarse_dim(), 3);
    assert_eq!(t.roundtrip(&random), random);

    let field = |x: [f64; 3], s: f64| (1.0 + x[0]) * (2.0 - x[1]) * (x[2] + 0.5) * (1.0 + 3.0 * s);
    let coarse = sample_coarse(4, 3, field);
    let mut fine = vec![0.0; t.fine_dim()];
    t.prolong(&coarse, &mut fine);
    let want = sample_coarse(8, 6, field);
    for (a, b) in fine.iter().zip(&want) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
}

#[test]
fn transpose_restriction_is_adjoint_of_prolongation() {
    let t = Transfer::new(6, 4, 2, 2, Restriction::Transpose).unwrap();
    let xf = pseudo_random(t.fine_dim(), 1);
    let yc = pseudo_random(t.coarse_dim(), 2);
    let mut rx = vec![0.0; t.coarse_dim()];
    t.restrict(&xf, &mut rx);
    let mut py = vec![0.0; t.fine_dim()];
    t.prolong(&yc, &mut py);
    let lhs: f64 = rx.iter().zip(&yc).map(|(a, b)| a * b).sum();
    let rhs: f64 = xf.iter().zip(&py).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
}

#[test]
fn non_nested_transfer_rejected() {
    assert!(Transfer::new(8, 8, 3, 4, Restriction::Injection).is_err());
    assert!(Transfer::new(8, 8, 4, 3, Restriction::Injection).is_err());
}

#[test]
fn two_level_with_identical_levels_is_exact() {
    let mut cfg = small_config(2, 4);
    cfg.epsilon = 0.01;
    let (_, inst) = build(&cfg);
    let a = &inst.system.matrix;
    let fine_pc = OneLevelSchwarz::build(a, &decomposition(&inst, [2, 2, 2], 2, 1), LocalSolver::Ilu(0)).unwrap();
    let coarse = CoarseSolver::exact(a).unwrap();
    let transfer = Transfer::new(2, 4, 2, 4, Restriction::Injection).unwrap();
    let two = TwoLevelSchwarz::new(a, fine_pc, coarse, transfer).unwrap();
    let (_, rep) = fgmres(a, &two, &inst.system.rhs, &KrylovConfig::fgmres(), None).unwrap();
    assert!(rep.converged && rep.iterations <= 2, "{} iterations", rep.iterations);
}

#[test]
fn two_level_rejects_mismatched_levels() {
    let (_, inst) = build(&small_config(2, 4));
    let a = &inst.system.matrix;
    let pc = || OneLevelSchwarz::build(a, &decomposition(&inst, [1, 1, 1], 1, 0), LocalSolver::Ilu(0)).unwrap();
    let wrong_fine = Transfer::new(4, 4, 2, 4, Restriction::Injection).unwrap();
    assert!(TwoLevelSchwarz::new(a, pc(), CoarseSolver::exact(a).unwrap(), wrong_fine).is_err());
    let (_, small) = build(&small_config(1, 2));
    let coarse = CoarseSolver::exact(&small.system.matrix).unwrap();
    let t = Transfer::new(2, 4, 2, 4, Restriction::Injection).unwrap();
    assert!(TwoLevelSchwarz::new(a, pc(), coarse, t).is_err());
}

/// A residual whose error lies in the coarse space, `x = F_h P v`, is
/// reduced by the injected coarse correction.
#[test]
fn coarse_correction_reduces_coarse_space_residuals() {
    let mut cfg = small_config(8, 8);
    cfg.coarse_cells = 4;
    cfg.coarse_steps = 4;
    cfg.measurements = stkkt::experiment::MeasurementGrid::Uniform(7);
    let (data, inst) = build(&cfg);
    let a = &inst.system.matrix;
    let (_, _, cmatrix) = assemble_coarse_matrix(&cfg, &data.points).unwrap();
    let transfer = Transfer::new(8, 8, 4, 4, Restriction::Injection).unwrap();
    let mut pv = vec![0.0; transfer.fine_dim()];
    transfer.prolong(&pseudo_random(transfer.coarse_dim(), 5), &mut pv);
    let mut x = vec![0.0; pv.len()];
    a.apply(&pv, &mut x);

    let norm = |v: &[f64]| v.iter().map(|p| p * p).sum::<f64>().sqrt();
    let fine_pc = || OneLevelSchwarz::build(a, &decomposition(&inst, [2, 2, 2], 2, 1), LocalSolver::Ilu(0)).unwrap();
    let exact = CoarseSolver::exact(&cmatrix).unwrap();
    let iterative = CoarseSolver::iterative(
        cmatrix.clone(),
        OneLevelSchwarz::build(
            &cmatrix,
            &SpaceTimeDecomposition::build(
                &SpatialMesh::build(4).unwrap(),
                &TimeGrid::build(4, 1.0).unwrap(),
                [1, 1, 1],
                1,
                1,
            )
            .unwrap(),
            LocalSolver::Ilu(0),
        )
        .unwrap(),
        KrylovConfig::coarse(),
    );
    for coarse in [exact, iterative] {
        let two = TwoLevelSchwarz::new(a, fine_pc(), coarse, transfer.clone()).unwrap();
        let y = two.coarse_correction(&x);
        let mut fy = vec![0.0; y.len()];
        a.apply(&y, &mut fy);
        let res: Vec<f64> = x.iter().zip(&fy).map(|(p, q)| p - q).collect();
        assert!(norm(&res) < norm(&x), "‖x − F y‖ = {}, ‖x‖ = {}", norm(&res), norm(&x));
    }
}

#[test]
fn one_level_iterations_grow_with_subdomains() {
    let mut cfg = small_config(8, 8);
    cfg.measurements = stkkt::experiment::MeasurementGrid::Uniform(7);
    let (_, inst) = build(&cfg);
    let a = &inst.system.matrix;
    let mut its = Vec::new();
    for parts in [[1, 1, 1], [2, 2, 2], [4, 4, 4]] {
        let pc = OneLevelSchwarz::build(a, &decomposition(&inst, parts, 1, 1), LocalSolver::Ilu(0)).unwrap();
        let (_, rep) = gmres(a, &pc, &inst.system.rhs, &KrylovConfig::gmres(), None).unwrap();
        assert!(rep.converged);
        its.push(rep.iterations);
    }
    assert!(its.windows(2).all(|w| w[0] <= w[1]), "{its:?}");
}
