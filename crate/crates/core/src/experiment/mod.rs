//! End-to-end experiments: synthetic data, inversion, error metrics, sweeps.
//!
//! Data are produced on a mesh `data_refine` times finer in space and time
//! than the inversion mesh, sampled at the measurement nodes, perturbed and
//! averaged over time intervals. The inversion assembles the KKT system on
//! the inversion mesh and solves it with one-level Schwarz + GMRES or
//! two-level Schwarz + fGMRES.
//!
//! The reconstruction error is the relative discrete space-time L2 norm
//! `‖f_h − I f‖ / ‖I f‖` with `‖g‖² = Σ_{m,n} Mt[m,n] g^mᵀ B g^n`, where `I f`
//! is the nodal interpolant of the true source.

pub mod config;
pub mod source;
pub mod vtk;

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

pub use config::{MeasurementGrid, RunConfig};
pub use source::SourceSpec;
pub use vtk::{export_vtk, read_vtk_scalars, save_slice_csv, write_slice_csv, write_vtk};

use crate::fem::{
    assemble_temporal, build_b3, uniform_points, Measurements, RegularizationSpec, SpatialOperators, TemporalOperators,
};
use crate::forward::{
    generate_observations, pointwise_samples, sample_source, solve_forward, ObservationSet, ProblemSpec,
};
use crate::kkt::{
    assemble_kkt, assemble_kkt_matrix, evaluate_objective, extract_solution, KktInputs, KktSolution, KktSystem,
};
use crate::linalg::{fgmres, gmres, KrylovConfig, SolveReport};
use crate::mesh::{SpaceTimeDecomposition, SpatialMesh, TimeGrid};
use crate::schwarz::{CoarseSolver, OneLevelSchwarz, Transfer, TwoLevelSchwarz};
use crate::{par, Error, Result};

/// Observations together with the measurement layout on the inversion mesh.
#[derive(Clone, Debug)]
pub struct DataSet {
    pub observations: ObservationSet,
    pub measurements: Measurements,
    /// Measurement locations before snapping; reused for the coarse level.
    pub points: Vec<[f64; 3]>,
    pub forward_iterations: usize,
}

pub fn measurement_points(grid: MeasurementGrid, mesh: &SpatialMesh) -> Vec<[f64; 3]> {
    match grid {
        MeasurementGrid::Uniform(s) => uniform_points(s),
        MeasurementGrid::AllNodes => mesh.nodes().to_vec(),
    }
}

fn problem_spec(cfg: &RunConfig) -> ProblemSpec {
    ProblemSpec {
        t_final: cfg.t_final,
        ..ProblemSpec::standard()
    }
}

/// Generate (or load) the observations for `cfg`.
pub fn generate_data(cfg: &RunConfig) -> Result<DataSet> {
    cfg.validate()?;
    let mesh = SpatialMesh::build(cfg.cells)?;
    if let Some(path) = &cfg.observations {
        let observations = ObservationSet::load_csv(path)?;
        if observations.steps() != cfg.steps {
            return Err(Error::InvalidArgument(format!(
                "{} holds {} intervals but steps = {}",
                path.display(),
                observations.steps(),
                cfg.steps
            )));
        }
        let measurements = Measurements::from_nodes(mesh.num_nodes(), &observations.nodes)?;
        let points = observations.coords.clone();
        return Ok(DataSet {
            observations,
            measurements,
            points,
            forward_iterations: 0,
        });
    }

    let points = measurement_points(cfg.measurements, &mesh);
    let measurements = build_b3(&mesh, &points)?;

    let r = cfg.data_refine;
    let dmesh = SpatialMesh::build(cfg.cells * r)?;
    let dgrid = TimeGrid::build(cfg.steps * r, cfg.t_final)?;
    let spec = problem_spec(cfg);
    let ops = spec.spatial_operators(&dmesh)?;
    let src = cfg.source.clone();
    let f = sample_source(&dmesh, &dgrid, move |x, t| src.eval(x, t));
    let sol = solve_forward(&dmesh, &dgrid, &ops, &spec, &f)?;

    let fine_nodes: Vec<usize> = measurements
        .nodes
        .iter()
        .map(|&j| {
            let [i, jj, k] = mesh.node_ijk(j);
            dmesh.node_index(r * i, r * jj, r * k)
        })
        .collect();
    let samples = pointwise_samples(&sol.states, &fine_nodes, r)?;
    let coords = measurements.nodes.iter().map(|&j| mesh.nodes()[j]).collect();
    let observations = generate_observations(samples, measurements.nodes.clone(), coords, cfg.epsilon, cfg.seed)?;
    Ok(DataSet {
        observations,
        measurements,
        points,
        forward_iterations: sol.iterations,
    })
}

/// Assembled inversion problem on one mesh level.
pub struct Instance {
    pub mesh: SpatialMesh,
    pub grid: TimeGrid,
    pub spatial: SpatialOperators,
    pub temporal: TemporalOperators,
    pub reg: RegularizationSpec,
    pub measurements: Measurements,
    pub spec: ProblemSpec,
    pub system: KktSystem,
}

impl Instance {
    pub fn inputs(&self) -> KktInputs<'_> {
        KktInputs {
            mesh: &self.mesh,
            grid: &self.grid,
            spatial: &self.spatial,
            temporal: &self.temporal,
            reg: &self.reg,
            measurements: &self.measurements,
            spec: &self.spec,
        }
    }
}

pub fn assemble_instance(cfg: &RunConfig, data: &DataSet) -> Result<Instance> {
    let mesh = SpatialMesh::build(cfg.cells)?;
    let grid = TimeGrid::build(cfg.steps, cfg.t_final)?;
    let spec = problem_spec(cfg);
    let spatial = spec.spatial_operators(&mesh)?;
    let temporal = assemble_temporal(&grid);
    let reg = cfg.regularization()?;
    let measurements = data.measurements.clone();
    let system = assemble_kkt(
        &KktInputs {
            mesh: &mesh,
            grid: &grid,
            spatial: &spatial,
            temporal: &temporal,
            reg: &reg,
            measurements: &measurements,
            spec: &spec,
        },
        &data.observations,
    )?;
    Ok(Instance {
        mesh,
        grid,
        spatial,
        temporal,
        reg,
        measurements,
        spec,
        system,
    })
}

/// Assemble only the KKT matrix on the coarse mesh of `cfg`, with
/// measurements snapped from the same points.
pub fn assemble_coarse_matrix(
    cfg: &RunConfig,
    points: &[[f64; 3]],
) -> Result<(SpatialMesh, TimeGrid, crate::linalg::BlockSparseMatrix)> {
    let mesh = SpatialMesh::build(cfg.coarse_cells)?;
    let grid = TimeGrid::build(cfg.coarse_steps, cfg.t_final)?;
    let spec = problem_spec(cfg);
    let spatial = spec.spatial_operators(&mesh)?;
    let temporal = assemble_temporal(&grid);
    let reg = cfg.regularization()?;
    let measurements = build_b3(&mesh, points)?;
    let matrix = assemble_kkt_matrix(&KktInputs {
        mesh: &mesh,
        grid: &grid,
        spatial: &spatial,
        temporal: &temporal,
        reg: &reg,
        measurements: &measurements,
        spec: &spec,
    })?;
    Ok((mesh, grid, matrix))
}

/// Wall-clock seconds of each pipeline stage.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Timings {
    pub data: f64,
    pub assembly: f64,
    pub setup: f64,
    pub solve: f64,
}

impl Timings {
    pub fn total(&self) -> f64 {
        self.data + self.assembly + self.setup + self.solve
    }
}

/// Build the preconditioner selected by `cfg` and solve the KKT system.
/// Returns the solution, the Krylov report and (setup, solve) seconds.
pub fn solve_instance(
    cfg: &RunConfig,
    inst: &Instance,
    points: &[[f64; 3]],
) -> Result<(Vec<f64>, SolveReport, f64, f64)> {
    cfg.validate()?;
    let start = Instant::now();
    let matrix = &inst.system.matrix;
    let dec = SpaceTimeDecomposition::build(&inst.mesh, &inst.grid, cfg.parts, cfg.time_parts, cfg.overlap)?;
    let one = OneLevelSchwarz::build(matrix, &dec, cfg.local_solver())?;
    let krylov = KrylovConfig {
        restart: cfg.restart_length(),
        rtol: cfg.rtol,
        max_iters: cfg.max_iters,
        flexible: cfg.levels == 2,
    };
    if cfg.levels == 1 {
        let setup = start.elapsed().as_secs_f64();
        let t = Instant::now();
        let (x, rep) = gmres(matrix, &one, &inst.system.rhs, &krylov, None)?;
        return Ok((x, rep, setup, t.elapsed().as_secs_f64()));
    }

    let (cmesh, cgrid, cmatrix) = assemble_coarse_matrix(cfg, points)?;
    let cdec =
        SpaceTimeDecomposition::build(&cmesh, &cgrid, cfg.parts, cfg.time_parts, cfg.coarse_overlap)?.into_coarse();
    let cpc = OneLevelSchwarz::build(&cmatrix, &cdec, cfg.local_solver())?;
    let coarse = CoarseSolver::iterative(
        cmatrix,
        cpc,
        KrylovConfig {
            restart: 50,
            rtol: cfg.coarse_rtol,
            max_iters: cfg.coarse_max_iters,
            flexible: false,
        },
    );
    let transfer = Transfer::new(
        cfg.cells,
        cfg.steps,
        cfg.coarse_cells,
        cfg.coarse_steps,
        cfg.restriction,
    )?;
    let two = TwoLevelSchwarz::new(matrix, one, coarse, transfer)?;
    let setup = start.elapsed().as_secs_f64();
    let t = Instant::now();
    let (x, rep) = fgmres(matrix, &two, &inst.system.rhs, &krylov, None)?;
    Ok((x, rep, setup, t.elapsed().as_secs_f64()))
}

/// `sqrt(Σ_{m,n} Mt[m,n] g^mᵀ B g^n)`.
pub fn space_time_norm(g: &[Vec<f64>], mass: &crate::linalg::CsrMatrix, temporal: &TemporalOperators) -> f64 {
    let levels = g.len();
    let bg: Vec<Vec<f64>> = g.iter().map(|v| mass.mul(v)).collect();
    let mut s = 0.0;
    for m in 0..levels {
        for n in m.saturating_sub(1)..(m + 2).min(levels) {
            let d: f64 = g[n].iter().zip(&bg[m]).map(|(a, b)| a * b).sum();
            s += temporal.mt(m, n) * d;
        }
    }
    s.max(0.0).sqrt()
}

/// Relative space-time L2 error of `approx` against `exact`.
pub fn relative_error(
    approx: &[Vec<f64>],
    exact: &[Vec<f64>],
    mass: &crate::linalg::CsrMatrix,
    temporal: &TemporalOperators,
) -> f64 {
    let diff: Vec<Vec<f64>> = approx
        .iter()
        .zip(exact)
        .map(|(a, e)| a.iter().zip(e).map(|(x, y)| x - y).collect())
        .collect();
    let denom = space_time_norm(exact, mass, temporal);
    let num = space_time_norm(&diff, mass, temporal);
    if denom > 0.0 {
        num / denom
    } else {
        num
    }
}

#[derive(Clone, Debug)]
pub struct ReconstructionReport {
    pub iterations: usize,
    pub converged: bool,
    pub solve: SolveReport,
    pub timings: Timings,
    /// Relative space-time L2 error of `f`.
    pub relative_error: f64,
    /// Relative spatial L2 error of `f` at every time level.
    pub snapshot_errors: Vec<f64>,
    pub objective: f64,
    pub dofs: usize,
    pub subdomains: usize,
}

impl ReconstructionReport {
    /// `key = value` summary lines.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "dofs = {}", self.dofs);
        let _ = writeln!(s, "subdomains = {}", self.subdomains);
        let _ = writeln!(s, "iterations = {}", self.iterations);
        let _ = writeln!(s, "converged = {}", self.converged);
        let _ = writeln!(s, "relative_residual = {:.3e}", self.solve.relative_residual());
        let _ = writeln!(s, "relative_error = {:.6e}", self.relative_error);
        let _ = writeln!(s, "objective = {:.6e}", self.objective);
        let _ = writeln!(s, "time_data = {:.3}", self.timings.data);
        let _ = writeln!(s, "time_assembly = {:.3}", self.timings.assembly);
        let _ = writeln!(s, "time_setup = {:.3}", self.timings.setup);
        let _ = writeln!(s, "time_solve = {:.3}", self.timings.solve);
        s
    }
}

pub struct Inversion {
    pub report: ReconstructionReport,
    pub solution: KktSolution,
    pub instance: Instance,
    pub data: DataSet,
}

impl Inversion {
    /// Nodal interpolant of the true source on the inversion mesh.
    pub fn true_source(&self, source: &SourceSpec) -> Vec<Vec<f64>> {
        let src = source.clone();
        sample_source(&self.instance.mesh, &self.instance.grid, move |x, t| src.eval(x, t))
    }
}

/// Data generation, assembly, preconditioned solve and error metrics. A solve
/// that stops before the tolerance is returned with `converged = false`.
pub fn run_inversion(cfg: &RunConfig) -> Result<Inversion> {
    cfg.validate()?;
    par::with_workers(cfg.workers, || {
        let t = Instant::now();
        let data = generate_data(cfg)?;
        let data_time = t.elapsed().as_secs_f64();
        run_with_data(cfg, data, data_time)
    })
}

fn run_with_data(cfg: &RunConfig, data: DataSet, data_time: f64) -> Result<Inversion> {
    let t = Instant::now();
    let instance = assemble_instance(cfg, &data)?;
    let assembly = t.elapsed().as_secs_f64();
    solve_prepared(cfg, data, instance, data_time, assembly)
}

fn solve_prepared(
    cfg: &RunConfig,
    data: DataSet,
    instance: Instance,
    data_time: f64,
    assembly: f64,
) -> Result<Inversion> {
    let (x, solve, setup, solve_time) = solve_instance(cfg, &instance, &data.points)?;
    let solution = extract_solution(&instance.system.dofs, &x)?;
    let src = cfg.source.clone();
    let exact = sample_source(&instance.mesh, &instance.grid, move |x, t| src.eval(x, t));
    let mass = &instance.spatial.mass;
    let relative_error = relative_error(&solution.f, &exact, mass, &instance.temporal);
    let snapshot_errors = solution
        .f
        .iter()
        .zip(&exact)
        .map(|(a, e)| {
            let d: Vec<f64> = a.iter().zip(e).map(|(x, y)| x - y).collect();
            let den = mass.bilinear(e, e).max(0.0).sqrt();
            let num = mass.bilinear(&d, &d).max(0.0).sqrt();
            if den > 0.0 {
                num / den
            } else {
                num
            }
        })
        .collect();
    let objective = evaluate_objective(
        &solution.c,
        &solution.f,
        &data.observations,
        instance.grid.tau(),
        &instance.spatial,
        &instance.temporal,
        &instance.reg,
    )?;
    let report = ReconstructionReport {
        iterations: solve.iterations,
        converged: solve.converged,
        timings: Timings {
            data: data_time,
            assembly,
            setup,
            solve: solve_time,
        },
        solve,
        relative_error,
        snapshot_errors,
        objective,
        dofs: instance.system.dofs.dim(),
        subdomains: cfg.num_subdomains(),
    };
    Ok(Inversion {
        report,
        solution,
        instance,
        data,
    })
}

/// Parameter varied by [`sweep`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    IluK,
    Overlap,
    Levels,
    /// Values `px,py,pz,pt`.
    Subdomains,
    Epsilon,
    /// Values `h1h1` or `h1l2`, optionally `kind:beta1:beta2`.
    RegKind,
}

impl SweepAxis {
    pub fn key(&self) -> &'static str {
        match self {
            SweepAxis::IluK => "ilu_k",
            SweepAxis::Overlap => "overlap",
            SweepAxis::Levels => "levels",
            SweepAxis::Subdomains => "subdomains",
            SweepAxis::Epsilon => "epsilon",
            SweepAxis::RegKind => "reg",
        }
    }

    /// Whether changing the value changes the data or the KKT system.
    pub fn changes_system(&self) -> bool {
        matches!(self, SweepAxis::Epsilon | SweepAxis::RegKind)
    }

    pub fn apply(&self, cfg: &mut RunConfig, value: &str) -> Result<()> {
        match self {
            SweepAxis::RegKind => {
                let mut it = value.split(':');
                cfg.set("reg", it.next().unwrap_or(""))?;
                if let (Some(b1), Some(b2)) = (it.next(), it.next()) {
                    cfg.set("beta1", b1)?;
                    cfg.set("beta2", b2)?;
                }
                Ok(())
            }
            SweepAxis::Subdomains => cfg.set("subdomains", value),
            _ => cfg.set(self.key(), value),
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ilu_k" | "ilu" => Ok(SweepAxis::IluK),
            "overlap" => Ok(SweepAxis::Overlap),
            "levels" => Ok(SweepAxis::Levels),
            "subdomains" => Ok(SweepAxis::Subdomains),
            "epsilon" | "noise" => Ok(SweepAxis::Epsilon),
            "reg" | "reg_kind" => Ok(SweepAxis::RegKind),
            other => Err(Error::InvalidArgument(format!("unknown sweep axis `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub iterations: Option<usize>,
    pub converged: bool,
    pub wall_time: f64,
    pub relative_error: Option<f64>,
    pub message: Option<String>,
}

impl SweepRow {
    fn failed(value: &str, wall_time: f64, e: &Error) -> Self {
        SweepRow {
            value: value.to_string(),
            iterations: None,
            converged: false,
            wall_time,
            relative_error: None,
            message: Some(e.to_string()),
        }
    }
}

/// Run the template once per value. Failures are recorded and the sweep
/// continues. Solver-only axes reuse the data and the assembled system.
pub fn sweep(template: &RunConfig, axis: SweepAxis, values: &[String]) -> Result<Vec<SweepRow>> {
    template.validate()?;
    par::with_workers(template.workers, || {
        let shared = if axis.changes_system() {
            None
        } else {
            let data = generate_data(template)?;
            let inst = assemble_instance(template, &data)?;
            Some((data, inst))
        };
        let mut rows = Vec::with_capacity(values.len());
        for value in values {
            let t = Instant::now();
            let mut cfg = template.clone();
            if let Err(e) = axis.apply(&mut cfg, value).and_then(|_| cfg.validate()) {
                rows.push(SweepRow::failed(value, 0.0, &e));
                continue;
            }
            let outcome = match &shared {
                Some((data, inst)) => solve_instance(&cfg, inst, &data.points).and_then(|(x, rep, _, _)| {
                    let sol = extract_solution(&inst.system.dofs, &x)?;
                    let src = cfg.source.clone();
                    let exact = sample_source(&inst.mesh, &inst.grid, move |x, t| src.eval(x, t));
                    Ok((rep, relative_error(&sol.f, &exact, &inst.spatial.mass, &inst.temporal)))
                }),
                None => run_inversion(&cfg).map(|inv| (inv.report.solve, inv.report.relative_error)),
            };
            let wall = t.elapsed().as_secs_f64();
            rows.push(match outcome {
                Ok((rep, err)) => SweepRow {
                    value: value.clone(),
                    iterations: Some(rep.iterations),
                    converged: rep.converged,
                    wall_time: wall,
                    relative_error: Some(err),
                    message: None,
                },
                Err(e) => SweepRow::failed(value, wall, &e),
            });
        }
        Ok(rows)
    })
}

/// CSV with columns `axis,value,iterations,converged,wall_time,relative_error,message`.
pub fn write_sweep_csv<W: Write>(axis: SweepAxis, rows: &[SweepRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "axis,value,iterations,converged,wall_time,relative_error,message")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{:.6},{},{}",
            axis.key(),
            r.value.replace(',', ";"),
            r.iterations.map_or(String::new(), |i| i.to_string()),
            r.converged,
            r.wall_time,
            r.relative_error.map_or(String::new(), |e| format!("{e:.6e}")),
            r.message.as_deref().unwrap_or("").replace([',', '\n'], " "),
        )?;
    }
    Ok(())
}

pub fn save_sweep_csv(axis: SweepAxis, rows: &[SweepRow], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_sweep_csv(axis, rows, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}
