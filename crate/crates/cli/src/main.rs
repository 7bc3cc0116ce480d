use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use stkkt::experiment::{
    export_vtk, generate_data, run_inversion, save_slice_csv, save_sweep_csv, Inversion, RunConfig, SweepAxis,
};
use stkkt::Error;

/// Space-time KKT inversion of moving sources in 3D convection-diffusion.
#[derive(Parser)]
#[command(name = "stkkt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic observations and write them as CSV.
    Forward(Common),
    /// Run one inversion and write the solver report.
    Invert {
        #[command(flatten)]
        common: Common,
        /// Also dump F_h as `row col value` triplets and b one value per line.
        #[arg(long)]
        dump: bool,
    },
    /// Repeat the inversion over values of one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// ilu_k, overlap, levels, subdomains, epsilon or reg.
        #[arg(long)]
        axis: SweepAxis,
        /// Values to try, e.g. `0 1` or `1,1,1,1 2,2,2,1`.
        #[arg(required = true)]
        values: Vec<String>,
    },
    /// Run one inversion and write VTK snapshots of C, G, f plus f slices.
    Export {
        #[command(flatten)]
        common: Common,
        /// Slice planes `axis:coordinate`, e.g. `0:0.95`.
        #[arg(long = "slice", value_name = "AXIS:COORD")]
        slices: Vec<String>,
    },
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    source: Option<String>,
    #[arg(long)]
    cells: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    beta1: Option<String>,
    #[arg(long)]
    beta2: Option<String>,
    #[arg(long)]
    reg: Option<String>,
    #[arg(long)]
    ilu_k: Option<String>,
    #[arg(long)]
    overlap: Option<String>,
    #[arg(long)]
    levels: Option<String>,
    #[arg(long)]
    restart: Option<String>,
    #[arg(long)]
    rtol: Option<String>,
    /// `px,py,pz,pt`.
    #[arg(long)]
    subdomains: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    workers: Option<String>,
    #[arg(short, long)]
    output: Option<String>,
}

impl Common {
    /// Config file, then `--set` overrides, then dedicated flags.
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("override `{kv}` is not of the form key=value"))?;
            cfg.set(k, v)?;
        }
        let flags = [
            ("source", &self.source),
            ("cells", &self.cells),
            ("steps", &self.steps),
            ("beta1", &self.beta1),
            ("beta2", &self.beta2),
            ("reg", &self.reg),
            ("ilu_k", &self.ilu_k),
            ("overlap", &self.overlap),
            ("levels", &self.levels),
            ("restart", &self.restart),
            ("rtol", &self.rtol),
            ("subdomains", &self.subdomains),
            ("epsilon", &self.epsilon),
            ("seed", &self.seed),
            ("workers", &self.workers),
            ("output", &self.output),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Raised when a solve stops before reaching the tolerance.
#[derive(Debug)]
struct NotConverged(String);

impl std::fmt::Display for NotConverged {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NotConverged {}

fn output_dir(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.output).with_context(|| format!("creating {}", cfg.output.display()))?;
    Ok(&cfg.output)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn finish(inv: &Inversion, dir: &Path) -> Result<()> {
    inv.report.solve.save_csv(&dir.join("report.csv"))?;
    let summary = inv.report.summary();
    write_text(&dir.join("summary.txt"), &summary)?;
    print!("{summary}");
    if !inv.report.converged {
        bail!(NotConverged(format!(
            "solver stopped after {} iterations at relative residual {:.3e}",
            inv.report.iterations,
            inv.report.solve.relative_residual()
        )));
    }
    Ok(())
}

fn forward(common: &Common) -> Result<()> {
    let cfg = common.resolve()?;
    let dir = output_dir(&cfg)?;
    let data = stkkt::par::with_workers(cfg.workers, || generate_data(&cfg))?;
    let path = dir.join("observations.csv");
    data.observations.save_csv(&path)?;
    println!(
        "{} measurement nodes, {} intervals, written to {}",
        data.observations.nodes.len(),
        data.observations.steps(),
        path.display()
    );
    Ok(())
}

fn invert(common: &Common, dump: bool) -> Result<()> {
    let cfg = common.resolve()?;
    let dir = output_dir(&cfg)?;
    write_text(&dir.join("config.txt"), &cfg.to_text())?;
    let inv = run_inversion(&cfg)?;
    if dump {
        inv.instance
            .system
            .dump(&dir.join("kkt_matrix.txt"), &dir.join("kkt_rhs.txt"))?;
    }
    finish(&inv, dir)
}

fn sweep(common: &Common, axis: SweepAxis, values: &[String]) -> Result<()> {
    let cfg = common.resolve()?;
    let dir = output_dir(&cfg)?;
    let rows = stkkt::experiment::sweep(&cfg, axis, values)?;
    let path = dir.join(format!("sweep_{}.csv", axis.key()));
    save_sweep_csv(axis, &rows, &path)?;
    let mut out = std::io::stdout().lock();
    for r in &rows {
        let its = r.iterations.map_or("-".into(), |i| i.to_string());
        let err = r.relative_error.map_or("-".into(), |e| format!("{e:.4e}"));
        writeln!(
            out,
            "{}={} iterations={its} converged={} error={err} time={:.2}",
            axis.key(),
            r.value,
            r.converged,
            r.wall_time
        )?;
        if let Some(m) = &r.message {
            writeln!(out, "  {m}")?;
        }
    }
    if let Some(r) = rows.iter().find(|r| r.iterations.is_none()) {
        bail!(
            "{}={}: {}",
            axis.key(),
            r.value,
            r.message.as_deref().unwrap_or("failed")
        );
    }
    if rows.iter().any(|r| !r.converged) {
        bail!(NotConverged(format!("some {} values did not converge", axis.key())));
    }
    Ok(())
}

fn export(common: &Common, slices: &[String]) -> Result<()> {
    let cfg = common.resolve()?;
    let planes = slices
        .iter()
        .map(|s| {
            let (a, c) = s
                .split_once(':')
                .with_context(|| format!("slice `{s}` is not axis:coordinate"))?;
            Ok((a.trim().parse::<usize>()?, c.trim().parse::<f64>()?))
        })
        .collect::<Result<Vec<_>>>()?;
    let dir = output_dir(&cfg)?;
    let inv = run_inversion(&cfg)?;
    let snapshots = if cfg.snapshots.is_empty() {
        vec![0, cfg.steps / 2, cfg.steps]
    } else {
        cfg.snapshots.clone()
    };
    let files = export_vtk(&inv.solution, &inv.instance.mesh, &snapshots, dir)?;
    for (axis, coord) in planes {
        let path = dir.join(format!("slice_f_{axis}_{coord}.csv"));
        save_slice_csv(
            &inv.solution.f,
            &inv.instance.mesh,
            &inv.instance.grid,
            axis,
            coord,
            &path,
        )?;
    }
    println!("{} VTK files written to {}", files.len(), dir.display());
    finish(&inv, dir)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let stalled = err
        .chain()
        .any(|e| e.is::<NotConverged>() || matches!(e.downcast_ref::<Error>(), Some(Error::NotConverged { .. })));
    if stalled {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Forward(c) => forward(c),
        Command::Invert { common, dump } => invert(common, *dump),
        Command::Sweep { common, axis, values } => sweep(common, *axis, values),
        Command::Export { common, slices } => export(common, slices),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
