//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::source::SourceSpec;
use crate::fem::{RegKind, RegularizationSpec};
use crate::schwarz::{LocalSolver, Restriction};
use crate::{Error, Result};

/// Where measurements are taken.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeasurementGrid {
    /// `s³` cell-centred points snapped to the nearest nodes.
    Uniform(usize),
    /// Every mesh node.
    AllNodes,
}

/// Everything needed to generate data and run one inversion.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub source: SourceSpec,
    /// Inversion mesh: cells per axis and time steps.
    pub cells: usize,
    pub steps: usize,
    /// Coarse mesh of the two-level method.
    pub coarse_cells: usize,
    pub coarse_steps: usize,
    /// Refinement factor (space and time) of the data-generation mesh.
    pub data_refine: usize,
    pub parts: [usize; 3],
    pub time_parts: usize,
    pub overlap: usize,
    pub coarse_overlap: usize,
    pub ilu_k: usize,
    pub exact_local: bool,
    pub levels: usize,
    /// Krylov restart; `None` picks 50 (GMRES) or 30 (fGMRES).
    pub restart: Option<usize>,
    pub rtol: f64,
    pub max_iters: usize,
    pub coarse_rtol: f64,
    pub coarse_max_iters: usize,
    pub restriction: Restriction,
    pub beta1: f64,
    pub beta2: f64,
    pub reg: RegKind,
    pub measurements: MeasurementGrid,
    pub epsilon: f64,
    pub seed: u64,
    pub t_final: f64,
    /// Worker threads; 0 uses the default pool.
    pub workers: usize,
    /// Read observations from this CSV instead of generating them.
    pub observations: Option<PathBuf>,
    pub output: PathBuf,
    /// Time levels written by `export`.
    pub snapshots: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            source: SourceSpec::GaussianPair,
            cells: 16,
            steps: 16,
            coarse_cells: 8,
            coarse_steps: 8,
            data_refine: 2,
            parts: [2, 2, 2],
            time_parts: 2,
            overlap: 1,
            coarse_overlap: 1,
            ilu_k: 0,
            exact_local: false,
            levels: 1,
            restart: None,
            rtol: 1e-6,
            max_iters: 2000,
            coarse_rtol: 1e-1,
            coarse_max_iters: 4,
            restriction: Restriction::Injection,
            beta1: 3.6e-5,
            beta2: 3.6e-3,
            reg: RegKind::H1H1,
            measurements: MeasurementGrid::Uniform(7),
            epsilon: 0.01,
            seed: 2024,
            t_final: 1.0,
            workers: 0,
            observations: None,
            output: PathBuf::from("out"),
            snapshots: Vec::new(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("{key}: cannot parse `{value}`")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split([',', 'x', ' '])
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(Error::InvalidArgument(format!(
            "{key}: expected a boolean, got `{value}`"
        ))),
    }
}

impl RunConfig {
    pub const KEYS: &'static [&'static str] = &[
        "source",
        "cells",
        "steps",
        "coarse_cells",
        "coarse_steps",
        "data_refine",
        "parts",
        "time_parts",
        "subdomains",
        "overlap",
        "coarse_overlap",
        "ilu_k",
        "local_solver",
        "levels",
        "restart",
        "rtol",
        "max_iters",
        "coarse_rtol",
        "coarse_max_iters",
        "restriction",
        "beta1",
        "beta2",
        "reg",
        "measure",
        "epsilon",
        "seed",
        "t_final",
        "workers",
        "observations",
        "output",
        "snapshots",
    ];

    /// Set one parameter from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "source" => self.source = value.parse()?,
            "cells" => self.cells = parse_num(key, value)?,
            "steps" => self.steps = parse_num(key, value)?,
            "coarse_cells" => self.coarse_cells = parse_num(key, value)?,
            "coarse_steps" => self.coarse_steps = parse_num(key, value)?,
            "data_refine" => self.data_refine = parse_num(key, value)?,
            "parts" => {
                let v = parse_list(key, value)?;
                self.parts = match *v.as_slice() {
                    [p] => [p; 3],
                    [a, b, c] => [a, b, c],
                    _ => {
                        return Err(Error::InvalidArgument(format!(
                            "parts: expected 1 or 3 values, got `{value}`"
                        )))
                    }
                };
            }
            "time_parts" => self.time_parts = parse_num(key, value)?,
            "subdomains" => {
                let v = parse_list(key, value)?;
                match v.as_slice() {
                    &[a, b, c, t] => {
                        self.parts = [a, b, c];
                        self.time_parts = t;
                    }
                    _ => {
                        return Err(Error::InvalidArgument(format!(
                            "subdomains: expected px,py,pz,pt, got `{value}`"
                        )))
                    }
                }
            }
            "overlap" => self.overlap = parse_num(key, value)?,
            "coarse_overlap" => self.coarse_overlap = parse_num(key, value)?,
            "ilu_k" => self.ilu_k = parse_num(key, value)?,
            "local_solver" => {
                self.exact_local = match value.to_ascii_lowercase().as_str() {
                    "ilu" => false,
                    "exact" | "lu" => true,
                    _ => {
                        return Err(Error::InvalidArgument(format!(
                            "local_solver: expected ilu or exact, got `{value}`"
                        )))
                    }
                }
            }
            "levels" => self.levels = parse_num(key, value)?,
            "restart" => self.restart = Some(parse_num(key, value)?),
            "rtol" => self.rtol = parse_num(key, value)?,
            "max_iters" => self.max_iters = parse_num(key, value)?,
            "coarse_rtol" => self.coarse_rtol = parse_num(key, value)?,
            "coarse_max_iters" => self.coarse_max_iters = parse_num(key, value)?,
            "restriction" => {
                self.restriction = match value.to_ascii_lowercase().as_str() {
                    "injection" => Restriction::Injection,
                    "transpose" => Restriction::Transpose,
                    _ => {
                        return Err(Error::InvalidArgument(format!(
                            "restriction: expected injection or transpose, got `{value}`"
                        )))
                    }
                }
            }
            "beta1" => self.beta1 = parse_num(key, value)?,
            "beta2" => self.beta2 = parse_num(key, value)?,
            "reg" => self.reg = value.parse()?,
            "measure" => {
                self.measurements = if value.eq_ignore_ascii_case("all") {
                    MeasurementGrid::AllNodes
                } else {
                    MeasurementGrid::Uniform(parse_num(key, value)?)
                }
            }
            "epsilon" => self.epsilon = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "t_final" => self.t_final = parse_num(key, value)?,
            "workers" => self.workers = parse_num(key, value)?,
            "observations" => {
                self.observations = if value.is_empty() {
                    None
                } else {
                    Some(PathBuf::from(value))
                }
            }
            "output" => self.output = PathBuf::from(value),
            "snapshots" => self.snapshots = parse_list(key, value)?,
            "exact_local" => self.exact_local = parse_bool(key, value)?,
            other => return Err(Error::InvalidArgument(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    /// Parse `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: idx + 1,
                message: format!("expected key = value, got `{line}`"),
            })?;
            cfg.set(key, value).map_err(|e| Error::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Render as a config file that [`RunConfig::parse`] reads back.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("source", self.source.name().into());
        put("cells", self.cells.to_string());
        put("steps", self.steps.to_string());
        put("coarse_cells", self.coarse_cells.to_string());
        put("coarse_steps", self.coarse_steps.to_string());
        put("data_refine", self.data_refine.to_string());
        put(
            "parts",
            format!("{},{},{}", self.parts[0], self.parts[1], self.parts[2]),
        );
        put("time_parts", self.time_parts.to_string());
        put("overlap", self.overlap.to_string());
        put("coarse_overlap", self.coarse_overlap.to_string());
        put("ilu_k", self.ilu_k.to_string());
        put("local_solver", if self.exact_local { "exact" } else { "ilu" }.into());
        put("levels", self.levels.to_string());
        if let Some(r) = self.restart {
            put("restart", r.to_string());
        }
        put("rtol", format!("{:e}", self.rtol));
        put("max_iters", self.max_iters.to_string());
        put("coarse_rtol", format!("{:e}", self.coarse_rtol));
        put("coarse_max_iters", self.coarse_max_iters.to_string());
        put(
            "restriction",
            match self.restriction {
                Restriction::Injection => "injection",
                Restriction::Transpose => "transpose",
            }
            .into(),
        );
        put("beta1", format!("{:e}", self.beta1));
        put("beta2", format!("{:e}", self.beta2));
        put("reg", self.reg.to_string());
        put(
            "measure",
            match self.measurements {
                MeasurementGrid::AllNodes => "all".into(),
                MeasurementGrid::Uniform(s) => s.to_string(),
            },
        );
        put("epsilon", format!("{:e}", self.epsilon));
        put("seed", self.seed.to_string());
        put("t_final", self.t_final.to_string());
        put("workers", self.workers.to_string());
        if let Some(p) = &self.observations {
            put("observations", p.display().to_string());
        }
        put("output", self.output.display().to_string());
        if !self.snapshots.is_empty() {
            put(
                "snapshots",
                self.snapshots
                    .iter()
                    .map(|n| n.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            );
        }
        s
    }

    pub fn regularization(&self) -> Result<RegularizationSpec> {
        RegularizationSpec::new(self.beta1, self.beta2, self.reg)
    }

    pub fn local_solver(&self) -> LocalSolver {
        if self.exact_local {
            LocalSolver::Exact
        } else {
            LocalSolver::Ilu(self.ilu_k)
        }
    }

    pub fn restart_length(&self) -> usize {
        self.restart.unwrap_or(if self.levels == 2 { 30 } else { 50 })
    }

    pub fn num_subdomains(&self) -> usize {
        self.parts.iter().product::<usize>() * self.time_parts
    }

    /// Cross-field checks that do not require building anything.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.cells == 0 {
            return bad("cells must be positive".into());
        }
        if self.steps < 2 {
            return bad("steps must be at least 2".into());
        }
        if self.data_refine == 0 {
            return bad("data_refine must be positive".into());
        }
        if !(self.levels == 1 || self.levels == 2) {
            return bad(format!("levels must be 1 or 2, got {}", self.levels));
        }
        if self.levels == 2 {
            if self.coarse_cells == 0 || !self.cells.is_multiple_of(self.coarse_cells) {
                return bad(format!(
                    "coarse_cells {} does not divide cells {}",
                    self.coarse_cells, self.cells
                ));
            }
            if self.coarse_steps < 2 || !self.steps.is_multiple_of(self.coarse_steps) {
                return bad(format!(
                    "coarse_steps {} does not divide steps {}",
                    self.coarse_steps, self.steps
                ));
            }
        }
        if self.parts.iter().any(|&p| p == 0 || p > self.cells) || self.time_parts == 0 || self.time_parts > self.steps
        {
            return bad(format!(
                "subdomain counts {:?} x {} do not fit a {}^3 x {} mesh",
                self.parts, self.time_parts, self.cells, self.steps
            ));
        }
        if let Some(0) = self.restart {
            return bad("restart must be at least 1".into());
        }
        if !(self.rtol > 0.0 && self.rtol < 1.0) {
            return bad(format!("rtol must lie in (0, 1), got {}", self.rtol));
        }
        if !(self.epsilon >= 0.0) {
            return bad(format!("epsilon must be non-negative, got {}", self.epsilon));
        }
        if !(self.t_final > 0.0) {
            return bad("t_final must be positive".into());
        }
        if let MeasurementGrid::Uniform(0) = self.measurements {
            return bad("measure must be positive or `all`".into());
        }
        self.regularization().map(|_| ())
    }
}
