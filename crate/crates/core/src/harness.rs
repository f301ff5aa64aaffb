//! Experiment drivers: spatial convergence, quadrature convergence,
//! boundary-layer profiles and the oracle cross-check, with CSV and
//! gnuplot output.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

use crate::assembly::{assemble, l2_project, AssemblyError, CoefficientForm, FemSystem};
use crate::linsolve::{Method, ShiftedSolver, DEFAULT_TOL, MAX_TOL};
use crate::mesh::{Mesh, MeshError};
use crate::norms::{error_between, error_l2, Norm, NormError};
use crate::oracle::{dense_spectral, spectral_fractional, ManufacturedSolution, OracleError, SpectralDecomposition};
use crate::sincquad::{
    apply_fractional_inverse, quadrature_error_estimate, step_for_error, FractionalOptions, QuadratureError, Rhs,
    SincRule,
};

/// Forward runs are capped at this level unless `full` is set.
pub const FORWARD_LEVEL_CAP: u32 = 8;
/// Runs that need the dense oracle are capped here.
pub const ORACLE_LEVEL_CAP: u32 = 6;
/// Acceptance band for observed spatial rates.
pub const RATE_BAND: (f64, f64) = (1.8, 2.2);
/// Relative tolerance on the fitted exponential decay constant.
pub const DECAY_TOLERANCE: f64 = 0.15;
/// Quadrature error target relative to `h²` when `k` is chosen automatically.
pub const AUTO_K_FRACTION: f64 = 0.01;
/// Number of equispaced samples on the diagonal for the layer profiles.
pub const PROFILE_SAMPLES: usize = 512;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Norm(#[from] NormError),
}

fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    HConvergence,
    KConvergence,
    BoundaryLayer,
    OracleCheck,
}

impl Experiment {
    pub fn id(&self) -> &'static str {
        match self {
            Experiment::HConvergence => "h_convergence",
            Experiment::KConvergence => "k_convergence",
            Experiment::BoundaryLayer => "boundary_layer",
            Experiment::OracleCheck => "oracle_check",
        }
    }

    pub fn from_id(s: &str) -> Option<Self> {
        match s.trim().replace('-', "_").as_str() {
            "h_convergence" | "h_study" => Some(Experiment::HConvergence),
            "k_convergence" | "k_study" => Some(Experiment::KConvergence),
            "boundary_layer" | "layer" => Some(Experiment::BoundaryLayer),
            "oracle_check" => Some(Experiment::OracleCheck),
            _ => None,
        }
    }
}

/// How the sinc rule is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum QuadratureChoice {
    /// Balanced rule with `k` picked per level from the error estimate.
    Auto,
    /// Balanced rule for each listed step.
    Steps(Vec<f64>),
    /// Symmetric rule `M = N = n`, `k = 1/√n` for each listed `n`.
    Symmetric(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub beta_list: Vec<f64>,
    pub b: f64,
    pub levels: Vec<u32>,
    pub quadrature: QuadratureChoice,
    pub solver_tol: f64,
    pub method: Method,
    pub output_path: Option<PathBuf>,
    pub plot: bool,
    /// Lifts the desk-scale level caps.
    pub full: bool,
    /// Write wall times into the CSV (blank otherwise).
    pub record_timing: bool,
}

impl ExperimentConfig {
    pub fn defaults(experiment: Experiment) -> Self {
        let base = Self {
            experiment,
            beta_list: vec![0.5],
            b: 0.0,
            levels: vec![4],
            quadrature: QuadratureChoice::Auto,
            solver_tol: DEFAULT_TOL,
            method: Method::Auto,
            output_path: None,
            plot: false,
            full: false,
            record_timing: true,
        };
        match experiment {
            Experiment::HConvergence => Self {
                beta_list: vec![0.3, 0.5, 0.7],
                b: 1.0,
                levels: (2..=6).collect(),
                ..base
            },
            Experiment::KConvergence => Self {
                quadrature: QuadratureChoice::Steps(vec![0.6, 0.5, 0.4, 0.35, 0.3]),
                solver_tol: 1e-12,
                ..base
            },
            Experiment::BoundaryLayer => Self {
                beta_list: vec![0.1, 0.3, 0.5, 0.7, 0.9],
                b: 10.0,
                levels: vec![6],
                quadrature: QuadratureChoice::Steps(vec![0.3]),
                ..base
            },
            Experiment::OracleCheck => Self {
                beta_list: vec![0.25, 0.5, 0.75],
                quadrature: QuadratureChoice::Steps(vec![0.5, 0.35, 0.25, 0.2]),
                solver_tol: 1e-12,
                ..base
            },
        }
    }

    /// Switches to the level-8, 401-point boundary-layer setup.
    pub fn make_full(&mut self) {
        self.full = true;
        if self.experiment == Experiment::BoundaryLayer {
            self.levels = vec![8];
            self.quadrature = QuadratureChoice::Symmetric(vec![200]);
        }
    }

    fn needs_oracle(&self) -> bool {
        match self.experiment {
            Experiment::OracleCheck => true,
            Experiment::KConvergence => self.b == 0.0,
            _ => false,
        }
    }

    pub fn level_cap(&self) -> u32 {
        if self.needs_oracle() {
            ORACLE_LEVEL_CAP
        } else if self.full {
            crate::mesh::MAX_LEVEL
        } else {
            FORWARD_LEVEL_CAP
        }
    }

    /// Checks everything that can be checked before allocating.
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.beta_list.is_empty() {
            return Err(config_err("beta list is empty"));
        }
        if let Some(b) = self.beta_list.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(config_err(format!("beta = {b} outside (0, 1)")));
        }
        if self.levels.is_empty() {
            return Err(config_err("level list is empty"));
        }
        let cap = self.level_cap();
        if let Some(l) = self.levels.iter().find(|l| **l < 1 || **l > cap) {
            return Err(config_err(format!(
                "level {l} outside 1..={cap} for {}",
                self.experiment.id()
            )));
        }
        if !self.b.is_finite() {
            return Err(config_err("convection strength must be finite"));
        }
        if !(self.solver_tol > 0.0 && self.solver_tol <= MAX_TOL) {
            return Err(config_err(format!(
                "solver tolerance {} outside (0, {MAX_TOL}]",
                self.solver_tol
            )));
        }
        match &self.quadrature {
            QuadratureChoice::Steps(ks) if ks.is_empty() => return Err(config_err("k list is empty")),
            QuadratureChoice::Steps(ks) => {
                if let Some(k) = ks.iter().find(|k| !(**k > 0.0 && **k <= 1.0)) {
                    return Err(config_err(format!("k = {k} outside (0, 1]")));
                }
            }
            QuadratureChoice::Symmetric(ns) if ns.is_empty() || ns.contains(&0) => {
                return Err(config_err("n list must be non-empty and positive"))
            }
            _ => {}
        }
        if matches!(self.experiment, Experiment::KConvergence) && self.quadrature == QuadratureChoice::Auto {
            return Err(config_err("k_convergence needs an explicit k or n list"));
        }
        if self.experiment == Experiment::BoundaryLayer && self.levels.len() != 1 {
            return Err(config_err("boundary_layer takes a single level"));
        }
        if self.needs_oracle() && self.b != 0.0 {
            return Err(config_err("oracle comparisons need a symmetric form (b = 0)"));
        }
        Ok(())
    }

    fn options(&self) -> FractionalOptions {
        FractionalOptions {
            tol: self.solver_tol,
            solver: ShiftedSolver::with_method(self.method),
            parallel: true,
        }
    }

    fn rules(&self, beta: f64, level: u32) -> Result<Vec<SincRule>, QuadratureError> {
        match &self.quadrature {
            QuadratureChoice::Auto => {
                let h = 2f64.powi(-(level as i32));
                Ok(vec![SincRule::balanced(beta, step_for_error(AUTO_K_FRACTION * h * h))?])
            }
            QuadratureChoice::Steps(ks) => ks.iter().map(|&k| SincRule::balanced(beta, k)).collect(),
            QuadratureChoice::Symmetric(ns) => ns.iter().map(|&n| SincRule::symmetric(beta, n)).collect(),
        }
    }
}

/// One line of a convergence table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: &'static str,
    pub beta: f64,
    pub b: f64,
    pub level: u32,
    pub h: f64,
    pub k: f64,
    pub nodes: usize,
    pub error: Option<f64>,
    pub rate: Option<f64>,
    pub wall_time: Option<f64>,
    pub note: String,
}

pub const RESULT_HEADER: [&str; 11] = [
    "experiment",
    "beta",
    "b",
    "level",
    "h",
    "k",
    "nodes",
    "error",
    "rate",
    "wall_time",
    "note",
];

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

impl ResultRow {
    fn record(&self) -> Vec<String> {
        vec![
            self.experiment.to_string(),
            num(self.beta),
            num(self.b),
            self.level.to_string(),
            num(self.h),
            num(self.k),
            self.nodes.to_string(),
            opt(self.error),
            opt(self.rate),
            self.wall_time.map(|t| format!("{t:.3}")).unwrap_or_default(),
            self.note.clone(),
        ]
    }
}

/// A header plus string records, ready for CSV.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn from_rows(rows: &[ResultRow]) -> Self {
        Self {
            header: RESULT_HEADER.iter().map(|s| s.to_string()).collect(),
            rows: rows.iter().map(ResultRow::record).collect(),
        }
    }

    fn write<W: std::io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("records are UTF-8")
    }
}

/// Outcome of a named acceptance check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub experiment: Experiment,
    pub rows: Vec<ResultRow>,
    pub table: Table,
    pub checks: Vec<Check>,
    pub summary: Vec<String>,
}

impl ExperimentOutput {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn fill_rates(rows: &mut [ResultRow], series_key: impl Fn(&ResultRow) -> String) {
    let mut last: Vec<(String, u32, f64)> = Vec::new();
    for row in rows.iter_mut() {
        let key = series_key(row);
        let Some(err) = row.error else { continue };
        if let Some(prev) = last.iter_mut().find(|(k, _, _)| *k == key) {
            if row.level > prev.1 && prev.2 > 0.0 && err > 0.0 {
                row.rate = Some((prev.2 / err).log2() / f64::from(row.level - prev.1));
            }
            *prev = (key, row.level, err);
        } else {
            last.push((key, row.level, err));
        }
    }
}

/// Least-squares slope of `ln e` against `1/k`; returns `−slope`.
pub fn fit_decay(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(_, e)| *e > 0.0 && e.is_finite())
        .map(|&(k, e)| (1.0 / k, e.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(-sxy / sxx)
}

fn mesh_and_system(level: u32, b: f64) -> Result<FemSystem, HarnessError> {
    let mesh = Arc::new(Mesh::uniform(level)?);
    let coeffs = if b == 0.0 {
        CoefficientForm::laplacian()
    } else {
        CoefficientForm::convection_diffusion(b)
    };
    Ok(assemble(mesh, coeffs)?)
}

fn elapsed(cfg: &ExperimentConfig, start: Instant) -> Option<f64> {
    cfg.record_timing.then(|| start.elapsed().as_secs_f64())
}

/// Spatial convergence against the manufactured solution.
pub fn run_h_convergence(cfg: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    expect_experiment(cfg, Experiment::HConvergence)?;
    cfg.validate()?;
    let opts = cfg.options();
    let mut rows = Vec::new();
    let mut levels = cfg.levels.clone();
    levels.sort_unstable();
    levels.dedup();
    for &beta in &cfg.beta_list {
        let exact = ManufacturedSolution::new(beta, cfg.b);
        for &level in &levels {
            let sys = mesh_and_system(level, cfg.b)?;
            let f = move |x: f64, y: f64| exact.f(x, y);
            for rule in cfg.rules(beta, level)? {
                let start = Instant::now();
                let mut row = ResultRow {
                    experiment: cfg.experiment.id(),
                    beta,
                    b: cfg.b,
                    level,
                    h: sys.mesh.h(),
                    k: rule.k,
                    nodes: rule.node_count(),
                    error: None,
                    rate: None,
                    wall_time: None,
                    note: String::new(),
                };
                match apply_fractional_inverse(&sys, &rule, Rhs::Function(&f), &opts) {
                    Ok((u, _)) => row.error = Some(error_l2(&sys.mesh, &u, |x, y| exact.u(x, y))?),
                    Err(e) => row.note = format!("failed: {e}"),
                }
                row.wall_time = elapsed(cfg, start);
                rows.push(row);
            }
        }
    }
    fill_rates(&mut rows, |r| format!("{:e}|{}", r.beta, quad_key(cfg, r)));

    let mut checks = Vec::new();
    let mut summary = Vec::new();
    for &beta in &cfg.beta_list {
        let series: Vec<&ResultRow> = rows.iter().filter(|r| r.beta == beta).collect();
        let rates: Vec<f64> = series.iter().filter_map(|r| r.rate).collect();
        summary.push(format!(
            "beta={beta}: rates {}",
            rates.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>().join(" ")
        ));
        if levels.len() >= 3 && cfg.quadrature == QuadratureChoice::Auto {
            let tail = &rates[rates.len().saturating_sub(2)..];
            let ok = tail.len() == 2 && tail.iter().all(|r| (RATE_BAND.0..=RATE_BAND.1).contains(r));
            checks.push(Check::new(
                format!("second-order rate beta={beta}"),
                ok,
                format!("last rates {tail:?} in {RATE_BAND:?}"),
            ));
        }
    }
    Ok(finish(cfg, rows, checks, summary))
}

fn quad_key(cfg: &ExperimentConfig, r: &ResultRow) -> String {
    match cfg.quadrature {
        QuadratureChoice::Auto => "auto".into(),
        _ => format!("{:e}", r.k),
    }
}

fn expect_experiment(cfg: &ExperimentConfig, e: Experiment) -> Result<(), HarnessError> {
    if cfg.experiment == e {
        Ok(())
    } else {
        Err(config_err(format!(
            "expected a {} config, got {}",
            e.id(),
            cfg.experiment.id()
        )))
    }
}

fn finish(cfg: &ExperimentConfig, rows: Vec<ResultRow>, checks: Vec<Check>, summary: Vec<String>) -> ExperimentOutput {
    ExperimentOutput {
        experiment: cfg.experiment,
        table: Table::from_rows(&rows),
        rows,
        checks,
        summary,
    }
}

struct OracleContext {
    sys: FemSystem,
    dec: SpectralDecomposition,
}

impl OracleContext {
    fn new(level: u32) -> Result<Self, HarnessError> {
        let sys = mesh_and_system(level, 0.0)?;
        let dec = dense_spectral(&sys)?;
        Ok(Self { sys, dec })
    }
}

/// Quadrature convergence at a fixed mesh. With `b = 0` the error is taken
/// against the dense spectral oracle, otherwise against the closed form.
pub fn run_k_convergence(cfg: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    expect_experiment(cfg, Experiment::KConvergence)?;
    cfg.validate()?;
    let opts = cfg.options();
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    let mut checks = Vec::new();
    for &level in &cfg.levels {
        let oracle = if cfg.b == 0.0 {
            Some(OracleContext::new(level)?)
        } else {
            None
        };
        let sys = match &oracle {
            Some(o) => o.sys.clone(),
            None => mesh_and_system(level, cfg.b)?,
        };
        for &beta in &cfg.beta_list {
            let exact = ManufacturedSolution::new(beta, cfg.b);
            let f = move |x: f64, y: f64| exact.f(x, y);
            let reference = match &oracle {
                Some(o) => Some(spectral_fractional(&o.dec, &o.sys, beta, Rhs::Function(&f))?),
                None => None,
            };
            let mut series = Vec::new();
            for rule in cfg.rules(beta, level)? {
                let start = Instant::now();
                let mut row = ResultRow {
                    experiment: cfg.experiment.id(),
                    beta,
                    b: cfg.b,
                    level,
                    h: sys.mesh.h(),
                    k: rule.k,
                    nodes: rule.node_count(),
                    error: None,
                    rate: None,
                    wall_time: None,
                    note: String::new(),
                };
                match apply_fractional_inverse(&sys, &rule, Rhs::Function(&f), &opts) {
                    Ok((u, _)) => {
                        let e = match &reference {
                            Some(r) => error_between(&sys, &u, r, Norm::L2)?,
                            None => error_l2(&sys.mesh, &u, |x, y| exact.u(x, y))?,
                        };
                        if quadrature_error_estimate(&rule) <= 0.1 * e {
                            row.note = "floor".into();
                        }
                        row.error = Some(e);
                    }
                    Err(e) => row.note = format!("failed: {e}"),
                }
                row.wall_time = elapsed(cfg, start);
                series.push(row);
            }
            let points: Vec<(f64, f64)> = series
                .iter()
                .filter(|r| r.note.is_empty())
                .filter_map(|r| r.error.map(|e| (r.k, e)))
                .collect();
            let target = PI * PI / 2.0;
            match fit_decay(&points) {
                Some(c) => {
                    summary.push(format!(
                        "level={level} beta={beta}: fitted decay {c:.4} vs pi^2/2 = {target:.4} (slope {:.4} vs {:.4})",
                        -c, -target
                    ));
                    if cfg.b == 0.0 {
                        let ok = (c - target).abs() <= DECAY_TOLERANCE * target;
                        checks.push(Check::new(
                            format!("exponential decay level={level} beta={beta}"),
                            ok,
                            format!("fitted {c:.4}, target {target:.4} ± {:.0}%", DECAY_TOLERANCE * 100.0),
                        ));
                    }
                }
                None => summary.push(format!("level={level} beta={beta}: too few points to fit")),
            }
            rows.extend(series);
        }
    }
    Ok(finish(cfg, rows, checks, summary))
}

/// Samples of `u` on the diagonal `(t, t)`, `t = i/(samples−1)`.
pub fn diagonal_profile(u: &crate::field::FieldVector, samples: usize) -> Vec<(f64, f64)> {
    (0..samples)
        .map(|i| {
            let t = i as f64 / (samples - 1) as f64;
            (t, u.evaluate(t, t).unwrap_or(0.0))
        })
        .collect()
}

/// Diagonal profiles of `A_h^{-β} 1` for the convection-dominated form.
pub fn run_boundary_layer(cfg: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    expect_experiment(cfg, Experiment::BoundaryLayer)?;
    cfg.validate()?;
    let opts = cfg.options();
    let level = cfg.levels[0];
    let sys = mesh_and_system(level, cfg.b)?;
    let one = |_: f64, _: f64| 1.0;
    let b = crate::assembly::assemble_load(&sys.mesh, one)?;
    let mut betas = cfg.beta_list.clone();
    betas.sort_by(f64::total_cmp);

    let mut rows = Vec::new();
    let mut profiles = Vec::new();
    let mut summary = Vec::new();
    for &beta in &betas {
        let rule = cfg.rules(beta, level)?.remove(0);
        let start = Instant::now();
        let (u, _) = apply_fractional_inverse(&sys, &rule, Rhs::Load(&b), &opts)?;
        let profile = diagonal_profile(&u, PROFILE_SAMPLES);
        let max = profile.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let argmax = profile.iter().find(|p| p.1 == max).map(|p| p.0).unwrap_or(0.0);
        summary.push(format!(
            "beta={beta}: max {max:.6} at t={argmax:.4} ({} nodes, k={:.4})",
            rule.node_count(),
            rule.k
        ));
        rows.push(ResultRow {
            experiment: cfg.experiment.id(),
            beta,
            b: cfg.b,
            level,
            h: sys.mesh.h(),
            k: rule.k,
            nodes: rule.node_count(),
            error: Some(max),
            rate: None,
            wall_time: elapsed(cfg, start),
            note: "profile max".into(),
        });
        profiles.push(profile);
    }

    let maxima: Vec<f64> = rows.iter().filter_map(|r| r.error).collect();
    let decreasing = maxima.windows(2).all(|w| w[0] > w[1]);
    let endpoints = profiles
        .iter()
        .all(|p| p[0].1.abs() <= 1e-14 && p[p.len() - 1].1.abs() <= 1e-14);
    let checks = vec![
        Check::new("maxima decrease with beta", decreasing, format!("maxima {maxima:?}")),
        Check::new("profile endpoints vanish", endpoints, "u(0,0) = u(1,1) = 0"),
    ];

    let mut header = vec!["t".to_string()];
    header.extend(betas.iter().map(|b| format!("u_beta_{b}")));
    let table = Table {
        header,
        rows: (0..PROFILE_SAMPLES)
            .map(|i| {
                let mut rec = vec![num(profiles[0][i].0)];
                rec.extend(profiles.iter().map(|p| num(p[i].1)));
                rec
            })
            .collect(),
    };
    Ok(ExperimentOutput {
        experiment: cfg.experiment,
        rows,
        table,
        checks,
        summary,
    })
}

/// Sinc quadrature against the spectral oracle for symmetric forms,
/// relative to `‖π_h f‖`.
pub fn run_oracle_check(cfg: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    expect_experiment(cfg, Experiment::OracleCheck)?;
    cfg.validate()?;
    let opts = cfg.options();
    let f = |x: f64, y: f64| (PI * x).sin() * (2.0 * PI * y).sin();
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for &level in &cfg.levels {
        let ctx = OracleContext::new(level)?;
        let proj = l2_project(&ctx.sys, f)?;
        let zero = crate::field::FieldVector::zeros(ctx.sys.mesh.clone());
        let proj_norm = error_between(&ctx.sys, &proj, &zero, Norm::L2)?;
        for &beta in &cfg.beta_list {
            let reference = spectral_fractional(&ctx.dec, &ctx.sys, beta, Rhs::Function(&f))?;
            for rule in cfg.rules(beta, level)? {
                let start = Instant::now();
                let (u, _) = apply_fractional_inverse(&ctx.sys, &rule, Rhs::Function(&f), &opts)?;
                let rel = error_between(&ctx.sys, &u, &reference, Norm::L2)? / proj_norm;
                let bound = 10.0 * quadrature_error_estimate(&rule);
                // solver residuals put a floor under what can be resolved
                let resolvable = bound.max(100.0 * cfg.solver_tol);
                let ok = rel <= resolvable;
                checks.push(Check::new(
                    format!("oracle equivalence level={level} beta={beta} k={:.4}", rule.k),
                    ok,
                    format!("relative error {rel:.3e}, bound {resolvable:.3e}"),
                ));
                rows.push(ResultRow {
                    experiment: cfg.experiment.id(),
                    beta,
                    b: 0.0,
                    level,
                    h: ctx.sys.mesh.h(),
                    k: rule.k,
                    nodes: rule.node_count(),
                    error: Some(rel),
                    rate: None,
                    wall_time: elapsed(cfg, start),
                    note: format!("bound {}", num(resolvable)),
                });
            }
        }
    }
    Ok(finish(cfg, rows, checks, Vec::new()))
}

pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentOutput, HarnessError> {
    match cfg.experiment {
        Experiment::HConvergence => run_h_convergence(cfg),
        Experiment::KConvergence => run_k_convergence(cfg),
        Experiment::BoundaryLayer => run_boundary_layer(cfg),
        Experiment::OracleCheck => run_oracle_check(cfg),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes the table as comma-separated text with a header row.
pub fn emit_csv(table: &Table, path: &Path) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    table
        .write(std::io::BufWriter::new(file))
        .map_err(|e| io_err(path)(e.into()))
}

fn gp_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}

/// Gnuplot script for the CSV at `csv_path`, rendering to an SVG next to it.
pub fn plot_script(output: &ExperimentOutput, csv_path: &Path) -> String {
    let csv = gp_quote(&csv_path.to_string_lossy());
    let svg = gp_quote(&csv_path.with_extension("svg").to_string_lossy());
    let mut s = String::new();
    let _ = writeln!(s, "# generated by fracpow");
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set key autotitle columnhead");
    let _ = writeln!(s, "set terminal svg size 800,600");
    let _ = writeln!(s, "set output {svg}");
    let mut betas: Vec<f64> = output.rows.iter().map(|r| r.beta).collect();
    betas.dedup();
    let series = |x: &str, y: &str| -> String {
        betas
            .iter()
            .map(|b| format!("{csv} using (abs($2-{b})<1e-12 ? {x} : 1/0):{y} with linespoints title 'beta={b}'"))
            .collect::<Vec<_>>()
            .join(", \\\n     ")
    };
    match output.experiment {
        Experiment::HConvergence => {
            let _ = writeln!(s, "set logscale xy\nset xlabel 'h'\nset ylabel 'L2 error'");
            let _ = writeln!(s, "plot {}", series("$5", "8"));
        }
        Experiment::KConvergence => {
            let _ = writeln!(s, "set logscale y\nset xlabel 'sqrt(M+N+1)'\nset ylabel 'L2 error'");
            let _ = writeln!(s, "plot {}", series("sqrt($7)", "8"));
        }
        Experiment::OracleCheck => {
            let _ = writeln!(s, "set logscale y\nset xlabel '1/k'\nset ylabel 'relative error'");
            let _ = writeln!(s, "plot {}", series("1/$6", "8"));
        }
        Experiment::BoundaryLayer => {
            let cols = output.table.header.len();
            let _ = writeln!(s, "set xlabel 't'\nset ylabel 'u(t,t)'");
            let _ = writeln!(s, "plot for [c=2:{cols}] {csv} using 1:c with lines");
        }
    }
    s
}

pub fn emit_plot_script(output: &ExperimentOutput, csv_path: &Path, script_path: &Path) -> Result<(), HarnessError> {
    fs::write(script_path, plot_script(output, csv_path)).map_err(io_err(script_path))
}

/// Parses a number list: `a, b, c`, `lo..hi` or `lo-hi` (integers only for ranges).
pub fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, HarnessError> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let range = part.split_once("..").or_else(|| {
            // `2-6`, but not `1e-3`
            part.split_once('-').filter(|(a, b)| {
                !a.is_empty() && a.chars().all(|c| c.is_ascii_digit()) && b.chars().all(|c| c.is_ascii_digit())
            })
        });
        if let Some((a, b)) = range {
            let lo: i64 = a
                .trim()
                .trim_end_matches('=')
                .parse()
                .map_err(|_| config_err(format!("bad range '{part}'")))?;
            let hi: i64 = b
                .trim()
                .trim_start_matches('=')
                .parse()
                .map_err(|_| config_err(format!("bad range '{part}'")))?;
            for v in lo..=hi {
                out.push(
                    v.to_string()
                        .parse()
                        .map_err(|_| config_err(format!("bad value in '{part}'")))?,
                );
            }
        } else {
            out.push(part.parse().map_err(|_| config_err(format!("cannot parse '{part}'")))?);
        }
    }
    Ok(out)
}

fn parse_bool(s: &str) -> Result<bool, HarnessError> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        other => Err(config_err(format!("not a boolean: '{other}'"))),
    }
}

pub fn parse_method(s: &str) -> Result<Method, HarnessError> {
    match s.trim().to_ascii_lowercase().as_str() {
        "auto" => Ok(Method::Auto),
        "krylov" => Ok(Method::Krylov),
        "direct" => Ok(Method::Direct),
        other => Err(config_err(format!("unknown solver method '{other}'"))),
    }
}

impl ExperimentConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HarnessError> {
        match key.trim() {
            "beta" | "betas" | "beta_list" => self.beta_list = parse_list(value)?,
            "b" => {
                self.b = value
                    .trim()
                    .parse()
                    .map_err(|_| config_err(format!("bad b '{value}'")))?
            }
            "levels" | "level" => self.levels = parse_list(value)?,
            "k" => self.quadrature = QuadratureChoice::Steps(parse_list(value)?),
            "n" => self.quadrature = QuadratureChoice::Symmetric(parse_list(value)?),
            "quadrature" if value.trim() == "auto" => self.quadrature = QuadratureChoice::Auto,
            "tol" | "solver_tol" => {
                self.solver_tol = value
                    .trim()
                    .parse()
                    .map_err(|_| config_err(format!("bad tol '{value}'")))?
            }
            "method" => self.method = parse_method(value)?,
            "out" | "output" | "output_path" => self.output_path = Some(PathBuf::from(value.trim())),
            "plot" => self.plot = parse_bool(value)?,
            "full" => {
                if parse_bool(value)? {
                    self.make_full()
                }
            }
            "timing" => self.record_timing = parse_bool(value)?,
            other => return Err(config_err(format!("unknown key '{other}'"))),
        }
        Ok(())
    }
}

/// Parses an INI file: one `[experiment]` section per run (sections may
/// repeat), `key = value` settings, `#` or `;` comments.
pub fn parse_config(text: &str) -> Result<Vec<ExperimentConfig>, HarnessError> {
    let ini = ini::Ini::load_from_str_noescape(text).map_err(|e| config_err(e.to_string()))?;
    let mut out = Vec::new();
    for (section, props) in &ini {
        let Some(name) = section else {
            if let Some((key, _)) = props.iter().next() {
                return Err(config_err(format!("setting '{key}' outside a section")));
            }
            continue;
        };
        let e = Experiment::from_id(name).ok_or_else(|| config_err(format!("unknown experiment '{name}'")))?;
        let mut cfg = ExperimentConfig::defaults(e);
        // `full` first so explicit settings win over its defaults
        if let Some(v) = props.get("full") {
            cfg.set("full", v)
                .map_err(|err| config_err(format!("[{name}] {err}")))?;
        }
        for (key, value) in props.iter().filter(|(k, _)| *k != "full") {
            cfg.set(key, value)
                .map_err(|err| config_err(format!("[{name}] {err}")))?;
        }
        cfg.validate()?;
        out.push(cfg);
    }
    Ok(out)
}
