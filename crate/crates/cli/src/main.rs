use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fracpow::harness::{
    self, emit_csv, emit_plot_script, parse_config, parse_list, parse_method, Experiment, ExperimentConfig,
    ExperimentOutput, QuadratureChoice,
};

/// Fractional powers of convection-diffusion operators on the unit square.
#[derive(Debug, Parser)]
#[command(name = "fracpow", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Exit with status 1 when an acceptance check fails.
    #[arg(long, global = true)]
    check: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every section of an INI config file.
    Run { config: PathBuf },
    /// Spatial convergence against the manufactured solution.
    HStudy(Overrides),
    /// Quadrature convergence at a fixed mesh.
    KStudy(Overrides),
    /// Diagonal profiles of A^{-beta} 1 for a convection-dominated form.
    Layer(Overrides),
    /// Sinc quadrature against the dense spectral decomposition.
    OracleCheck(Overrides),
}

#[derive(Debug, Args)]
struct Overrides {
    /// Fractional orders, e.g. `0.3,0.5,0.7`.
    #[arg(long)]
    beta: Option<String>,
    /// Convection strength.
    #[arg(long, allow_negative_numbers = true)]
    b: Option<f64>,
    /// Mesh levels, e.g. `2..6` or `3,4`.
    #[arg(long)]
    levels: Option<String>,
    /// Sinc steps for the balanced rule.
    #[arg(long, conflicts_with = "n")]
    k: Option<String>,
    /// Symmetric rule sizes (`k = 1/sqrt(n)`, `2n+1` nodes).
    #[arg(long)]
    n: Option<String>,
    /// Relative residual tolerance of the shifted solves.
    #[arg(long)]
    tol: Option<f64>,
    /// auto, krylov or direct.
    #[arg(long)]
    method: Option<String>,
    /// CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a gnuplot script next to the CSV.
    #[arg(long)]
    plot: bool,
    /// Lift the desk-scale limits (level 8 and 401 nodes for `layer`).
    #[arg(long)]
    full: bool,
    /// Leave the wall_time column blank.
    #[arg(long)]
    no_timing: bool,
}

impl Overrides {
    fn apply(&self, experiment: Experiment) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::defaults(experiment);
        if self.full {
            cfg.make_full();
        }
        if let Some(s) = &self.beta {
            cfg.beta_list = parse_list(s)?;
        }
        if let Some(b) = self.b {
            cfg.b = b;
        }
        if let Some(s) = &self.levels {
            cfg.levels = parse_list(s)?;
        }
        if let Some(s) = &self.k {
            cfg.quadrature = QuadratureChoice::Steps(parse_list(s)?);
        }
        if let Some(s) = &self.n {
            cfg.quadrature = QuadratureChoice::Symmetric(parse_list(s)?);
        }
        if let Some(t) = self.tol {
            cfg.solver_tol = t;
        }
        if let Some(m) = &self.method {
            cfg.method = parse_method(m)?;
        }
        cfg.output_path = self.out.clone();
        cfg.plot = self.plot;
        cfg.record_timing = !self.no_timing;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn report(cfg: &ExperimentConfig, out: &ExperimentOutput) -> Result<bool> {
    let path = cfg
        .output_path
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.csv", cfg.experiment.id())));
    emit_csv(&out.table, &path)?;
    println!(
        "{}: wrote {} rows to {}",
        cfg.experiment.id(),
        out.table.rows.len(),
        path.display()
    );
    if cfg.plot {
        let script = path.with_extension("gp");
        emit_plot_script(out, &path, &script)?;
        println!("{}: plot script {}", cfg.experiment.id(), script.display());
    }
    for line in &out.summary {
        println!("  {line}");
    }
    for c in &out.checks {
        println!(
            "  [{}] {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    Ok(out.all_passed())
}

fn run_one(cfg: &ExperimentConfig) -> Result<bool> {
    log::info!("running {} with {:?}", cfg.experiment.id(), cfg);
    let out = harness::run(cfg).with_context(|| format!("{} failed", cfg.experiment.id()))?;
    report(cfg, &out)
}

fn load_config(path: &Path) -> Result<Vec<ExperimentConfig>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfgs = parse_config(&text).with_context(|| format!("parsing {}", path.display()))?;
    if cfgs.is_empty() {
        bail!("{} contains no experiment sections", path.display());
    }
    Ok(cfgs)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match real_main(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) if cli.check => {
            eprintln!("fracpow: acceptance checks failed");
            ExitCode::FAILURE
        }
        Ok(false) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fracpow: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main(cli: &Cli) -> Result<bool> {
    let cfgs = match &cli.command {
        Command::Run { config } => load_config(config)?,
        Command::HStudy(o) => vec![o.apply(Experiment::HConvergence)?],
        Command::KStudy(o) => vec![o.apply(Experiment::KConvergence)?],
        Command::Layer(o) => vec![o.apply(Experiment::BoundaryLayer)?],
        Command::OracleCheck(o) => vec![o.apply(Experiment::OracleCheck)?],
    };
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let mut passed = true;
    for cfg in &cfgs {
        passed &= run_one(cfg)?;
    }
    Ok(passed)
}
