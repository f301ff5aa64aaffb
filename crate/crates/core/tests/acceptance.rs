//! Acceptance gate. Every criterion is evaluated, one PASS/FAIL line is
//! printed per criterion, and the test fails if any of them failed.
//!
//! Run with `cargo test -p fracpow-core --test acceptance -- --nocapture`
//! to see the report.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use fracpow::assembly::assemble_full;
use fracpow::harness::{
    emit_csv, run_boundary_layer, run_h_convergence, run_k_convergence, run_oracle_check, Experiment, ExperimentConfig,
    QuadratureChoice,
};
use fracpow::sincquad::apply_to_pencil;
use fracpow::{assemble, CoefficientForm, FractionalOptions, Mesh, Pencil, SincRule, SparseMatrix};

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn h_convergence() -> Outcome {
    let cfg = ExperimentConfig::defaults(Experiment::HConvergence);
    assert_eq!(cfg.beta_list, vec![0.3, 0.5, 0.7]);
    assert_eq!(cfg.levels, vec![2, 3, 4, 5, 6]);
    assert_eq!(cfg.b, 1.0);
    let out = run_h_convergence(&cfg).unwrap();
    let mut passed = true;
    let mut detail = Vec::new();
    for beta in &cfg.beta_list {
        let rates: Vec<f64> = out
            .rows
            .iter()
            .filter(|r| r.beta == *beta)
            .filter_map(|r| r.rate)
            .collect();
        let last = &rates[rates.len() - 2..];
        passed &= rates.len() == 4 && last.iter().all(|r| (1.8..=2.2).contains(r));
        detail.push(format!("beta={beta}: {:.3}, {:.3}", last[0], last[1]));
    }
    outcome(passed, detail.join("; "))
}

fn exponential_decay() -> Outcome {
    let cfg = ExperimentConfig::defaults(Experiment::KConvergence);
    assert_eq!(cfg.quadrature, QuadratureChoice::Steps(vec![0.6, 0.5, 0.4, 0.35, 0.3]));
    assert_eq!(
        (cfg.b, cfg.levels.as_slice(), cfg.beta_list.as_slice()),
        (0.0, &[4][..], &[0.5][..])
    );
    let out = run_k_convergence(&cfg).unwrap();
    let points: Vec<(f64, f64)> = out.rows.iter().map(|r| (r.k, r.error.unwrap())).collect();
    assert_eq!(points.len(), 5);
    let c = fracpow::harness::fit_decay(&points).unwrap();
    let target = PI * PI / 2.0;
    outcome(
        (c - target).abs() <= 0.15 * target,
        format!(
            "fitted c = {c:.4}, pi^2/2 = {target:.4}, deviation {:.1}%",
            100.0 * (c / target - 1.0)
        ),
    )
}

fn oracle_equivalence() -> Outcome {
    let mut cfg = ExperimentConfig::defaults(Experiment::OracleCheck);
    cfg.beta_list = vec![0.25, 0.5, 0.75];
    cfg.levels = vec![4];
    cfg.quadrature = QuadratureChoice::Steps(vec![0.2]);
    let out = run_oracle_check(&cfg).unwrap();
    let worst = out.rows.iter().map(|r| r.error.unwrap()).fold(0.0, f64::max);
    outcome(
        out.rows.len() == 3 && worst <= 1e-6,
        format!("max relative error {worst:.3e} (limit 1e-6)"),
    )
}

fn scalar_consistency() -> Outcome {
    let mass = SparseMatrix::identity(1);
    let opts = FractionalOptions::with_tol(1e-14);
    let mut worst: f64 = 0.0;
    for lambda in [1.0, 10.0, 100.0] {
        let form = SparseMatrix::from_triplets(1, &[(0, 0, lambda)]);
        for beta in [0.25, 0.5, 0.75] {
            let rule = SincRule::balanced(beta, 0.1).unwrap();
            let (u, _) = apply_to_pencil(Pencil::new(&mass, &form), &rule, &[1.0], &opts).unwrap();
            let exact: f64 = lambda.powf(-beta);
            worst = worst.max((u[0] - exact).abs() / exact);
        }
    }
    outcome(worst <= 1e-6, format!("max relative error {worst:.3e} (limit 1e-6)"))
}

fn boundary_layer() -> Outcome {
    let cfg = ExperimentConfig::defaults(Experiment::BoundaryLayer);
    assert_eq!(cfg.beta_list, vec![0.1, 0.3, 0.5, 0.7, 0.9]);
    assert_eq!((cfg.b, cfg.levels.as_slice()), (10.0, &[6][..]));
    let out = run_boundary_layer(&cfg).unwrap();
    let maxima: Vec<f64> = out.rows.iter().map(|r| r.error.unwrap()).collect();
    let decreasing = maxima.len() == 5 && maxima.windows(2).all(|w| w[0] > w[1]);
    let first = &out.table.rows[0];
    let last = &out.table.rows[out.table.rows.len() - 1];
    let endpoints = first[1..]
        .iter()
        .chain(&last[1..])
        .all(|v| v.parse::<f64>().unwrap().abs() <= 1e-14);
    let shown: Vec<String> = maxima.iter().map(|m| format!("{m:.4}")).collect();
    outcome(
        decreasing && endpoints && out.table.rows.len() == 512,
        format!("maxima [{}], endpoints zero: {endpoints}", shown.join(", ")),
    )
}

fn structural_invariants() -> Outcome {
    let mut failures = Vec::new();
    for level in [2, 4] {
        let mesh = Mesh::uniform(level).unwrap();
        let (mass, lap) = assemble_full(&mesh, &CoefficientForm::laplacian()).unwrap();
        let total: f64 = mass.values().iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            failures.push(format!("level {level}: mass total {total}"));
        }
        let ones = vec![1.0; lap.dim()];
        let annihilated = lap.mul_vec(&ones).iter().map(|v| v.abs()).fold(0.0, f64::max);
        if annihilated > 1e-12 {
            failures.push(format!("level {level}: K*1 = {annihilated:e}"));
        }

        let mesh = Arc::new(mesh);
        let sym = assemble(mesh.clone(), CoefficientForm::laplacian()).unwrap();
        let conv = assemble(mesh.clone(), CoefficientForm::convection_diffusion(1.0)).unwrap();
        if !sym.form.is_symmetric(1e-13) || sym.form.asymmetry() > 1e-13 * sym.form.max_abs() {
            failures.push(format!("level {level}: b = 0 form not symmetric"));
        }
        if conv.form.is_symmetric(1e-13) {
            failures.push(format!("level {level}: b = 1 form symmetric"));
        }
        // SPD mass: symmetric, and Cholesky succeeds
        let n = sym.mass.dim();
        let dense = nalgebra::DMatrix::from_fn(n, n, |i, j| sym.mass.get(i, j));
        if !sym.mass.is_symmetric(1e-15) || dense.cholesky().is_none() {
            failures.push(format!("level {level}: mass not SPD"));
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::defaults(Experiment::HConvergence);
    cfg.levels = vec![2, 3, 4];
    cfg.record_timing = false;
    let paths: Vec<_> = (0..2).map(|i| dir.path().join(format!("run{i}.csv"))).collect();
    for p in &paths {
        emit_csv(&run_h_convergence(&cfg).unwrap().table, p).unwrap();
    }
    let a = std::fs::read(&paths[0]).unwrap();
    let b = std::fs::read(&paths[1]).unwrap();
    if a != b || a.is_empty() {
        failures.push("repeated runs produced different CSV bytes".into());
    }

    if failures.is_empty() {
        outcome(
            true,
            "mass SPD and sums to 1, K*1 = 0, symmetry iff b = 0, CSV byte-identical",
        )
    } else {
        outcome(false, failures.join("; "))
    }
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 6] = [
        ("1 h-convergence rates in [1.8, 2.2]", h_convergence),
        ("2 quadrature decay constant within 15% of pi^2/2", exponential_decay),
        ("3 sinc quadrature matches spectral oracle", oracle_equivalence),
        ("4 scalar consistency", scalar_consistency),
        ("5 boundary-layer maxima decrease with beta", boundary_layer),
        ("6 structural invariants", structural_invariants),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let start = Instant::now();
        let o = check();
        let status = if o.passed { "PASS" } else { "FAIL" };
        println!(
            "[{status}] criterion {name}: {} ({:.1}s)",
            o.detail,
            start.elapsed().as_secs_f64()
        );
        if !o.passed {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
