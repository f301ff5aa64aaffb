//! Sinc quadrature of the Balakrishnan integral.
//!
//! After the substitution `μ = e^y`,
//!
//! ```text
//! A^{-β} = sin(πβ)/π ∫_ℝ e^{(1−β)y} (e^y I + A)^{-1} dy,
//! ```
//!
//! and the trapezoidal rule with step `k` on `y_ℓ = ℓk`, `ℓ = −M..=N`, gives
//! `Q_k^{-β}(A) = Σ_ℓ w_ℓ (e^{y_ℓ} I + A)^{-1}` with
//! `w_ℓ = k sin(πβ)/π · e^{(1−β)y_ℓ}`.
//!
//! For the discrete operator `A_h = M⁻¹K` the node solves become matrix
//! solves: if `b` is the load vector of `f` then `π_h f ↔ M⁻¹b` and
//!
//! ```text
//! (μI + A_h)^{-1} M⁻¹ b = (μI + M⁻¹K)^{-1} M⁻¹ b = (μM + K)^{-1} b.
//! ```
//!
//! so `Q_k^{-β}(A_h) π_h f` has coefficients `Σ_ℓ w_ℓ (e^{y_ℓ}M + K)^{-1} b`.

use std::borrow::Cow;
use std::f64::consts::PI;

use rayon::prelude::*;
use thiserror::Error;

use crate::assembly::{assemble_load, AssemblyError, FemSystem};
use crate::field::FieldVector;
use crate::linsolve::{Pencil, ShiftedSolver, SolveError, SolveReport, DEFAULT_TOL};
use crate::mesh::Mesh;

/// Range of β accepted by the balanced rule.
pub const BALANCED_BETA_RANGE: (f64, f64) = (0.01, 0.99);

/// Number of node solves held in memory at once.
const NODE_CHUNK: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("beta = {0} must lie strictly between 0 and 1")]
    BetaOutOfDomain(f64),
    #[error("beta = {beta} too close to 0 or 1 for the balanced rule (would need M = {m_neg}, N = {n_pos} nodes)")]
    BetaNearEndpoint { beta: f64, m_neg: usize, n_pos: usize },
    #[error("quadrature step k = {0} must lie in (0, 1]")]
    StepOutOfRange(f64),
    #[error("node count must be positive")]
    EmptyRule,
    #[error("{} node solve(s) failed: {}", .0.len(), describe_failures(.0))]
    NodeFailures(Vec<NodeFailure>),
    #[error("right-hand side has length {got}, expected {expected}")]
    LoadLength { got: usize, expected: usize },
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeFailure {
    pub ell: i64,
    pub mu: f64,
    pub error: SolveError,
}

fn describe_failures(fs: &[NodeFailure]) -> String {
    fs.iter()
        .map(|f| format!("ℓ={} (μ={:.3e}): {}", f.ell, f.mu, f.error))
        .collect::<Vec<_>>()
        .join("; ")
}

/// `⌈x⌉`, but values within 1e−9 relative of an integer snap to it.
fn snapped_ceil(x: f64) -> usize {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

fn check_beta(beta: f64) -> Result<(), QuadratureError> {
    if beta > 0.0 && beta < 1.0 {
        Ok(())
    } else {
        Err(QuadratureError::BetaOutOfDomain(beta))
    }
}

/// Nodes `y_ℓ = ℓk`, `ℓ = −m_neg..=n_pos`, and weights of the sinc rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SincRule {
    pub beta: f64,
    pub k: f64,
    pub m_neg: usize,
    pub n_pos: usize,
}

impl SincRule {
    pub fn new(beta: f64, k: f64, m_neg: usize, n_pos: usize) -> Result<Self, QuadratureError> {
        check_beta(beta)?;
        if !(k > 0.0 && k.is_finite()) {
            return Err(QuadratureError::StepOutOfRange(k));
        }
        Ok(Self { beta, k, m_neg, n_pos })
    }

    /// Truncation balanced so that both tails and the discretization error
    /// decay like `e^{−π²/(2k)}`.
    ///
    /// The integrand behaves like `e^{(1−β)y}` as `y → −∞` and like `e^{−βy}`
    /// as `y → +∞`, so the tails are `O(e^{−(1−β)kM})` and `O(e^{−βkN})`.
    /// Setting both exponents to `π²/(2k)` gives
    /// `M = ⌈π²/(2(1−β)k²)⌉`, `N = ⌈π²/(2βk²)⌉`.
    pub fn balanced(beta: f64, k: f64) -> Result<Self, QuadratureError> {
        Self::from_counts(beta, k, |b, k2| {
            (PI * PI / (2.0 * (1.0 - b) * k2), PI * PI / (2.0 * b * k2))
        })
    }

    /// The counts `M = ⌈π²/(4βk²)⌉`, `N = ⌈π²/(4(1−β)k²)⌉` of the original
    /// balancing heuristic. Its tails only decay like `e^{−π²/(4k)}` at β = ½
    /// in this parametrization; kept for comparison runs.
    pub fn balanced_published(beta: f64, k: f64) -> Result<Self, QuadratureError> {
        Self::from_counts(beta, k, |b, k2| {
            (PI * PI / (4.0 * b * k2), PI * PI / (4.0 * (1.0 - b) * k2))
        })
    }

    fn from_counts(beta: f64, k: f64, counts: impl Fn(f64, f64) -> (f64, f64)) -> Result<Self, QuadratureError> {
        check_beta(beta)?;
        if !(k > 0.0 && k <= 1.0) {
            return Err(QuadratureError::StepOutOfRange(k));
        }
        let (m, n) = counts(beta, k * k);
        let (m_neg, n_pos) = (snapped_ceil(m), snapped_ceil(n));
        let (lo, hi) = BALANCED_BETA_RANGE;
        if beta < lo || beta > hi {
            return Err(QuadratureError::BetaNearEndpoint { beta, m_neg, n_pos });
        }
        Ok(Self { beta, k, m_neg, n_pos })
    }

    /// `M = N = n`, `k = 1/√n`.
    pub fn symmetric(beta: f64, n: usize) -> Result<Self, QuadratureError> {
        check_beta(beta)?;
        if n == 0 {
            return Err(QuadratureError::EmptyRule);
        }
        Ok(Self {
            beta,
            k: 1.0 / (n as f64).sqrt(),
            m_neg: n,
            n_pos: n,
        })
    }

    pub fn node_count(&self) -> usize {
        self.m_neg + self.n_pos + 1
    }

    /// Node indices `ℓ` in ascending order.
    pub fn indices(&self) -> impl Iterator<Item = i64> + Clone {
        -(self.m_neg as i64)..=(self.n_pos as i64)
    }

    pub fn node(&self, ell: i64) -> f64 {
        ell as f64 * self.k
    }

    /// Shift `μ_ℓ = e^{y_ℓ}`.
    pub fn shift(&self, ell: i64) -> f64 {
        self.node(ell).exp()
    }

    pub fn weight(&self, ell: i64) -> f64 {
        self.k * (PI * self.beta).sin() / PI * ((1.0 - self.beta) * self.node(ell)).exp()
    }

    pub fn nodes(&self) -> Vec<f64> {
        self.indices().map(|l| self.node(l)).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.indices().map(|l| self.weight(l)).collect()
    }
}

/// `e^{−π²/(2k)}`, the asymptotic size of the balanced-rule error.
pub fn quadrature_error_estimate(rule: &SincRule) -> f64 {
    (-PI * PI / (2.0 * rule.k)).exp()
}

/// Largest `k ≤ 1` with `e^{−π²/(2k)} ≤ target`.
pub fn step_for_error(target: f64) -> f64 {
    if target >= (-PI * PI / 2.0).exp() {
        1.0
    } else {
        PI * PI / (2.0 * (1.0 / target).ln())
    }
}

/// Right-hand side given either as a function or as a ready load vector.
#[derive(Clone, Copy)]
pub enum Rhs<'a> {
    Function(&'a (dyn Fn(f64, f64) -> f64 + Sync)),
    Load(&'a [f64]),
}

impl Rhs<'_> {
    pub fn load(&self, mesh: &Mesh) -> Result<Cow<'_, [f64]>, QuadratureError> {
        match *self {
            Rhs::Function(f) => Ok(Cow::Owned(assemble_load(mesh, f)?)),
            Rhs::Load(b) => {
                if b.len() != mesh.num_dofs() {
                    return Err(QuadratureError::LoadLength {
                        got: b.len(),
                        expected: mesh.num_dofs(),
                    });
                }
                Ok(Cow::Borrowed(b))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FractionalOptions {
    pub tol: f64,
    pub solver: ShiftedSolver,
    /// Run node solves on the rayon pool.
    pub parallel: bool,
}

impl Default for FractionalOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            solver: ShiftedSolver::default(),
            parallel: true,
        }
    }
}

impl FractionalOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

/// One node's contribution `weight · solution`. For `y_ℓ ≤ 0` these are
/// `w_ℓ` and `(μM + K)^{-1}b`; for `y_ℓ > 0` both are rescaled by `μ`, i.e.
/// `w_ℓ/μ` and `μ(μM + K)^{-1}b`.
#[derive(Debug, Clone)]
pub struct NodeSolution {
    pub ell: i64,
    pub weight: f64,
    pub solution: Vec<f64>,
    pub report: SolveReport,
}

fn solve_nodes(
    pencil: Pencil<'_>,
    rule: &SincRule,
    b: &[f64],
    opts: &FractionalOptions,
    ells: &[i64],
) -> Vec<Result<NodeSolution, NodeFailure>> {
    let one = |&ell: &i64| {
        let y = rule.node(ell);
        let (result, weight) = if y > 0.0 {
            // w_ℓ/μ and μ(μM + K)^{-1}b stay finite where e^y overflows
            let scaled = rule.k * (PI * rule.beta).sin() / PI * (-rule.beta * y).exp();
            (opts.solver.solve_scaled(pencil, (-y).exp(), b, opts.tol), scaled)
        } else {
            (opts.solver.solve(pencil, y.exp(), b, opts.tol), rule.weight(ell))
        };
        result
            .map(|(solution, report)| NodeSolution {
                ell,
                weight,
                solution,
                report,
            })
            .map_err(|error| NodeFailure {
                ell,
                mu: y.exp(),
                error,
            })
    };
    if opts.parallel {
        ells.par_iter().map(one).collect()
    } else {
        ells.iter().map(one).collect()
    }
}

/// Every node solution, in ascending `ℓ`.
pub fn node_solutions(
    pencil: Pencil<'_>,
    rule: &SincRule,
    b: &[f64],
    opts: &FractionalOptions,
) -> Result<Vec<NodeSolution>, QuadratureError> {
    let ells: Vec<i64> = rule.indices().collect();
    let mut out = Vec::with_capacity(ells.len());
    let mut failures = Vec::new();
    for r in solve_nodes(pencil, rule, b, opts, &ells) {
        match r {
            Ok(s) => out.push(s),
            Err(f) => failures.push(f),
        }
    }
    if failures.is_empty() {
        Ok(out)
    } else {
        Err(QuadratureError::NodeFailures(failures))
    }
}

/// `Σ_ℓ w_ℓ (e^{y_ℓ}M + K)^{-1} b`, accumulated in ascending `ℓ` regardless
/// of how the solves are scheduled.
pub fn apply_to_pencil(
    pencil: Pencil<'_>,
    rule: &SincRule,
    b: &[f64],
    opts: &FractionalOptions,
) -> Result<(Vec<f64>, Vec<SolveReport>), QuadratureError> {
    if b.len() != pencil.dim() {
        return Err(QuadratureError::LoadLength {
            got: b.len(),
            expected: pencil.dim(),
        });
    }
    let ells: Vec<i64> = rule.indices().collect();
    let mut u = vec![0.0; pencil.dim()];
    let mut reports = Vec::with_capacity(ells.len());
    let mut failures = Vec::new();
    for chunk in ells.chunks(NODE_CHUNK) {
        for r in solve_nodes(pencil, rule, b, opts, chunk) {
            match r {
                Ok(node) => {
                    for (ui, xi) in u.iter_mut().zip(&node.solution) {
                        *ui += node.weight * xi;
                    }
                    reports.push(node.report);
                }
                Err(f) => failures.push(f),
            }
        }
    }
    if failures.is_empty() {
        Ok((u, reports))
    } else {
        Err(QuadratureError::NodeFailures(failures))
    }
}

/// `Q_k^{-β}(A_h) π_h f` as a finite element function.
pub fn apply_fractional_inverse(
    sys: &FemSystem,
    rule: &SincRule,
    rhs: Rhs<'_>,
    opts: &FractionalOptions,
) -> Result<(FieldVector, Vec<SolveReport>), QuadratureError> {
    let b = rhs.load(&sys.mesh)?;
    let (u, reports) = apply_to_pencil(sys.pencil(), rule, &b, opts)?;
    Ok((FieldVector::new(sys.mesh.clone(), u), reports))
}
