//! Q1 finite element assembly of the mass matrix, the matrix of the real
//! second-order form
//!
//! ```text
//! A(u, v) = ∫ Σ_ij a_ij ∂_i u ∂_j v + Σ_i (a_i0 ∂_i u v + a_0i u ∂_i v) + a_00 u v
//! ```
//!
//! and load vectors. Rows index test functions, columns trial functions,
//! so `K_ij = A(φ_j, φ_i)` and `A_h = M⁻¹K`. Boundary rows and columns are
//! eliminated (homogeneous Dirichlet data everywhere).

use std::fmt;
use std::sync::Arc;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::field::FieldVector;
use crate::linsolve::{solve_spd, SolveError};
use crate::mesh::Mesh;
use crate::quadrature::{q1_local_gradients, q1_values, GAUSS2, GAUSS3};
use crate::sparse::SparseMatrix;

/// Relative residual used for the mass solves behind the L² projection.
pub const PROJECTION_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssemblyError {
    #[error("non-finite {what} coefficient in cell {cell} at ({x}, {y})")]
    NonFiniteCoefficient {
        what: &'static str,
        cell: usize,
        x: f64,
        y: f64,
    },
    #[error("non-finite right-hand side in cell {cell} at ({x}, {y})")]
    NonFiniteLoad { cell: usize, x: f64, y: f64 },
    #[error("mass solve failed: {0}")]
    Solve(#[from] SolveError),
}

pub type MatrixField = Arc<dyn Fn(f64, f64) -> [[f64; 2]; 2] + Send + Sync>;
pub type VectorField = Arc<dyn Fn(f64, f64) -> [f64; 2] + Send + Sync>;
pub type ScalarField = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Real coefficients `a_ij`, `a_i0`, `a_0i`, `a_00` of the form.
///
/// Coercivity is the caller's responsibility; [`check_coercivity`] only
/// samples a necessary condition.
#[derive(Clone)]
pub struct CoefficientForm {
    pub diffusion: MatrixField,
    pub convection: VectorField,
    pub skew: VectorField,
    pub reaction: ScalarField,
}

impl fmt::Debug for CoefficientForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = (self.diffusion)(0.5, 0.5);
        let c = (self.convection)(0.5, 0.5);
        let s = (self.skew)(0.5, 0.5);
        let r = (self.reaction)(0.5, 0.5);
        f.debug_struct("CoefficientForm")
            .field("diffusion@center", &d)
            .field("convection@center", &c)
            .field("skew@center", &s)
            .field("reaction@center", &r)
            .finish()
    }
}

impl CoefficientForm {
    /// `∫ ∇u·∇v`
    pub fn laplacian() -> Self {
        Self {
            diffusion: Arc::new(|_, _| [[1.0, 0.0], [0.0, 1.0]]),
            convection: Arc::new(|_, _| [0.0, 0.0]),
            skew: Arc::new(|_, _| [0.0, 0.0]),
            reaction: Arc::new(|_, _| 0.0),
        }
    }

    /// `∫ ∇u·∇v + b (u_x + u_y) v`
    pub fn convection_diffusion(b: f64) -> Self {
        Self::laplacian().with_convection(move |_, _| [b, b])
    }

    pub fn with_diffusion(mut self, f: impl Fn(f64, f64) -> [[f64; 2]; 2] + Send + Sync + 'static) -> Self {
        self.diffusion = Arc::new(f);
        self
    }

    pub fn with_convection(mut self, f: impl Fn(f64, f64) -> [f64; 2] + Send + Sync + 'static) -> Self {
        self.convection = Arc::new(f);
        self
    }

    pub fn with_skew(mut self, f: impl Fn(f64, f64) -> [f64; 2] + Send + Sync + 'static) -> Self {
        self.skew = Arc::new(f);
        self
    }

    pub fn with_reaction(mut self, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.reaction = Arc::new(f);
        self
    }
}

/// Assembled discrete operator on the interior dofs of a mesh.
#[derive(Debug, Clone)]
pub struct FemSystem {
    pub mesh: Arc<Mesh>,
    /// `M`
    pub mass: SparseMatrix,
    /// `K`
    pub form: SparseMatrix,
    /// `(K + Kᵀ)/2`, the matrix of the symmetric part of the form.
    pub form_sym: SparseMatrix,
    /// Pure Laplacian stiffness, used for H¹ seminorms and the coercivity proxy.
    pub laplacian: SparseMatrix,
    pub coefficients: CoefficientForm,
}

impl FemSystem {
    pub fn dim(&self) -> usize {
        self.mass.dim()
    }

    pub fn is_symmetric(&self) -> bool {
        self.form.is_symmetric(1e-13)
    }

    pub fn pencil(&self) -> crate::linsolve::Pencil<'_> {
        crate::linsolve::Pencil::new(&self.mass, &self.form)
    }
}

type ElementBlock = ([usize; 4], [[f64; 4]; 4], [[f64; 4]; 4]);

fn element_matrices(mesh: &Mesh, coeffs: &CoefficientForm, cell: usize) -> Result<ElementBlock, AssemblyError> {
    let h = mesh.h();
    let [x0, y0] = mesh.cell_origin(cell);
    let mut mass = [[0.0; 4]; 4];
    let mut form = [[0.0; 4]; 4];
    for (s, t, w) in GAUSS2.tensor() {
        let (x, y) = (x0 + s * h, y0 + t * h);
        let a = (coeffs.diffusion)(x, y);
        let conv = (coeffs.convection)(x, y);
        let skew = (coeffs.skew)(x, y);
        let react = (coeffs.reaction)(x, y);
        let checks: [(&'static str, bool); 4] = [
            ("diffusion", a.iter().flatten().all(|v| v.is_finite())),
            ("convection", conv.iter().all(|v| v.is_finite())),
            ("skew", skew.iter().all(|v| v.is_finite())),
            ("reaction", react.is_finite()),
        ];
        if let Some((what, _)) = checks.iter().find(|(_, ok)| !ok) {
            return Err(AssemblyError::NonFiniteCoefficient { what, cell, x, y });
        }
        let phi = q1_values(s, t);
        let grad = q1_local_gradients(s, t).map(|[gs, gt]| [gs / h, gt / h]);
        let wj = w * h * h;
        for i in 0..4 {
            for j in 0..4 {
                // test φ_i, trial φ_j
                let mut v = 0.0;
                for p in 0..2 {
                    for q in 0..2 {
                        v += a[p][q] * grad[j][p] * grad[i][q];
                    }
                    v += conv[p] * grad[j][p] * phi[i];
                    v += skew[p] * phi[j] * grad[i][p];
                }
                v += react * phi[j] * phi[i];
                form[i][j] += wj * v;
                mass[i][j] += wj * phi[i] * phi[j];
            }
        }
    }
    Ok((mesh.cell_nodes_unchecked(cell), mass, form))
}

/// Mass and form matrices over all nodes, boundary included.
pub fn assemble_full(mesh: &Mesh, coeffs: &CoefficientForm) -> Result<(SparseMatrix, SparseMatrix), AssemblyError> {
    let blocks = (0..mesh.num_cells())
        .into_par_iter()
        .map(|c| element_matrices(mesh, coeffs, c))
        .collect::<Result<Vec<_>, _>>()?;
    let mut mt = Vec::with_capacity(16 * blocks.len());
    let mut kt = Vec::with_capacity(16 * blocks.len());
    for (nodes, me, ke) in &blocks {
        for i in 0..4 {
            for j in 0..4 {
                mt.push((nodes[i], nodes[j], me[i][j]));
                kt.push((nodes[i], nodes[j], ke[i][j]));
            }
        }
    }
    let n = mesh.num_nodes();
    Ok((SparseMatrix::from_triplets(n, &mt), SparseMatrix::from_triplets(n, &kt)))
}

fn interior_map(mesh: &Mesh) -> Vec<Option<usize>> {
    (0..mesh.num_nodes()).map(|n| mesh.dof(n)).collect()
}

/// Assembles `M`, `K`, `(K + Kᵀ)/2` and the Laplacian stiffness over the
/// interior dofs, using 2×2 Gauss points per cell.
pub fn assemble(mesh: Arc<Mesh>, coeffs: CoefficientForm) -> Result<FemSystem, AssemblyError> {
    let keep = interior_map(&mesh);
    let dofs = mesh.num_dofs();
    let (mass_full, form_full) = assemble_full(&mesh, &coeffs)?;
    let (_, lap_full) = assemble_full(&mesh, &CoefficientForm::laplacian())?;
    let mass = mass_full.restrict(&keep, dofs);
    let form = form_full.restrict(&keep, dofs);
    let laplacian = lap_full.restrict(&keep, dofs);
    let form_sym = form.symmetric_part();
    Ok(FemSystem {
        mesh,
        mass,
        form,
        form_sym,
        laplacian,
        coefficients: coeffs,
    })
}

/// Load vector `b_i = ∫ f φ_i` over the interior dofs, 3×3 Gauss points per cell.
pub fn assemble_load(mesh: &Mesh, f: impl Fn(f64, f64) -> f64 + Sync) -> Result<Vec<f64>, AssemblyError> {
    let h = mesh.h();
    let locals = (0..mesh.num_cells())
        .into_par_iter()
        .map(|cell| {
            let [x0, y0] = mesh.cell_origin(cell);
            let mut local = [0.0; 4];
            for (s, t, w) in GAUSS3.tensor() {
                let (x, y) = (x0 + s * h, y0 + t * h);
                let fv = f(x, y);
                if !fv.is_finite() {
                    return Err(AssemblyError::NonFiniteLoad { cell, x, y });
                }
                let phi = q1_values(s, t);
                for a in 0..4 {
                    local[a] += w * h * h * fv * phi[a];
                }
            }
            Ok((mesh.cell_nodes_unchecked(cell), local))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut b = vec![0.0; mesh.num_dofs()];
    for (nodes, local) in &locals {
        for a in 0..4 {
            if let Some(d) = mesh.dof(nodes[a]) {
                b[d] += local[a];
            }
        }
    }
    Ok(b)
}

/// `π_h f`: solves `M c = b` with `b` the load vector of `f`.
pub fn l2_project(sys: &FemSystem, f: impl Fn(f64, f64) -> f64 + Sync) -> Result<FieldVector, AssemblyError> {
    let b = assemble_load(&sys.mesh, f)?;
    let (c, _) = solve_spd(&sys.mass, &b, PROJECTION_TOL)?;
    Ok(FieldVector::new(sys.mesh.clone(), c))
}

/// Outcome of the sampled coercivity proxy.
#[derive(Debug, Clone, PartialEq)]
pub struct CoercivityCheck {
    /// Smallest observed `⟨K_sym v, v⟩ / ⟨K_lap v, v⟩`.
    pub min_ratio: f64,
    pub threshold: f64,
    pub passed: bool,
}

/// Samples `⟨K_sym v, v⟩ ≥ ½ c₀ ⟨K_lap v, v⟩` on random vectors. A failure is
/// logged as a warning; coercivity itself is the caller's contract.
pub fn check_coercivity(sys: &FemSystem, c0_est: f64, samples: usize, seed: u64) -> CoercivityCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let threshold = 0.5 * c0_est;
    let mut min_ratio = f64::INFINITY;
    for _ in 0..samples {
        let v: Vec<f64> = (0..sys.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let num = sys.form_sym.bilinear(&v, &v);
        let den = sys.laplacian.bilinear(&v, &v);
        if den > 0.0 {
            min_ratio = min_ratio.min(num / den);
        }
    }
    let passed = min_ratio >= threshold;
    if !passed {
        warn!("coercivity proxy failed: min ratio {min_ratio:.3e} < {threshold:.3e}");
    }
    CoercivityCheck {
        min_ratio,
        threshold,
        passed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn mesh(level: u32) -> Arc<Mesh> {
        Arc::new(Mesh::uniform(level).unwrap())
    }

    #[test]
    fn laplacian_level_one_is_eight_thirds() {
        let sys = assemble(mesh(1), CoefficientForm::laplacian()).unwrap();
        assert_eq!(sys.dim(), 1);
        assert!((sys.form.get(0, 0) - 8.0 / 3.0).abs() < 1e-14);
        // one interior hat: ∫φ² = 4·h²/9
        assert!((sys.mass.get(0, 0) - 4.0 * 0.25 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn symmetric_coefficients_give_symmetric_k() {
        let coeffs = CoefficientForm::laplacian()
            .with_diffusion(|x, y| [[1.0 + x, 0.3 * y], [0.3 * y, 2.0 + x * y]])
            .with_reaction(|x, _| 1.0 + x);
        let sys = assemble(mesh(3), coeffs).unwrap();
        assert!(sys.form.asymmetry() <= 1e-13 * sys.form.max_abs());
        assert!(sys.is_symmetric());
    }

    #[test]
    fn convection_part_is_skew() {
        let sys = assemble(mesh(3), CoefficientForm::convection_diffusion(1.0)).unwrap();
        assert!(!sys.is_symmetric());
        let skew = SparseMatrix::linear_combination(1.0, &sys.form, -1.0, &sys.form.transpose());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let v: Vec<f64> = (0..sys.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            assert!(skew.bilinear(&v, &v).abs() < 1e-12);
        }
        // with zero Dirichlet data the convection block is itself skew, so
        // K − Kᵀ is twice the convection matrix
        let conv_only = CoefficientForm::laplacian()
            .with_diffusion(|_, _| [[0.0, 0.0], [0.0, 0.0]])
            .with_convection(|_, _| [1.0, 1.0]);
        let c = assemble(mesh(3), conv_only).unwrap().form;
        let twice = SparseMatrix::linear_combination(2.0, &c, -1.0, &skew);
        assert!(twice.max_abs() < 1e-13);
        // form_sym is the Laplacian
        let d = SparseMatrix::linear_combination(1.0, &sys.form_sym, -1.0, &sys.laplacian);
        assert!(d.max_abs() < 1e-13);
    }

    #[test]
    fn form_sym_is_average() {
        let sys = assemble(mesh(2), CoefficientForm::convection_diffusion(3.0)).unwrap();
        for (i, j, v) in sys.form_sym.iter() {
            assert!((v - 0.5 * (sys.form.get(i, j) + sys.form.get(j, i))).abs() <= 1e-13);
        }
    }

    #[test]
    fn full_matrices_constant_invariants() {
        for level in 1..=4 {
            let m = mesh(level);
            let (mass, lap) = assemble_full(&m, &CoefficientForm::laplacian()).unwrap();
            let total: f64 = mass.values().iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            let ones = vec![1.0; m.num_nodes()];
            assert!(lap.mul_vec(&ones).iter().all(|v| v.abs() <= 1e-12));
        }
    }

    #[test]
    fn non_finite_coefficient_names_cell() {
        let bad = CoefficientForm::laplacian().with_reaction(|x, y| if x > 0.75 && y > 0.75 { f64::NAN } else { 0.0 });
        match assemble(mesh(1), bad) {
            Err(AssemblyError::NonFiniteCoefficient { what, cell, .. }) => {
                assert_eq!(what, "reaction");
                assert_eq!(cell, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn load_of_constant_is_interior_hat_mass() {
        let b = assemble_load(&mesh(2), |_, _| 1.0).unwrap();
        assert!((b.iter().sum::<f64>() - 0.5625).abs() < 1e-14);
        let z = assemble_load(&mesh(2), |_, _| 0.0).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
        assert!(matches!(
            assemble_load(&mesh(2), |x, _| if x > 0.9 { f64::NAN } else { 1.0 }),
            Err(AssemblyError::NonFiniteLoad { .. })
        ));
    }

    /// Adaptive Simpson on [a,b]; test-only reference integrator.
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        #[allow(clippy::too_many_arguments)]
        fn rec(
            f: &dyn Fn(f64) -> f64,
            a: f64,
            b: f64,
            fa: f64,
            fm: f64,
            fb: f64,
            whole: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                    + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
            }
        }
        let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
        rec(f, a, b, fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb), tol, 40)
    }

    #[test]
    fn center_load_matches_reference_quadrature() {
        let m = mesh(2);
        let f = |x: f64, y: f64| (PI * x).sin() * (2.0 * PI * y).sin();
        let b = assemble_load(&m, f).unwrap();
        let center = m.dof(m.node_index(2, 2)).unwrap();
        let hat = |x: f64, y: f64| (1.0 - (x - 0.5).abs() / 0.25).max(0.0) * (1.0 - (y - 0.5).abs() / 0.25).max(0.0);
        // split at the kinks of the hat so each piece is smooth
        let mut reference = 0.0;
        for xs in [(0.25, 0.5), (0.5, 0.75)] {
            for ys in [(0.25, 0.5), (0.5, 0.75)] {
                let inner = |x: f64| simpson(&|y| f(x, y) * hat(x, y), ys.0, ys.1, 1e-14);
                reference += simpson(&inner, xs.0, xs.1, 1e-13);
            }
        }
        assert!((b[center] - reference).abs() < 1e-10, "{} vs {}", b[center], reference);
    }

    #[test]
    fn projection_is_identity_on_fe_space() {
        let m = mesh(3);
        let sys = assemble(m.clone(), CoefficientForm::laplacian()).unwrap();
        let v = FieldVector::interpolate(m.clone(), |x, y| x * (1.0 - x) * y * (1.0 - y) * (3.0 + x));
        let vf = v.clone();
        let p = l2_project(&sys, move |x, y| vf.evaluate(x, y).unwrap()).unwrap();
        for (a, b) in p.values().iter().zip(v.values()) {
            assert!((a - b).abs() < 1e-11);
        }
        let z = l2_project(&sys, |_, _| 0.0).unwrap();
        assert!(z.values().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn mass_is_positive_definite() {
        let sys = assemble(mesh(3), CoefficientForm::convection_diffusion(1.0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let v: Vec<f64> = (0..sys.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            assert!(sys.mass.bilinear(&v, &v) > 0.0);
        }
        assert!(sys.mass.is_symmetric(0.0));
    }

    #[test]
    fn coercivity_proxy() {
        let sys = assemble(mesh(3), CoefficientForm::convection_diffusion(5.0)).unwrap();
        let ok = check_coercivity(&sys, 1.0, 100, 1);
        assert!(ok.passed);
        assert!((ok.min_ratio - 1.0).abs() < 1e-12);
        let weak = assemble(
            mesh(3),
            CoefficientForm::laplacian().with_diffusion(|_, _| [[0.1, 0.0], [0.0, 0.1]]),
        )
        .unwrap();
        assert!(!check_coercivity(&weak, 1.0, 100, 1).passed);
    }
}
