//! Reference solutions that do not go through the quadrature.
//!
//! For a symmetric form the pencil `(K, M)` is diagonalized densely,
//! `KΨ = MΨ diag(λ)` with `ΨᵀMΨ = I`, and `A_h^{-β}π_h f` is evaluated
//! mode by mode. For the convection-diffusion form the closed-form
//! manufactured solution obtained by the exponential transform
//! `v = e^{−b(x+y)/2} w` is provided.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::assembly::FemSystem;
use crate::field::FieldVector;
use crate::sincquad::{QuadratureError, Rhs};

/// Largest system the dense eigensolver accepts.
pub const MAX_DENSE_DOFS: usize = 5000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("spectral oracle needs a symmetric form (asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("{dofs} dofs exceed the dense limit of {MAX_DENSE_DOFS}")]
    TooLarge { dofs: usize },
    #[error("mass matrix is not positive definite")]
    MassNotSpd,
    #[error("pencil has a non-positive eigenvalue {0:.3e}")]
    NonPositiveEigenvalue(f64),
    #[error("exponent {value} outside [{lo}, {hi}]")]
    ExponentOutOfRange { value: f64, lo: f64, hi: f64 },
    #[error("vector length {got} does not match the decomposition ({expected})")]
    LengthMismatch { got: usize, expected: usize },
    #[error(transparent)]
    Rhs(#[from] QuadratureError),
}

/// Eigenpairs of the symmetric pencil, eigenvalues ascending and
/// eigenvectors (columns) M-orthonormal.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
}

fn to_dense(m: &crate::sparse::SparseMatrix) -> DMatrix<f64> {
    let n = m.dim();
    let mut d = DMatrix::zeros(n, n);
    for (i, j, v) in m.iter() {
        d[(i, j)] = v;
    }
    d
}

impl SpectralDecomposition {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn eigenvector(&self, j: usize) -> Vec<f64> {
        self.eigenvectors.column(j).iter().copied().collect()
    }

    /// `Ψ diag(g(λ)) Ψᵀ b`
    pub fn apply_function(&self, b: &[f64], g: impl Fn(f64) -> f64) -> Result<Vec<f64>, OracleError> {
        self.check_len(b.len())?;
        let bv = DVector::from_column_slice(b);
        let mut c = self.eigenvectors.tr_mul(&bv);
        for (cj, &l) in c.iter_mut().zip(&self.eigenvalues) {
            *cj *= g(l);
        }
        Ok((&self.eigenvectors * c).iter().copied().collect())
    }

    fn check_len(&self, got: usize) -> Result<(), OracleError> {
        if got == self.len() {
            Ok(())
        } else {
            Err(OracleError::LengthMismatch {
                got,
                expected: self.len(),
            })
        }
    }
}

/// Dense generalized eigensolve of `(K, M)` through the Cholesky factor
/// `M = LLᵀ`: `L⁻¹KL⁻ᵀ = VΛVᵀ`, `Ψ = L⁻ᵀV`.
pub fn dense_spectral(sys: &FemSystem) -> Result<SpectralDecomposition, OracleError> {
    if !sys.is_symmetric() {
        return Err(OracleError::NotSymmetric(sys.form.asymmetry()));
    }
    let n = sys.dim();
    if n > MAX_DENSE_DOFS {
        return Err(OracleError::TooLarge { dofs: n });
    }
    let mass = to_dense(&sys.mass);
    let form = to_dense(&sys.form);
    let chol = mass.cholesky().ok_or(OracleError::MassNotSpd)?;
    let l = chol.l();
    let y = l.solve_lower_triangular(&form).ok_or(OracleError::MassNotSpd)?;
    let c = l
        .solve_lower_triangular(&y.transpose())
        .ok_or(OracleError::MassNotSpd)?;
    let c = (&c + c.transpose()) * 0.5;
    let eig = c.symmetric_eigen();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues: Vec<f64> = order.iter().map(|&j| eig.eigenvalues[j]).collect();
    if let Some(&min) = eigenvalues.first() {
        if min <= 0.0 {
            return Err(OracleError::NonPositiveEigenvalue(min));
        }
    }
    let v = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    let psi = l
        .transpose()
        .solve_upper_triangular(&v)
        .ok_or(OracleError::MassNotSpd)?;
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors: psi,
    })
}

/// `S_h^{-β} π_h f = Ψ diag(λ^{−β}) Ψᵀ b`, `b` the load vector of `f`.
///
/// `β = 0` gives `π_h f` and `β = 1` gives `K⁻¹b`; both are accepted here.
pub fn spectral_fractional(
    dec: &SpectralDecomposition,
    sys: &FemSystem,
    beta: f64,
    rhs: Rhs<'_>,
) -> Result<FieldVector, OracleError> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(OracleError::ExponentOutOfRange {
            value: beta,
            lo: 0.0,
            hi: 1.0,
        });
    }
    let b = rhs.load(&sys.mesh)?;
    let u = dec.apply_function(&b, |l| l.powf(-beta))?;
    Ok(FieldVector::new(sys.mesh.clone(), u))
}

/// Discrete dotted norm `(Σ_j λ_j^s (ψ_jᵀ M v)²)^{1/2}`, `s ∈ [0, 2]`.
pub fn dotted_norm(dec: &SpectralDecomposition, sys: &FemSystem, s: f64, v: &FieldVector) -> Result<f64, OracleError> {
    if !(0.0..=2.0).contains(&s) {
        return Err(OracleError::ExponentOutOfRange {
            value: s,
            lo: 0.0,
            hi: 2.0,
        });
    }
    dec.check_len(v.len())?;
    let mv = DVector::from_vec(sys.mass.mul_vec(v.values()));
    let c = dec.eigenvectors.tr_mul(&mv);
    let sum: f64 = c.iter().zip(&dec.eigenvalues).map(|(cj, l)| l.powf(s) * cj * cj).sum();
    Ok(sum.sqrt())
}

/// Closed-form pair for `∫ ∇u·∇v + b(u_x + u_y)v` on the unit square:
/// `f = e^{b(x+y)/2} sin(πx) sin(2πy)` and
/// `u = A^{-β} f = e^{b(x+y)/2} λ^{−β} sin(πx) sin(2πy)` with
/// `λ = 5π² + b²/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManufacturedSolution {
    pub beta: f64,
    pub b: f64,
    /// Eigenvalue of the transformed symmetric operator.
    pub lambda: f64,
}

impl ManufacturedSolution {
    pub fn new(beta: f64, b: f64) -> Self {
        Self {
            beta,
            b,
            lambda: 5.0 * PI * PI + 0.5 * b * b,
        }
    }

    fn mode(&self, x: f64, y: f64) -> f64 {
        (0.5 * self.b * (x + y)).exp() * (PI * x).sin() * (2.0 * PI * y).sin()
    }

    pub fn f(&self, x: f64, y: f64) -> f64 {
        self.mode(x, y)
    }

    pub fn u(&self, x: f64, y: f64) -> f64 {
        self.lambda.powf(-self.beta) * self.mode(x, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble, l2_project, CoefficientForm};
    use crate::linsolve::ShiftedSolver;
    use crate::mesh::Mesh;
    use std::sync::Arc;

    fn laplace(level: u32) -> FemSystem {
        assemble(Arc::new(Mesh::uniform(level).unwrap()), CoefficientForm::laplacian()).unwrap()
    }

    fn max_abs(v: impl Iterator<Item = f64>) -> f64 {
        v.fold(0.0, |m, x| m.max(x.abs()))
    }

    #[test]
    fn level_three_smallest_eigenvalue() {
        let sys = laplace(3);
        let dec = dense_spectral(&sys).unwrap();
        let l1 = dec.eigenvalues[0];
        assert!((2.0 * PI * PI..=2.0 * PI * PI * 1.05).contains(&l1), "{l1}");
        // tensor-product formula for Q1 with consistent mass
        let theta = PI / 8.0;
        let one_d = 6.0 * 64.0 * (1.0 - theta.cos()) / (2.0 + theta.cos());
        assert!((l1 - 2.0 * one_d).abs() < 1e-10);
        assert!(dec.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn decomposition_invariants() {
        let sys = laplace(3);
        let dec = dense_spectral(&sys).unwrap();
        let m = to_dense(&sys.mass);
        let k = to_dense(&sys.form);
        let psi = &dec.eigenvectors;
        let gram = psi.transpose() * &m * psi;
        let id = DMatrix::<f64>::identity(dec.len(), dec.len());
        assert!(max_abs((gram - id).iter().copied()) <= 1e-10);
        let lhs = &k * psi;
        let rhs = &m * psi * DMatrix::from_diagonal(&DVector::from_vec(dec.eigenvalues.clone()));
        assert!(max_abs((lhs - rhs).iter().copied()) <= 1e-9);
    }

    #[test]
    fn single_dof() {
        let sys = laplace(1);
        let dec = dense_spectral(&sys).unwrap();
        assert_eq!(dec.len(), 1);
        let expect = sys.form.get(0, 0) / sys.mass.get(0, 0);
        assert!((dec.eigenvalues[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_symmetric() {
        let sys = assemble(
            Arc::new(Mesh::uniform(2).unwrap()),
            CoefficientForm::convection_diffusion(1.0),
        )
        .unwrap();
        assert!(matches!(dense_spectral(&sys), Err(OracleError::NotSymmetric(_))));
    }

    #[test]
    fn fractional_special_exponents() {
        let sys = laplace(3);
        let dec = dense_spectral(&sys).unwrap();
        let f = |x: f64, y: f64| x * y * (1.0 - x) * (1.0 - y) * (1.0 + x);
        let p0 = spectral_fractional(&dec, &sys, 0.0, Rhs::Function(&f)).unwrap();
        let proj = l2_project(&sys, f).unwrap();
        assert!(max_abs(p0.values().iter().zip(proj.values()).map(|(a, b)| a - b)) < 1e-12);

        let p1 = spectral_fractional(&dec, &sys, 1.0, Rhs::Function(&f)).unwrap();
        let b = crate::assembly::assemble_load(&sys.mesh, f).unwrap();
        let (x, _) = ShiftedSolver::default().solve(sys.pencil(), 0.0, &b, 1e-13).unwrap();
        assert!(max_abs(p1.values().iter().zip(&x).map(|(a, b)| a - b)) < 1e-9);

        assert!(spectral_fractional(&dec, &sys, 1.5, Rhs::Function(&f)).is_err());
    }

    #[test]
    fn single_mode_is_scaled() {
        let sys = laplace(3);
        let dec = dense_spectral(&sys).unwrap();
        for j in [0, 5, 20] {
            let psi = dec.eigenvector(j);
            let b = sys.mass.mul_vec(&psi);
            let u = spectral_fractional(&dec, &sys, 0.3, Rhs::Load(&b)).unwrap();
            let scale = dec.eigenvalues[j].powf(-0.3);
            assert!(max_abs(u.values().iter().zip(&psi).map(|(a, p)| a - scale * p)) < 1e-11);
        }
    }

    #[test]
    fn dotted_norms() {
        let sys = laplace(3);
        let dec = dense_spectral(&sys).unwrap();
        let psi1 = FieldVector::new(sys.mesh.clone(), dec.eigenvector(0));
        assert!((dotted_norm(&dec, &sys, 0.0, &psi1).unwrap() - 1.0).abs() < 1e-10);
        assert!((dotted_norm(&dec, &sys, 1.0, &psi1).unwrap() - dec.eigenvalues[0].sqrt()).abs() < 1e-9);

        let v = FieldVector::interpolate(sys.mesh.clone(), |x, y| (3.0 * x).sin() * y * (1.0 - y) * (1.0 - x));
        let l2 = sys.mass.bilinear(v.values(), v.values()).sqrt();
        assert!((dotted_norm(&dec, &sys, 0.0, &v).unwrap() - l2).abs() < 1e-10);
        let h1 = sys.form_sym.bilinear(v.values(), v.values()).sqrt();
        assert!((dotted_norm(&dec, &sys, 1.0, &v).unwrap() - h1).abs() < 1e-10);

        // brute force from the raw eigenpairs
        let mv = sys.mass.mul_vec(v.values());
        let mut sum = 0.0;
        for j in 0..dec.len() {
            let c: f64 = dec.eigenvector(j).iter().zip(&mv).map(|(a, b)| a * b).sum();
            sum += dec.eigenvalues[j].sqrt() * c * c;
        }
        assert!((dotted_norm(&dec, &sys, 0.5, &v).unwrap() - sum.sqrt()).abs() < 1e-10);
        assert!(dotted_norm(&dec, &sys, 2.5, &v).is_err());
    }

    #[test]
    fn parseval() {
        let sys = laplace(3);
        let dec = dense_spectral(&sys).unwrap();
        let b = crate::assembly::assemble_load(&sys.mesh, |x, y| (x - y).cos() * x * y).unwrap();
        let coeffs: f64 = (0..dec.len())
            .map(|j| {
                let c: f64 = dec.eigenvector(j).iter().zip(&b).map(|(a, q)| a * q).sum();
                c * c
            })
            .sum();
        let (minv_b, _) = crate::linsolve::solve_spd(&sys.mass, &b, 1e-14).unwrap();
        let direct: f64 = b.iter().zip(&minv_b).map(|(a, q)| a * q).sum();
        assert!((coeffs - direct).abs() < 1e-8);
    }

    #[test]
    fn manufactured_values() {
        let ms = ManufacturedSolution::new(0.5, 1.0);
        assert!((ms.lambda - 49.8480).abs() < 1e-4);
        for x in [0.0, 0.1, 0.37, 0.9] {
            assert!(ms.u(x, 0.5).abs() < 1e-15);
        }
        let expect = 0.25f64.exp() * ms.lambda.powf(-0.5) * (PI / 4.0).sin() * (PI / 2.0).sin();
        assert!((ms.u(0.25, 0.25) - expect).abs() < 1e-15);
        assert!((ms.u(0.25, 0.25) - 0.12860).abs() < 5e-6);
    }
}
