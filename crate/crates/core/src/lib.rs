//! Fractional powers `A^{-β}f`, `β ∈ (0, 1)`, of second-order elliptic
//! operators on the unit square.
//!
//! The operator is discretized with bilinear finite elements on a uniform
//! quadrilateral mesh, and the Balakrishnan integral for `A_h^{-β}` is
//! approximated by an exponentially convergent sinc quadrature whose nodes
//! each require one shifted solve `(μM + K)x = b`.
//!
//! ```no_run
//! use std::sync::Arc;
//! use fracpow::{assemble, apply_fractional_inverse, CoefficientForm, FractionalOptions, Mesh, Rhs, SincRule};
//!
//! let mesh = Arc::new(Mesh::uniform(5).unwrap());
//! let sys = assemble(mesh, CoefficientForm::convection_diffusion(1.0)).unwrap();
//! let rule = SincRule::balanced(0.5, 0.3).unwrap();
//! let f = |_x: f64, _y: f64| 1.0;
//! let (u, _reports) = apply_fractional_inverse(&sys, &rule, Rhs::Function(&f), &FractionalOptions::default()).unwrap();
//! println!("u(0.5, 0.5) = {:?}", u.evaluate(0.5, 0.5));
//! ```

pub mod assembly;
pub mod field;
pub mod harness;
pub mod linsolve;
pub mod mesh;
pub mod norms;
pub mod oracle;
pub mod quadrature;
pub mod sincquad;
pub mod sparse;

pub use assembly::{assemble, assemble_load, l2_project, AssemblyError, CoefficientForm, FemSystem};
pub use field::FieldVector;
pub use linsolve::{solve_shifted, solve_spd, Method, Pencil, ShiftedSolver, SolveError, SolveReport};
pub use mesh::{Mesh, MeshError};
pub use norms::{error_between, error_l2, Norm, NormError};
pub use oracle::{dense_spectral, dotted_norm, spectral_fractional, ManufacturedSolution, SpectralDecomposition};
pub use sincquad::{
    apply_fractional_inverse, quadrature_error_estimate, FractionalOptions, QuadratureError, Rhs, SincRule,
};
pub use sparse::SparseMatrix;
