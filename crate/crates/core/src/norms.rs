//! Discretization errors of finite element functions.

use rayon::prelude::*;
use thiserror::Error;

use crate::assembly::FemSystem;
use crate::field::FieldVector;
use crate::mesh::Mesh;
use crate::quadrature::{q1_values, GAUSS3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NormError {
    #[error("field lives on a level-{field} mesh, expected level {expected}")]
    MeshMismatch { field: u32, expected: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    L2,
    H1Semi,
}

fn check(mesh: &Mesh, v: &FieldVector) -> Result<(), NormError> {
    if **v.mesh() == *mesh {
        Ok(())
    } else {
        Err(NormError::MeshMismatch {
            field: v.mesh().level(),
            expected: mesh.level(),
        })
    }
}

/// `‖u_h − u‖_{L²}` with 3×3 Gauss points per cell.
pub fn error_l2(mesh: &Mesh, u_h: &FieldVector, u_exact: impl Fn(f64, f64) -> f64 + Sync) -> Result<f64, NormError> {
    check(mesh, u_h)?;
    let h = mesh.h();
    let per_cell: Vec<f64> = (0..mesh.num_cells())
        .into_par_iter()
        .map(|cell| {
            let [x0, y0] = mesh.cell_origin(cell);
            let nodal = u_h.cell_values(cell);
            let mut acc = 0.0;
            for (s, t, w) in GAUSS3.tensor() {
                let phi = q1_values(s, t);
                let uh: f64 = nodal.iter().zip(&phi).map(|(a, p)| a * p).sum();
                let d = uh - u_exact(x0 + s * h, y0 + t * h);
                acc += w * d * d;
            }
            acc * h * h
        })
        .collect();
    // ordered reduction
    Ok(per_cell.iter().sum::<f64>().sqrt())
}

/// Discrete distance `((u−v)ᵀ M (u−v))^{1/2}` or `((u−v)ᵀ K_lap (u−v))^{1/2}`.
pub fn error_between(sys: &FemSystem, u: &FieldVector, v: &FieldVector, norm: Norm) -> Result<f64, NormError> {
    check(&sys.mesh, u)?;
    check(&sys.mesh, v)?;
    let d: Vec<f64> = u.values().iter().zip(v.values()).map(|(a, b)| a - b).collect();
    let matrix = match norm {
        Norm::L2 => &sys.mass,
        Norm::H1Semi => &sys.laplacian,
    };
    Ok(matrix.bilinear(&d, &d).max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble, CoefficientForm};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn mesh(level: u32) -> Arc<Mesh> {
        Arc::new(Mesh::uniform(level).unwrap())
    }

    #[test]
    fn trivial_values() {
        let m = mesh(3);
        let z = FieldVector::zeros(m.clone());
        assert_eq!(error_l2(&m, &z, |_, _| 0.0).unwrap(), 0.0);
        assert!((error_l2(&m, &z, |_, _| 1.0).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn interpolation_error_is_second_order() {
        let f = |x: f64, y: f64| (PI * x).sin() * (2.0 * PI * y).sin();
        let e4 = {
            let m = mesh(4);
            error_l2(&m, &FieldVector::interpolate(m.clone(), f), f).unwrap()
        };
        let e5 = {
            let m = mesh(5);
            error_l2(&m, &FieldVector::interpolate(m.clone(), f), f).unwrap()
        };
        let ratio = e4 / e5;
        assert!((3.6..=4.4).contains(&ratio), "{ratio}");
    }

    #[test]
    fn self_consistency() {
        let m = mesh(3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = FieldVector::new(m.clone(), (0..m.num_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let e = error_l2(&m, &v, |x, y| v.evaluate(x, y).unwrap()).unwrap();
        assert!(e < 1e-12);
    }

    #[test]
    fn discrete_and_continuum_agree_on_fe_functions() {
        let m = mesh(3);
        let sys = assemble(m.clone(), CoefficientForm::laplacian()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut rand_field =
            || FieldVector::new(m.clone(), (0..m.num_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let (u, v, w) = (rand_field(), rand_field(), rand_field());
        let discrete = error_between(&sys, &u, &v, Norm::L2).unwrap();
        let continuum = error_l2(&m, &u, |x, y| v.evaluate(x, y).unwrap()).unwrap();
        assert!((discrete - continuum).abs() < 1e-12);

        assert_eq!(error_between(&sys, &u, &u, Norm::L2).unwrap(), 0.0);
        assert_eq!(error_between(&sys, &u, &u, Norm::H1Semi).unwrap(), 0.0);
        for norm in [Norm::L2, Norm::H1Semi] {
            let uv = error_between(&sys, &u, &v, norm).unwrap();
            let vw = error_between(&sys, &v, &w, norm).unwrap();
            let uw = error_between(&sys, &u, &w, norm).unwrap();
            assert!(uw <= uv + vw + 1e-14);
        }
    }

    #[test]
    fn mismatch_is_rejected() {
        let a = mesh(2);
        let b = mesh(3);
        let sys = assemble(a.clone(), CoefficientForm::laplacian()).unwrap();
        let v = FieldVector::zeros(b.clone());
        assert_eq!(
            error_l2(&a, &v, |_, _| 0.0),
            Err(NormError::MeshMismatch { field: 3, expected: 2 })
        );
        assert!(error_between(&sys, &v, &v, Norm::L2).is_err());
    }
}
