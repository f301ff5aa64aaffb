//! Coefficient vectors of bilinear finite element functions.

use std::sync::Arc;

use crate::mesh::Mesh;
use crate::quadrature::q1_values;

/// A function in the Q1 space with homogeneous Dirichlet data, stored by
/// its values at the interior nodes of `mesh`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldVector {
    mesh: Arc<Mesh>,
    values: Vec<f64>,
}

impl FieldVector {
    pub fn new(mesh: Arc<Mesh>, values: Vec<f64>) -> Self {
        assert_eq!(
            values.len(),
            mesh.num_dofs(),
            "field length must match interior dof count"
        );
        Self { mesh, values }
    }

    pub fn zeros(mesh: Arc<Mesh>) -> Self {
        let n = mesh.num_dofs();
        Self::new(mesh, vec![0.0; n])
    }

    /// Nodal interpolant of `f` (boundary values are dropped).
    pub fn interpolate(mesh: Arc<Mesh>, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..mesh.num_dofs())
            .map(|d| {
                let [x, y] = mesh.node_coords(mesh.dof_node(d));
                f(x, y)
            })
            .collect();
        Self::new(mesh, values)
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_mesh(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.mesh, &other.mesh) || *self.mesh == *other.mesh
    }

    /// Value of a mesh node, zero on the boundary.
    pub fn node_value(&self, node: usize) -> f64 {
        self.mesh.dof(node).map_or(0.0, |d| self.values[d])
    }

    /// Nodal values of one cell, counterclockwise.
    pub fn cell_values(&self, cell: usize) -> [f64; 4] {
        self.mesh.cell_nodes_unchecked(cell).map(|n| self.node_value(n))
    }

    /// Bilinear interpolation at a point of the closed unit square.
    pub fn evaluate(&self, x: f64, y: f64) -> Option<f64> {
        let (cell, s, t) = self.mesh.locate(x, y)?;
        let nodal = self.cell_values(cell);
        let shape = q1_values(s, t);
        Some(nodal.iter().zip(&shape).map(|(v, p)| v * p).sum())
    }
}
