//! Uniform structured quadrilateral meshes of the unit square.
//!
//! Nodes and cells are numbered lexicographically with x running fastest.
//! Every boundary node carries a homogeneous Dirichlet condition and is
//! excluded from the degree-of-freedom numbering.

use thiserror::Error;

/// Largest refinement level accepted by [`Mesh::uniform`] (~16.8M cells).
pub const MAX_LEVEL: u32 = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("refinement level {level} outside 1..={max}")]
    LevelOutOfRange { level: u32, max: u32 },
    #[error("cell index {cell} out of range (mesh has {cells} cells)")]
    CellOutOfRange { cell: usize, cells: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    level: u32,
    cells_per_side: usize,
    h: f64,
    /// `interior_index[node]` is the dof of an interior node, `None` on the boundary.
    interior_index: Vec<Option<usize>>,
    /// Inverse of `interior_index`.
    dof_nodes: Vec<usize>,
}

impl Mesh {
    /// Builds the mesh with `2^level` cells per side.
    pub fn uniform(level: u32) -> Result<Self, MeshError> {
        if !(1..=MAX_LEVEL).contains(&level) {
            return Err(MeshError::LevelOutOfRange { level, max: MAX_LEVEL });
        }
        let n = 1usize << level;
        let side = n + 1;
        let mut interior_index = Vec::with_capacity(side * side);
        let mut dof_nodes = Vec::with_capacity((n - 1) * (n - 1));
        for j in 0..side {
            for i in 0..side {
                if i == 0 || j == 0 || i == n || j == n {
                    interior_index.push(None);
                } else {
                    interior_index.push(Some(dof_nodes.len()));
                    dof_nodes.push(j * side + i);
                }
            }
        }
        Ok(Self {
            level,
            cells_per_side: n,
            h: 1.0 / n as f64,
            interior_index,
            dof_nodes,
        })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn cells_per_side(&self) -> usize {
        self.cells_per_side
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn num_cells(&self) -> usize {
        self.cells_per_side * self.cells_per_side
    }

    pub fn num_nodes(&self) -> usize {
        (self.cells_per_side + 1) * (self.cells_per_side + 1)
    }

    pub fn num_dofs(&self) -> usize {
        self.dof_nodes.len()
    }

    /// Grid position `(i, j)` of a node.
    pub fn node_ij(&self, node: usize) -> (usize, usize) {
        let side = self.cells_per_side + 1;
        (node % side, node / side)
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.cells_per_side + 1) + i
    }

    pub fn node_coords(&self, node: usize) -> [f64; 2] {
        let (i, j) = self.node_ij(node);
        [self.coord(i), self.coord(j)]
    }

    /// Grid coordinate `i·h`, exact at the right end.
    fn coord(&self, i: usize) -> f64 {
        if i == self.cells_per_side {
            1.0
        } else {
            i as f64 * self.h
        }
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.interior_index[node].is_none()
    }

    /// Degree-of-freedom index of a node, `None` for boundary nodes.
    pub fn dof(&self, node: usize) -> Option<usize> {
        self.interior_index[node]
    }

    /// Node carrying a given interior dof.
    pub fn dof_node(&self, dof: usize) -> usize {
        self.dof_nodes[dof]
    }

    pub fn cell_index(&self, i: usize, j: usize) -> usize {
        j * self.cells_per_side + i
    }

    /// Lower-left corner of a cell.
    pub fn cell_origin(&self, cell: usize) -> [f64; 2] {
        let i = cell % self.cells_per_side;
        let j = cell / self.cells_per_side;
        [self.coord(i), self.coord(j)]
    }

    /// Corner nodes of a cell, counterclockwise from the lower-left one.
    pub fn cell_nodes(&self, cell: usize) -> Result<[usize; 4], MeshError> {
        if cell >= self.num_cells() {
            return Err(MeshError::CellOutOfRange {
                cell,
                cells: self.num_cells(),
            });
        }
        Ok(self.cell_nodes_unchecked(cell))
    }

    pub(crate) fn cell_nodes_unchecked(&self, cell: usize) -> [usize; 4] {
        let i = cell % self.cells_per_side;
        let j = cell / self.cells_per_side;
        [
            self.node_index(i, j),
            self.node_index(i + 1, j),
            self.node_index(i + 1, j + 1),
            self.node_index(i, j + 1),
        ]
    }

    /// Cell containing `(x, y)`, together with local coordinates in `[0, 1]²`.
    /// Points on interior cell edges go to the upper/right cell; points on
    /// the far boundary go to the last cell.
    pub fn locate(&self, x: f64, y: f64) -> Option<(usize, f64, f64)> {
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            return None;
        }
        let n = self.cells_per_side;
        let scale = n as f64;
        let i = ((x * scale).floor() as usize).min(n - 1);
        let j = ((y * scale).floor() as usize).min(n - 1);
        let s = x * scale - i as f64;
        let t = y * scale - j as f64;
        Some((self.cell_index(i, j), s, t))
    }
}
