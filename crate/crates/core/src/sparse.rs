//! Square sparse matrices in compressed row storage.

use std::io::{self, Write};

/// CSR matrix with strictly increasing column indices per row and no
/// stored zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    dim: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are
    /// summed and entries that end up exactly zero are dropped.
    pub fn from_triplets(dim: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; dim + 1];
        for &(r, c, _) in triplets {
            assert!(r < dim && c < dim, "triplet ({r}, {c}) outside {dim}x{dim}");
            counts[r + 1] += 1;
        }
        for i in 0..dim {
            counts[i + 1] += counts[i];
        }
        // bucket by row, keeping input order inside each row
        let mut next = counts.clone();
        let mut bucket = vec![(0usize, 0.0f64); triplets.len()];
        for &(r, c, v) in triplets {
            bucket[next[r]] = (c, v);
            next[r] += 1;
        }

        let mut row_offsets = Vec::with_capacity(dim + 1);
        let mut col_indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_offsets.push(0);
        for r in 0..dim {
            let row = &mut bucket[counts[r]..counts[r + 1]];
            // stable sort keeps the summation order of duplicates fixed
            row.sort_by_key(|&(c, _)| c);
            let mut k = 0;
            while k < row.len() {
                let c = row[k].0;
                let mut sum = 0.0;
                while k < row.len() && row[k].0 == c {
                    sum += row[k].1;
                    k += 1;
                }
                if sum != 0.0 {
                    col_indices.push(c);
                    values.push(sum);
                }
            }
            row_offsets.push(col_indices.len());
        }
        Self {
            dim,
            row_offsets,
            col_indices,
            values,
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            row_offsets: (0..=dim).collect(),
            col_indices: (0..dim).collect(),
            values: vec![1.0; dim],
        }
    }

    /// Dense row-major input, zeros skipped.
    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let dim = rows.len();
        let triplets: Vec<_> = rows
            .iter()
            .enumerate()
            .flat_map(|(i, row)| {
                assert_eq!(row.len(), dim, "matrix must be square");
                row.iter().enumerate().map(move |(j, &v)| (i, j, v))
            })
            .collect();
        Self::from_triplets(dim, &triplets)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_offsets[i]..self.row_offsets[i + 1];
        self.col_indices[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    /// All stored entries in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.dim).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_offsets[i]..self.row_offsets[i + 1];
        match self.col_indices[range.clone()].binary_search(&j) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    /// `y = A x`
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.dim);
        assert_eq!(y.len(), self.dim);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                acc += self.values[k] * x[self.col_indices[k]];
            }
            *yi = acc;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// Quadratic form `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let ay = self.mul_vec(y);
        x.iter().zip(&ay).map(|(a, b)| a * b).sum()
    }

    pub fn transpose(&self) -> Self {
        let triplets: Vec<_> = self.iter().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.dim, &triplets)
    }

    /// `a·A + b·B` on the union of both patterns.
    pub fn linear_combination(a: f64, lhs: &Self, b: f64, rhs: &Self) -> Self {
        assert_eq!(lhs.dim, rhs.dim);
        let mut row_offsets = Vec::with_capacity(lhs.dim + 1);
        let mut col_indices = Vec::with_capacity(lhs.nnz().max(rhs.nnz()));
        let mut values = Vec::with_capacity(lhs.nnz().max(rhs.nnz()));
        row_offsets.push(0);
        for i in 0..lhs.dim {
            let mut p = lhs.row(i).peekable();
            let mut q = rhs.row(i).peekable();
            loop {
                let (c, v) = match (p.peek().copied(), q.peek().copied()) {
                    (None, None) => break,
                    (Some((cp, vp)), None) => {
                        p.next();
                        (cp, a * vp)
                    }
                    (None, Some((cq, vq))) => {
                        q.next();
                        (cq, b * vq)
                    }
                    (Some((cp, vp)), Some((cq, vq))) => {
                        if cp < cq {
                            p.next();
                            (cp, a * vp)
                        } else if cq < cp {
                            q.next();
                            (cq, b * vq)
                        } else {
                            p.next();
                            q.next();
                            (cp, a * vp + b * vq)
                        }
                    }
                };
                if v != 0.0 {
                    col_indices.push(c);
                    values.push(v);
                }
            }
            row_offsets.push(col_indices.len());
        }
        Self {
            dim: lhs.dim,
            row_offsets,
            col_indices,
            values,
        }
    }

    /// `(A + Aᵀ) / 2`
    pub fn symmetric_part(&self) -> Self {
        Self::linear_combination(0.5, self, 0.5, &self.transpose())
    }

    /// Largest `|A_ij − A_ji|`.
    pub fn asymmetry(&self) -> f64 {
        self.iter()
            .map(|(i, j, v)| (v - self.get(j, i)).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Symmetric up to `tol` relative to the largest entry.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.asymmetry() <= tol * self.max_abs().max(f64::MIN_POSITIVE)
    }

    /// Keeps the rows and columns with `Some(new_index)` in `keep`.
    pub fn restrict(&self, keep: &[Option<usize>], new_dim: usize) -> Self {
        assert_eq!(keep.len(), self.dim);
        let triplets: Vec<_> = self
            .iter()
            .filter_map(|(i, j, v)| Some((keep[i]?, keep[j]?, v)))
            .collect();
        Self::from_triplets(new_dim, &triplets)
    }

    /// Lower and upper bandwidth.
    pub fn bandwidths(&self) -> (usize, usize) {
        self.iter().fold((0, 0), |(lo, up), (i, j, _)| {
            if i > j {
                (lo.max(i - j), up)
            } else {
                (lo, up.max(j - i))
            }
        })
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.dim]; self.dim];
        for (i, j, v) in self.iter() {
            out[i][j] = v;
        }
        out
    }

    /// Matrix Market coordinate output with 1-based indices.
    pub fn write_matrix_market<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(out, "{} {} {}", self.dim, self.dim, self.nnz())?;
        for (i, j, v) in self.iter() {
            writeln!(out, "{} {} {:.17e}", i + 1, j + 1, v)?;
        }
        Ok(())
    }
}

pub(crate) fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

pub(crate) fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}
