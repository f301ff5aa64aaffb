//! Solvers for the SPD mass systems `M c = b` and the shifted systems
//! `(μM + K) x = b` that appear at every quadrature node.
//!
//! All solvers start from `x = 0` and report the true relative residual
//! `‖Ax − b‖ / ‖b‖` of the returned iterate.

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::assembly::FemSystem;
use crate::sparse::{norm2, SparseMatrix};

/// Default relative residual target for all solves.
pub const DEFAULT_TOL: f64 = 1e-10;
/// Loosest tolerance accepted by the solvers.
pub const MAX_TOL: f64 = 1e-4;
/// Default GMRES restart length.
pub const DEFAULT_RESTART: usize = 60;
/// Largest banded factorization (stored entries) used as a fallback under
/// [`Method::Auto`].
pub const DIRECT_STORAGE_LIMIT: usize = 12_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_relative_residual: f64,
    pub shift: f64,
    pub wall_time: Duration,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("solver did not reach the requested tolerance: {report:?}")]
    NotConverged { report: SolveReport },
    #[error("tolerance {0} outside (0, {MAX_TOL}]")]
    InvalidTolerance(f64),
    #[error("dimension mismatch: matrix {matrix}, vector {vector}")]
    DimensionMismatch { matrix: usize, vector: usize },
    #[error("zero pivot in column {column}")]
    Singular { column: usize },
    #[error("shift {0} must be finite and non-negative")]
    InvalidShift(f64),
}

impl SolveError {
    pub fn report(&self) -> Option<&SolveReport> {
        match self {
            SolveError::NotConverged { report } => Some(report),
            _ => None,
        }
    }
}

fn check_inputs(a: &SparseMatrix, b: &[f64], tol: f64) -> Result<(), SolveError> {
    if !(tol > 0.0 && tol <= MAX_TOL) {
        return Err(SolveError::InvalidTolerance(tol));
    }
    if a.dim() != b.len() {
        return Err(SolveError::DimensionMismatch {
            matrix: a.dim(),
            vector: b.len(),
        });
    }
    Ok(())
}

fn relative_residual(a: &SparseMatrix, x: &[f64], b: &[f64], bnorm: f64) -> f64 {
    let ax = a.mul_vec(x);
    let r: f64 = ax.iter().zip(b).map(|(p, q)| (q - p) * (q - p)).sum::<f64>().sqrt();
    r / bnorm
}

fn inverse_diagonal(a: &SparseMatrix) -> Vec<f64> {
    a.diagonal()
        .into_iter()
        .map(|d| if d != 0.0 { 1.0 / d } else { 1.0 })
        .collect()
}

fn zero_rhs_report(dim: usize, shift: f64, start: Instant) -> (Vec<f64>, SolveReport) {
    (
        vec![0.0; dim],
        SolveReport {
            iterations: 0,
            final_relative_residual: 0.0,
            shift,
            wall_time: start.elapsed(),
        },
    )
}

/// Jacobi-preconditioned conjugate gradients for a symmetric positive
/// definite matrix. Capped at `10·dim` iterations.
pub fn solve_spd(a: &SparseMatrix, b: &[f64], tol: f64) -> Result<(Vec<f64>, SolveReport), SolveError> {
    pcg(a, b, tol, 0.0)
}

fn pcg(a: &SparseMatrix, b: &[f64], tol: f64, shift: f64) -> Result<(Vec<f64>, SolveReport), SolveError> {
    let start = Instant::now();
    check_inputs(a, b, tol)?;
    let n = a.dim();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok(zero_rhs_report(n, shift, start));
    }
    let max_iter = 10 * n.max(1);
    let dinv = inverse_diagonal(a);
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut ap = vec![0.0; n];
    let mut iterations = 0;
    let mut true_res = 1.0;

    // outer loop restarts from the true residual if the recursive one drifted
    'outer: while iterations < max_iter {
        for i in 0..n {
            z[i] = dinv[i] * r[i];
        }
        p.copy_from_slice(&z);
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        loop {
            if norm2(&r) / bnorm <= tol {
                break;
            }
            if iterations >= max_iter {
                break 'outer;
            }
            a.mul_vec_into(&p, &mut ap);
            let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
            if pap <= 0.0 {
                break 'outer;
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            iterations += 1;
            for i in 0..n {
                z[i] = dinv[i] * r[i];
            }
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        true_res = relative_residual(a, &x, b, bnorm);
        if true_res <= tol {
            break;
        }
        let ax = a.mul_vec(&x);
        for i in 0..n {
            r[i] = b[i] - ax[i];
        }
    }
    if true_res > tol {
        true_res = relative_residual(a, &x, b, bnorm);
    }
    let report = SolveReport {
        iterations,
        final_relative_residual: true_res,
        shift,
        wall_time: start.elapsed(),
    };
    if true_res <= tol {
        Ok((x, report))
    } else {
        Err(SolveError::NotConverged { report })
    }
}

/// Restarted GMRES, right-preconditioned with ILU(0) (Jacobi if the
/// incomplete factorization breaks down). The residual norm is
/// non-increasing across restarts. Capped at `10·dim` inner iterations.
pub fn solve_gmres(
    a: &SparseMatrix,
    b: &[f64],
    tol: f64,
    restart: usize,
) -> Result<(Vec<f64>, SolveReport), SolveError> {
    gmres(a, b, tol, restart, 0.0)
}

fn gmres(
    a: &SparseMatrix,
    b: &[f64],
    tol: f64,
    restart: usize,
    shift: f64,
) -> Result<(Vec<f64>, SolveReport), SolveError> {
    let start = Instant::now();
    check_inputs(a, b, tol)?;
    let n = a.dim();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok(zero_rhs_report(n, shift, start));
    }
    let m = restart.clamp(1, n.max(1));
    let max_iter = 10 * n.max(1);
    let precond = Ilu0::new(a).map_or_else(|| Precond::Jacobi(inverse_diagonal(a)), Precond::Ilu);
    let mut x = vec![0.0; n];
    let mut iterations = 0;
    let mut res;

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    let mut hess = vec![vec![0.0; m]; m + 1];
    let mut cs = vec![0.0; m];
    let mut sn = vec![0.0; m];
    let mut g = vec![0.0; m + 1];
    let mut w = vec![0.0; n];
    let mut zbuf = vec![0.0; n];

    while iterations < max_iter {
        let ax = a.mul_vec(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
        let beta = norm2(&r);
        res = beta / bnorm;
        if res <= tol {
            break;
        }
        basis.clear();
        basis.push(r.iter().map(|v| v / beta).collect());
        g.iter_mut().for_each(|v| *v = 0.0);
        g[0] = beta;
        let mut steps = 0;
        for j in 0..m {
            if iterations >= max_iter {
                break;
            }
            precond.apply(&basis[j], &mut zbuf);
            a.mul_vec_into(&zbuf, &mut w);
            // modified Gram–Schmidt
            for (i, v) in basis.iter().enumerate() {
                let h: f64 = w.iter().zip(v).map(|(p, q)| p * q).sum();
                hess[i][j] = h;
                for (wk, vk) in w.iter_mut().zip(v) {
                    *wk -= h * vk;
                }
            }
            let wnorm = norm2(&w);
            hess[j + 1][j] = wnorm;
            for i in 0..j {
                let t = cs[i] * hess[i][j] + sn[i] * hess[i + 1][j];
                hess[i + 1][j] = -sn[i] * hess[i][j] + cs[i] * hess[i + 1][j];
                hess[i][j] = t;
            }
            let denom = hess[j][j].hypot(hess[j + 1][j]);
            if denom == 0.0 {
                break;
            }
            cs[j] = hess[j][j] / denom;
            sn[j] = hess[j + 1][j] / denom;
            hess[j][j] = denom;
            hess[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            iterations += 1;
            steps = j + 1;
            let happy = wnorm <= 1e-14 * beta;
            if g[j + 1].abs() / bnorm <= tol * 0.5 || happy {
                break;
            }
            basis.push(w.iter().map(|v| v / wnorm).collect());
        }
        if steps == 0 {
            break;
        }
        let mut y = vec![0.0; steps];
        for i in (0..steps).rev() {
            let mut s = g[i];
            for k in i + 1..steps {
                s -= hess[i][k] * y[k];
            }
            y[i] = s / hess[i][i];
        }
        for (i, wi) in w.iter_mut().enumerate() {
            *wi = y.iter().zip(&basis).map(|(yk, v)| yk * v[i]).sum();
        }
        precond.apply(&w, &mut zbuf);
        for (xi, zi) in x.iter_mut().zip(&zbuf) {
            *xi += zi;
        }
    }
    res = relative_residual(a, &x, b, bnorm);
    let report = SolveReport {
        iterations,
        final_relative_residual: res,
        shift,
        wall_time: start.elapsed(),
    };
    if res <= tol {
        Ok((x, report))
    } else {
        Err(SolveError::NotConverged { report })
    }
}

/// ILU(0)-preconditioned BiCGStab (right preconditioning). Restarts from
/// the true residual on breakdown or drift; capped at `10·dim` iterations.
pub fn solve_bicgstab(a: &SparseMatrix, b: &[f64], tol: f64) -> Result<(Vec<f64>, SolveReport), SolveError> {
    bicgstab(a, b, tol, 0.0)
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(p, q)| p * q).sum()
}

fn bicgstab(a: &SparseMatrix, b: &[f64], tol: f64, shift: f64) -> Result<(Vec<f64>, SolveReport), SolveError> {
    let start = Instant::now();
    check_inputs(a, b, tol)?;
    let n = a.dim();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok(zero_rhs_report(n, shift, start));
    }
    let max_iter = 10 * n.max(1);
    let precond = Ilu0::new(a).map_or_else(|| Precond::Jacobi(inverse_diagonal(a)), Precond::Ilu);
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let (mut p, mut v, mut s, mut t) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let (mut ph, mut sh) = (vec![0.0; n], vec![0.0; n]);
    let mut iterations = 0;
    let mut res = 1.0;

    'outer: while iterations < max_iter {
        let rhat = r.clone();
        let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
        p.iter_mut().for_each(|e| *e = 0.0);
        v.iter_mut().for_each(|e| *e = 0.0);
        loop {
            if iterations >= max_iter {
                break 'outer;
            }
            let rho_new = dot(&rhat, &r);
            if rho_new == 0.0 || !rho_new.is_finite() {
                break;
            }
            let beta = (rho_new / rho) * (alpha / omega);
            rho = rho_new;
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
            }
            precond.apply(&p, &mut ph);
            a.mul_vec_into(&ph, &mut v);
            let rv = dot(&rhat, &v);
            if rv == 0.0 {
                break;
            }
            alpha = rho / rv;
            for i in 0..n {
                s[i] = r[i] - alpha * v[i];
            }
            iterations += 1;
            if norm2(&s) / bnorm <= tol {
                for i in 0..n {
                    x[i] += alpha * ph[i];
                }
                break;
            }
            precond.apply(&s, &mut sh);
            a.mul_vec_into(&sh, &mut t);
            let tt = dot(&t, &t);
            omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
            for i in 0..n {
                x[i] += alpha * ph[i] + omega * sh[i];
                r[i] = s[i] - omega * t[i];
            }
            if norm2(&r) / bnorm <= tol || omega == 0.0 {
                break;
            }
        }
        res = relative_residual(a, &x, b, bnorm);
        if res <= tol || !res.is_finite() {
            break;
        }
        let ax = a.mul_vec(&x);
        for i in 0..n {
            r[i] = b[i] - ax[i];
        }
    }
    if res > tol && res.is_finite() {
        res = relative_residual(a, &x, b, bnorm);
    }
    let report = SolveReport {
        iterations,
        final_relative_residual: res,
        shift,
        wall_time: start.elapsed(),
    };
    if res <= tol {
        Ok((x, report))
    } else {
        Err(SolveError::NotConverged { report })
    }
}

enum Precond {
    Jacobi(Vec<f64>),
    Ilu(Ilu0),
}

impl Precond {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        match self {
            Precond::Jacobi(dinv) => {
                for ((zi, ri), di) in z.iter_mut().zip(r).zip(dinv) {
                    *zi = ri * di;
                }
            }
            Precond::Ilu(ilu) => ilu.apply(r, z),
        }
    }
}

/// Incomplete LU without fill on the sparsity pattern of `a`: unit lower
/// factor below the diagonal, upper factor on and above it.
struct Ilu0 {
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    diag: Vec<usize>,
}

impl Ilu0 {
    /// `None` on a missing or vanishing pivot, or unsorted rows.
    fn new(a: &SparseMatrix) -> Option<Self> {
        let n = a.dim();
        let offsets = a.row_offsets().to_vec();
        let cols = a.col_indices().to_vec();
        let mut vals = a.values().to_vec();
        let mut diag = Vec::with_capacity(n);
        for i in 0..n {
            let row = &cols[offsets[i]..offsets[i + 1]];
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return None;
            }
            diag.push(offsets[i] + row.binary_search(&i).ok()?);
        }
        for i in 0..n {
            let end = offsets[i + 1];
            for kk in offsets[i]..diag[i] {
                let k = cols[kk];
                let pivot = vals[diag[k]];
                if pivot == 0.0 {
                    return None;
                }
                vals[kk] /= pivot;
                let lik = vals[kk];
                // merge the tail of row k into row i, pattern-restricted
                let (mut p, mut q) = (kk + 1, diag[k] + 1);
                let qend = offsets[k + 1];
                while p < end && q < qend {
                    match cols[p].cmp(&cols[q]) {
                        std::cmp::Ordering::Less => p += 1,
                        std::cmp::Ordering::Greater => q += 1,
                        std::cmp::Ordering::Equal => {
                            vals[p] -= lik * vals[q];
                            p += 1;
                            q += 1;
                        }
                    }
                }
            }
            let d = vals[diag[i]];
            if d == 0.0 || !d.is_finite() {
                return None;
            }
        }
        Some(Self {
            offsets,
            cols,
            vals,
            diag,
        })
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let n = r.len();
        for i in 0..n {
            let mut s = r[i];
            for kk in self.offsets[i]..self.diag[i] {
                s -= self.vals[kk] * z[self.cols[kk]];
            }
            z[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for kk in self.diag[i] + 1..self.offsets[i + 1] {
                s -= self.vals[kk] * z[self.cols[kk]];
            }
            z[i] = s / self.vals[self.diag[i]];
        }
    }
}

/// LU factorization with partial pivoting of a banded matrix, stored in
/// column-major band layout with room for pivoting fill.
#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    lower: usize,
    upper: usize,
    ld: usize,
    band: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandedLu {
    /// Stored entries needed to factor `a`.
    pub fn storage_for(a: &SparseMatrix) -> usize {
        let (kl, ku) = a.bandwidths();
        a.dim() * (2 * kl + ku + 1)
    }

    pub fn factor(a: &SparseMatrix) -> Result<Self, SolveError> {
        let n = a.dim();
        let (kl, ku) = a.bandwidths();
        let ld = 2 * kl + ku + 1;
        let mut lu = Self {
            n,
            lower: kl,
            upper: ku,
            ld,
            band: vec![0.0; n * ld],
            pivots: vec![0; n],
        };
        for (i, j, v) in a.iter() {
            *lu.at(i, j) = v;
        }
        let reach = kl + ku;
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + reach).min(n - 1);
            let mut p = k;
            let mut best = lu.get(k, k).abs();
            for i in k + 1..=last_row {
                let v = lu.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            lu.pivots[k] = p;
            if best == 0.0 {
                return Err(SolveError::Singular { column: k });
            }
            if p != k {
                for j in k..=last_col {
                    let t = lu.get(k, j);
                    *lu.at(k, j) = lu.get(p, j);
                    *lu.at(p, j) = t;
                }
            }
            let pivot = lu.get(k, k);
            let rows = last_row - k;
            if rows == 0 {
                continue;
            }
            let col_k = lu.offset(k + 1, k);
            for l in &mut lu.band[col_k..col_k + rows] {
                *l /= pivot;
            }
            // column-wise rank-one update, contiguous in i
            for j in k + 1..=last_col {
                let u = lu.get(k, j);
                if u == 0.0 {
                    continue;
                }
                let dst = lu.offset(k + 1, j);
                let (head, tail) = lu.band.split_at_mut(dst);
                let mult = &head[col_k..col_k + rows];
                for (a, l) in tail[..rows].iter_mut().zip(mult) {
                    *a -= l * u;
                }
            }
        }
        Ok(lu)
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        j * self.ld + (self.lower + self.upper + i - j)
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.band[self.offset(i, j)]
    }

    #[inline]
    fn at(&mut self, i: usize, j: usize) -> &mut f64 {
        let o = self.offset(i, j);
        &mut self.band[o]
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        assert_eq!(b.len(), n);
        for k in 0..n {
            b.swap(k, self.pivots[k]);
            let bk = b[k];
            let last = (k + self.lower).min(n - 1);
            if bk != 0.0 && last > k {
                let col = self.offset(k + 1, k);
                for (bi, l) in b[k + 1..=last].iter_mut().zip(&self.band[col..col + (last - k)]) {
                    *bi -= l * bk;
                }
            }
        }
        let reach = self.lower + self.upper;
        for j in (0..n).rev() {
            b[j] /= self.get(j, j);
            let bj = b[j];
            if bj == 0.0 || j == 0 {
                continue;
            }
            let first = j.saturating_sub(reach);
            let col = self.offset(first, j);
            for (bi, u) in b[first..j].iter_mut().zip(&self.band[col..col + (j - first)]) {
                *bi -= u * bj;
            }
        }
    }
}

/// Banded direct solve followed by up to three steps of iterative
/// refinement; `iterations` in the report counts refinement steps.
pub fn solve_direct(a: &SparseMatrix, b: &[f64], tol: f64) -> Result<(Vec<f64>, SolveReport), SolveError> {
    direct(a, b, tol, 0.0)
}

fn direct(a: &SparseMatrix, b: &[f64], tol: f64, shift: f64) -> Result<(Vec<f64>, SolveReport), SolveError> {
    let start = Instant::now();
    check_inputs(a, b, tol)?;
    let n = a.dim();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok(zero_rhs_report(n, shift, start));
    }
    let lu = BandedLu::factor(a)?;
    let mut x = b.to_vec();
    lu.solve_in_place(&mut x);
    let mut res = relative_residual(a, &x, b, bnorm);
    let mut iterations = 0;
    while res > tol && iterations < 3 {
        let ax = a.mul_vec(&x);
        let mut d: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
        lu.solve_in_place(&mut d);
        for (xi, di) in x.iter_mut().zip(&d) {
            *xi += di;
        }
        res = relative_residual(a, &x, b, bnorm);
        iterations += 1;
    }
    let report = SolveReport {
        iterations,
        final_relative_residual: res,
        shift,
        wall_time: start.elapsed(),
    };
    if res <= tol {
        Ok((x, report))
    } else {
        Err(SolveError::NotConverged { report })
    }
}

/// How the shifted systems are solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    /// As `Krylov`, with a final banded LU attempt when the Krylov solves
    /// stall and the band fits in [`DIRECT_STORAGE_LIMIT`].
    #[default]
    Auto,
    /// CG for symmetric pencils; BiCGStab, then restarted GMRES if that
    /// stalls, otherwise. Both use ILU(0).
    Krylov,
    /// Banded LU for every pencil.
    Direct,
}

/// The matrix pencil `(M, K)` behind `A_h = M⁻¹K`.
#[derive(Debug, Clone, Copy)]
pub struct Pencil<'a> {
    pub mass: &'a SparseMatrix,
    pub form: &'a SparseMatrix,
    pub symmetric: bool,
}

impl<'a> Pencil<'a> {
    /// Detects symmetry of `form` to relative precision 1e−13.
    pub fn new(mass: &'a SparseMatrix, form: &'a SparseMatrix) -> Self {
        assert_eq!(mass.dim(), form.dim());
        Self {
            mass,
            form,
            symmetric: form.is_symmetric(1e-13),
        }
    }

    pub fn dim(&self) -> usize {
        self.mass.dim()
    }

    pub fn shifted(&self, mu: f64) -> SparseMatrix {
        SparseMatrix::linear_combination(mu, self.mass, 1.0, self.form)
    }

    /// `M + εK`, the shifted matrix divided by `μ = 1/ε`.
    pub fn scaled(&self, eps: f64) -> SparseMatrix {
        SparseMatrix::linear_combination(1.0, self.mass, eps, self.form)
    }
}

/// Solver configuration for `(μM + K) x = b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftedSolver {
    pub method: Method,
    pub restart: usize,
}

impl Default for ShiftedSolver {
    fn default() -> Self {
        Self {
            method: Method::Auto,
            restart: DEFAULT_RESTART,
        }
    }
}

impl ShiftedSolver {
    pub fn with_method(method: Method) -> Self {
        Self {
            method,
            ..Self::default()
        }
    }

    pub fn solve(
        &self,
        pencil: Pencil<'_>,
        mu: f64,
        b: &[f64],
        tol: f64,
    ) -> Result<(Vec<f64>, SolveReport), SolveError> {
        if !(mu.is_finite() && mu >= 0.0) {
            return Err(SolveError::InvalidShift(mu));
        }
        self.dispatch(&pencil.shifted(mu), pencil.symmetric, mu, b, tol)
    }

    /// `(M + εK) z = b`, i.e. `z = μ(μM + K)^{-1} b` with `μ = 1/ε`, for shifts
    /// too large to form. The report carries `μ` (infinite for `ε = 0`).
    pub fn solve_scaled(
        &self,
        pencil: Pencil<'_>,
        eps: f64,
        b: &[f64],
        tol: f64,
    ) -> Result<(Vec<f64>, SolveReport), SolveError> {
        if !(eps.is_finite() && eps >= 0.0) {
            return Err(SolveError::InvalidShift(1.0 / eps));
        }
        self.dispatch(&pencil.scaled(eps), pencil.symmetric, 1.0 / eps, b, tol)
    }

    fn krylov(&self, a: &SparseMatrix, b: &[f64], tol: f64, mu: f64) -> Result<(Vec<f64>, SolveReport), SolveError> {
        match bicgstab(a, b, tol, mu) {
            Err(SolveError::NotConverged { report }) => {
                log::debug!(
                    "BiCGStab stalled at shift {mu} ({:e}), retrying with GMRES",
                    report.final_relative_residual
                );
                gmres(a, b, tol, self.restart, mu)
            }
            other => other,
        }
    }

    fn dispatch(
        &self,
        a: &SparseMatrix,
        symmetric: bool,
        mu: f64,
        b: &[f64],
        tol: f64,
    ) -> Result<(Vec<f64>, SolveReport), SolveError> {
        match (self.method, symmetric) {
            (Method::Direct, _) => direct(a, b, tol, mu),
            (_, true) => pcg(a, b, tol, mu),
            (Method::Krylov, false) => self.krylov(a, b, tol, mu),
            (Method::Auto, false) => match self.krylov(a, b, tol, mu) {
                Err(SolveError::NotConverged { report }) if BandedLu::storage_for(a) <= DIRECT_STORAGE_LIMIT => {
                    log::debug!(
                        "Krylov solve stalled at shift {mu} ({:e}), retrying with banded LU",
                        report.final_relative_residual
                    );
                    direct(a, b, tol, mu)
                }
                other => other,
            },
        }
    }
}

/// `(μM + K)x = b` for an assembled system with the default solver choice.
pub fn solve_shifted(sys: &FemSystem, mu: f64, b: &[f64], tol: f64) -> Result<(Vec<f64>, SolveReport), SolveError> {
    ShiftedSolver::default().solve(sys.pencil(), mu, b, tol)
}
