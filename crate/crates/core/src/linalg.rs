//! Sparse storage, a Jacobi-preconditioned conjugate gradient solver that
//! refuses non-SPD operators, and a few dense helpers.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from (row, col, value) triplets. Duplicates are summed in the
    /// order they were pushed, so assembly order fixes the floating-point
    /// result.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            debug_assert!(r < nrows && c < ncols);
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.col_idx[a..b].iter().copied().zip(self.values[a..b].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.nrows) {
            *yi = self.row(i).map(|(c, v)| v * x[c]).sum();
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |A_ij - A_ji|`.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Restriction to the rows and columns listed in `keep` (in that order).
    pub fn submatrix(&self, keep: &[usize]) -> CsrMatrix {
        let mut map = vec![usize::MAX; self.ncols.max(self.nrows)];
        for (k, &g) in keep.iter().enumerate() {
            map[g] = k;
        }
        let mut trip = Vec::new();
        for (k, &g) in keep.iter().enumerate() {
            for (c, v) in self.row(g) {
                if map[c] != usize::MAX {
                    trip.push((k, map[c], v));
                }
            }
        }
        CsrMatrix::from_triplets(keep.len(), keep.len(), trip)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                d[(i, j)] += v;
            }
        }
        d
    }
}

/// A square linear map applied matrix-free.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
    fn diagonal(&self) -> Vec<f64>;

    fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            self.apply(&e, &mut col);
            out.column_mut(j).copy_from_slice(&col);
            e[j] = 0.0;
        }
        out
    }
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.nrows
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.mul_vec(x, y)
    }
    fn diagonal(&self) -> Vec<f64> {
        CsrMatrix::diagonal(self)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CgOptions {
    /// Relative residual tolerance `||r|| <= tol * ||b||`.
    pub tol: f64,
    pub max_iters: usize,
    /// Curvature `p'Ap` at or below `curvature_tol * max(diag A) * ||p||^2`
    /// counts as nonpositive.
    pub curvature_tol: f64,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions {
            tol: 1e-12,
            max_iters: 0,
            curvature_tol: 1e-13,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    pub relative_residual: f64,
    /// Extreme Ritz values of the Jacobi-preconditioned operator from the
    /// Lanczos tridiagonal implied by the CG coefficients.
    pub ritz_min: f64,
    pub ritz_max: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradient for `A x = b` starting at zero.
///
/// Aborts with [`Error::SpdViolation`] on the first nonpositive diagonal
/// entry or search direction of nonpositive curvature. `max_iters == 0`
/// means `10 * dim`.
pub fn conjugate_gradient<A: LinearOperator + ?Sized>(
    a: &A,
    b: &[f64],
    opts: &CgOptions,
) -> Result<(Vec<f64>, CgReport)> {
    let n = a.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            what: "CG right-hand side",
            expected: n,
            got: b.len(),
        });
    }
    let max_iters = if opts.max_iters == 0 { 10 * n.max(1) } else { opts.max_iters };
    let mut x = vec![0.0; n];
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 || n == 0 {
        return Ok((x, CgReport::default()));
    }
    let diag = a.diagonal();
    let scale = diag.iter().fold(0.0_f64, |m, &d| m.max(d));
    if let Some((i, &d)) = diag.iter().enumerate().find(|(_, &d)| !(d > 0.0)) {
        let _ = i;
        return Err(Error::SpdViolation {
            iteration: 0,
            curvature: d,
            context: None,
        });
    }
    let inv_diag: Vec<f64> = diag.iter().map(|d| 1.0 / d).collect();

    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, m)| r * m).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut alphas = Vec::new();
    let mut betas = Vec::new();
    let mut res = 1.0;
    for it in 0..max_iters {
        a.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        let pp = dot(&p, &p);
        if !(pap > opts.curvature_tol * scale * pp) {
            return Err(Error::SpdViolation {
                iteration: it,
                curvature: pap,
                context: None,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        alphas.push(alpha);
        res = dot(&r, &r).sqrt() / b_norm;
        if res <= opts.tol {
            let (lo, hi) = lanczos_extremes(&alphas, &betas);
            return Ok((
                x,
                CgReport {
                    iterations: it + 1,
                    relative_residual: res,
                    ritz_min: lo,
                    ritz_max: hi,
                },
            ));
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        betas.push(beta);
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::CgNotConverged {
        iterations: max_iters,
        residual: res,
    })
}

/// Extreme eigenvalues of the Lanczos tridiagonal built from CG step sizes
/// `alphas` and direction updates `betas` (Sturm bisection).
fn lanczos_extremes(alphas: &[f64], betas: &[f64]) -> (f64, f64) {
    let k = alphas.len();
    if k == 0 {
        return (0.0, 0.0);
    }
    let mut d = vec![0.0; k];
    let mut e = vec![0.0; k.saturating_sub(1)];
    for j in 0..k {
        d[j] = 1.0 / alphas[j];
        if j > 0 {
            d[j] += betas[j - 1] / alphas[j - 1];
        }
        if j + 1 < k {
            e[j] = betas[j].sqrt() / alphas[j];
        }
    }
    tridiagonal_extremes(&d, &e)
}

/// Smallest and largest eigenvalues of a symmetric tridiagonal matrix.
pub fn tridiagonal_extremes(d: &[f64], e: &[f64]) -> (f64, f64) {
    let k = d.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..k {
        let r = if i > 0 { e[i - 1].abs() } else { 0.0 } + if i + 1 < k { e[i].abs() } else { 0.0 };
        lo = lo.min(d[i] - r);
        hi = hi.max(d[i] + r);
    }
    // number of eigenvalues strictly below x
    let count_below = |x: f64| -> usize {
        let mut c = 0;
        let mut q = d[0] - x;
        if q < 0.0 {
            c += 1;
        }
        for i in 1..k {
            let denom = if q == 0.0 { f64::EPSILON * (e[i - 1].abs() + 1e-300) } else { q };
            q = d[i] - x - e[i - 1] * e[i - 1] / denom;
            if q < 0.0 {
                c += 1;
            }
        }
        c
    };
    let bisect = |target: usize| -> f64 {
        // smallest x with count_below(x) > target
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            if count_below(m) > target {
                b = m;
            } else {
                a = m;
            }
        }
        0.5 * (a + b)
    };
    (bisect(0), bisect(k - 1))
}

/// Smallest and largest eigenvalue of the symmetric part of `m`.
pub fn symmetric_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 0 {
        return (0.0, 0.0);
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let lo = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

pub fn symmetry_defect(m: &DMatrix<f64>) -> f64 {
    max_abs(&(m - m.transpose()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, n, t)
    }

    #[test]
    fn triplets_sum_duplicates() {
        let m = CsrMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (1, 1, 2.0), (0, 0, 3.0), (0, 1, -1.0)]);
        assert_eq!(m.get(0, 0), 4.0);
        assert_eq!(m.get(0, 1), -1.0);
        assert_eq!(m.get(1, 0), 0.0);
        assert_eq!(m.nnz(), 3);
    }

    #[test]
    fn cg_solves_laplacian() {
        let a = laplacian(50);
        let xs: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let mut b = vec![0.0; 50];
        a.mul_vec(&xs, &mut b);
        let (x, rep) = conjugate_gradient(&a, &b, &CgOptions::default()).unwrap();
        for (u, v) in x.iter().zip(&xs) {
            assert!((u - v).abs() < 1e-9);
        }
        assert!(rep.iterations <= 50);
        // Ritz values of D^{-1}A for the 1D Laplacian lie in (0, 2]
        assert!(rep.ritz_min > 0.0 && rep.ritz_max <= 2.0 + 1e-9);
    }

    #[test]
    fn cg_rejects_indefinite() {
        let a = CsrMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (1, 1, 1.0), (0, 1, 2.0), (1, 0, 2.0)]);
        let err = conjugate_gradient(&a, &[1.0, -1.0], &CgOptions::default()).unwrap_err();
        assert!(err.is_spd_violation());
        let neg = CsrMatrix::from_triplets(1, 1, vec![(0, 0, -1.0)]);
        assert!(conjugate_gradient(&neg, &[1.0], &CgOptions::default())
            .unwrap_err()
            .is_spd_violation());
    }

    #[test]
    fn tridiagonal_extremes_match_dense() {
        let d = [2.0, 3.0, 1.0, 4.0];
        let e = [0.5, -1.0, 0.25];
        let (lo, hi) = tridiagonal_extremes(&d, &e);
        let mut m = DMatrix::zeros(4, 4);
        for i in 0..4 {
            m[(i, i)] = d[i];
        }
        for i in 0..3 {
            m[(i, i + 1)] = e[i];
            m[(i + 1, i)] = e[i];
        }
        let (a, b) = symmetric_extremes(&m);
        assert!((lo - a).abs() < 1e-10 && (hi - b).abs() < 1e-10);
    }

    #[test]
    fn submatrix_and_dense() {
        let a = laplacian(4);
        let s = a.submatrix(&[1, 3]);
        assert_eq!(s.to_dense(), DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]));
        assert_eq!(a.symmetry_defect(), 0.0);
        assert_eq!(LinearOperator::to_dense(&a), a.to_dense());
    }
}
