//! Dense double-precision linear algebra.
//!
//! Small and self-contained: row-major [`Matrix`], slice-based vector helpers,
//! ridge least squares through Cholesky-factored normal equations, and a
//! one-sided Jacobi SVD. Every routine is a pure function of its inputs.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_dim("matrix storage length", rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            check_dim(&format!("row {i} length"), cols, r.as_ref().len())?;
            data.extend_from_slice(r.as_ref());
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Builds a matrix whose columns are the given equal-length vectors.
    pub fn from_columns<C: AsRef<[f64]>>(columns: &[C]) -> Result<Self> {
        let rows = columns.first().map_or(0, |c| c.as_ref().len());
        let mut m = Self::zeros(rows, columns.len());
        for (j, c) in columns.iter().enumerate() {
            let c = c.as_ref();
            check_dim(&format!("column {j} length"), rows, c.len())?;
            for (i, &v) in c.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        check_dim("matmul inner dimension", self.cols, other.rows)?;
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a != 0.0 {
                    axpy(a, other.row(k), out_row);
                }
            }
        }
        Ok(out)
    }

    /// `self · x`
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("matvec input", self.cols, x.len())?;
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    /// `selfᵀ · y`
    pub fn tr_matvec(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_dim("transposed matvec input", self.rows, y.len())?;
        let mut out = vec![0.0; self.cols];
        for (i, &yi) in y.iter().enumerate() {
            if yi != 0.0 {
                axpy(yi, self.row(i), &mut out);
            }
        }
        Ok(out)
    }

    /// `selfᵀ · self`
    pub fn gram(&self) -> Matrix {
        let p = self.cols;
        let mut g = Matrix::zeros(p, p);
        for i in 0..self.rows {
            let r = self.row(i);
            for a in 0..p {
                let ra = r[a];
                if ra == 0.0 {
                    continue;
                }
                let grow = &mut g.data[a * p..(a + 1) * p];
                for b in a..p {
                    grow[b] += ra * r[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                g.data[a * p + b] = g.data[b * p + a];
            }
        }
        g
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.data {
            *v *= alpha;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha · x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `a ⊗ b` flattened row-major: entry `(i, j)` is `a[i] · b[j]`.
pub fn outer(a: &[f64], b: &[f64]) -> Matrix {
    let mut m = Matrix::zeros(a.len(), b.len());
    for (i, &ai) in a.iter().enumerate() {
        for (dst, &bj) in m.row_mut(i).iter_mut().zip(b) {
            *dst = ai * bj;
        }
    }
    m
}

/// Cosine of the angle between `u` and `v`, clamped to `[-1, 1]`.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    check_dim("cosine operands", u.len(), v.len())?;
    let nu = norm(u);
    let nv = norm(v);
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Lower-triangular Cholesky factor of a symmetric matrix, or `None` when a
/// pivot is not safely positive.
fn cholesky(a: &Matrix) -> Option<Matrix> {
    let n = a.rows();
    let max_diag = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let floor = max_diag * n as f64 * f64::EPSILON;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > floor) {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

/// Solves `L Lᵀ X = B` in place.
fn cholesky_solve(l: &Matrix, b: &mut Matrix) {
    let n = l.rows();
    let q = b.cols();
    for c in 0..q {
        for i in 0..n {
            let mut s = b[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * b[(k, c)];
            }
            b[(i, c)] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = b[(i, c)];
            for k in (i + 1)..n {
                s -= l[(k, i)] * b[(k, c)];
            }
            b[(i, c)] = s / l[(i, i)];
        }
    }
}

/// `argmin_X ‖AX − B‖_F² + λ‖X‖_F²` through the normal equations
/// `(AᵀA + λI) X = AᵀB`.
///
/// A failed factorization is retried once with a diagonal jitter of
/// `1e-12 · trace(AᵀA) / p`; if that also fails the system is reported singular.
pub fn solve_ridge(a: &Matrix, b: &Matrix, lambda: f64) -> Result<Matrix> {
    if a.rows() == 0 {
        return Err(Error::Dimension("ridge system needs at least one row".into()));
    }
    check_dim("ridge right-hand side rows", a.rows(), b.rows())?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Domain(format!(
            "ridge lambda must be finite and >= 0, got {lambda}"
        )));
    }
    let p = a.cols();
    let mut normal = a.gram();
    for i in 0..p {
        normal[(i, i)] += lambda;
    }
    let mut rhs = a.transpose().matmul(b)?;

    let factor = match cholesky(&normal) {
        Some(l) => l,
        None => {
            let jitter = 1e-12 * a.gram().trace() / p.max(1) as f64;
            if !(jitter > 0.0) {
                return Err(Error::SingularSystem);
            }
            log::debug!("ridge: Cholesky failed, retrying with jitter {jitter:e}");
            for i in 0..p {
                normal[(i, i)] += jitter;
            }
            cholesky(&normal).ok_or(Error::SingularSystem)?
        }
    };
    cholesky_solve(&factor, &mut rhs);
    if !rhs.is_finite() {
        return Err(Error::SingularSystem);
    }
    Ok(rhs)
}

/// Rank-`r` truncated singular value decomposition.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    /// `n × r`, orthonormal columns.
    pub u: Matrix,
    /// Descending.
    pub singulars: Vec<f64>,
    /// `r × p`, orthonormal rows.
    pub vt: Matrix,
}

impl TruncatedSvd {
    /// `U · diag(s) · Vt`
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (v, s) in us.row_mut(i).iter_mut().zip(&self.singulars) {
                *v *= s;
            }
        }
        us.matmul(&self.vt).expect("factor shapes agree")
    }
}

/// Best rank-`r` approximation of `a` (Eckart–Young) via one-sided Jacobi.
pub fn truncated_svd(a: &Matrix, r: usize) -> Result<TruncatedSvd> {
    let (n, p) = (a.rows(), a.cols());
    if r == 0 || r > n.min(p) {
        return Err(Error::Dimension(format!(
            "truncation rank {r} must lie in 1..={} for a {n}x{p} matrix",
            n.min(p)
        )));
    }
    if p <= n {
        let cols: Vec<Vec<f64>> = (0..p).map(|j| a.column(j)).collect();
        let svd = jacobi_svd_columns(cols, n);
        Ok(svd.truncate(r, n, p, false))
    } else {
        let cols: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).to_vec()).collect();
        let svd = jacobi_svd_columns(cols, p);
        Ok(svd.truncate(r, p, n, true))
    }
}

/// Top-`r` left singular basis and all singular values of the matrix whose
/// columns are `columns` (each of length `len`).
///
/// This skips materializing the matrix and is what the gradient-basis fit uses:
/// each column is one per-example trunk gradient.
pub fn left_singular_basis(columns: &[Vec<f64>], len: usize) -> Result<(Matrix, Vec<f64>)> {
    let k = columns.len();
    if k == 0 || len == 0 {
        return Err(Error::Dimension("empty matrix has no singular basis".into()));
    }
    for (j, c) in columns.iter().enumerate() {
        check_dim(&format!("column {j} length"), len, c.len())?;
    }
    if k <= len {
        let svd = jacobi_svd_columns(columns.to_vec(), len);
        let full = svd.truncate(k, len, k, false);
        Ok((full.u, full.singulars))
    } else {
        let m = Matrix::from_columns(columns)?;
        let full = truncated_svd(&m, len)?;
        Ok((full.u, full.singulars))
    }
}

struct JacobiSvd {
    /// Orthogonalized columns `A V`, one per input column.
    work: Vec<Vec<f64>>,
    /// Accumulated right rotation, column-major (`v[j]` is column `j`).
    v: Vec<Vec<f64>>,
}

/// One-sided (Hestenes) Jacobi: rotates column pairs until all are mutually
/// orthogonal. `len` is the common column length.
fn jacobi_svd_columns(mut work: Vec<Vec<f64>>, len: usize) -> JacobiSvd {
    const TOL: f64 = 1e-15;
    const MAX_SWEEPS: usize = 80;
    let k = work.len();
    let mut v: Vec<Vec<f64>> = (0..k)
        .map(|j| {
            let mut e = vec![0.0; k];
            e[j] = 1.0;
            e
        })
        .collect();
    debug_assert!(work.iter().all(|c| c.len() == len));

    let mut norms: Vec<f64> = work.iter().map(|c| dot(c, c)).collect();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for j in 0..k {
            for l in (j + 1)..k {
                let alpha = norms[j];
                let beta = norms[l];
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let gamma = dot(&work[j], &work[l]);
                if gamma.abs() <= TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut work, j, l, c, s);
                rotate_pair(&mut v, j, l, c, s);
                norms[j] = dot(&work[j], &work[j]);
                norms[l] = dot(&work[l], &work[l]);
            }
        }
        if !rotated {
            break;
        }
    }
    JacobiSvd { work, v }
}

fn rotate_pair(cols: &mut [Vec<f64>], j: usize, l: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(l);
    let (cj, cl) = (&mut left[j], &mut right[0]);
    for (x, y) in cj.iter_mut().zip(cl.iter_mut()) {
        let (xj, xl) = (*x, *y);
        *x = c * xj - s * xl;
        *y = s * xj + c * xl;
    }
}

impl JacobiSvd {
    /// Sorts by singular value and keeps the leading `r` triplets.
    ///
    /// `len` is the column length, `k` the column count. With `transposed`
    /// the decomposition was of `Aᵀ`, so the roles of the factors swap.
    fn truncate(self, r: usize, len: usize, k: usize, transposed: bool) -> TruncatedSvd {
        let JacobiSvd { work, v } = self;
        let singular: Vec<f64> = work.iter().map(|c| norm(c)).collect();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| singular[b].total_cmp(&singular[a]));
        let keep = &order[..r];
        let singulars: Vec<f64> = keep.iter().map(|&j| singular[j]).collect();

        // Normalized work columns; zero columns are completed to an orthonormal set.
        let scale = singular.iter().cloned().fold(0.0, f64::max);
        let mut left: Vec<Vec<f64>> = Vec::with_capacity(r);
        for &j in keep {
            let s = singular[j];
            if s > scale * 1e-13 && s > 0.0 {
                left.push(work[j].iter().map(|x| x / s).collect());
            } else {
                left.push(complete_basis(&left, len));
            }
        }
        let right: Vec<Vec<f64>> = keep.iter().map(|&j| v[j].clone()).collect();

        if transposed {
            // Aᵀ = W Σ Vᵀ  ⇒  A = V Σ Wᵀ
            TruncatedSvd {
                u: Matrix::from_columns(&right).expect("rotation columns share a length"),
                singulars,
                vt: Matrix::from_rows(&left).expect("basis rows share a length"),
            }
        } else {
            TruncatedSvd {
                u: Matrix::from_columns(&left).expect("basis columns share a length"),
                singulars,
                vt: Matrix::from_rows(&right).expect("rotation rows share a length"),
            }
        }
    }
}

/// A unit vector orthogonal to every vector in `basis` (Gram–Schmidt on the
/// standard basis).
fn complete_basis(basis: &[Vec<f64>], len: usize) -> Vec<f64> {
    for e in 0..len {
        let mut cand = vec![0.0; len];
        cand[e] = 1.0;
        for _ in 0..2 {
            for b in basis {
                let proj = dot(&cand, b);
                axpy(-proj, b, &mut cand);
            }
        }
        let nrm = norm(&cand);
        if nrm > 1e-6 {
            cand.iter_mut().for_each(|x| *x /= nrm);
            return cand;
        }
    }
    unreachable!("fewer than `len` basis vectors always leave a free direction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
        a.as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn ridge_identity_system() {
        let a = Matrix::identity(2);
        let b = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        let x = solve_ridge(&a, &b, 0.0).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn ridge_large_lambda_shrinks_to_zero() {
        let a = Matrix::identity(2);
        let b = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        let x = solve_ridge(&a, &b, 1e12).unwrap();
        assert!(x.as_slice().iter().all(|v| v.abs() < 1e-11));
    }

    #[test]
    fn ridge_recovers_planted_solution() {
        let a = random_matrix(20, 3, 11);
        let x_star = random_matrix(3, 2, 12);
        let b = a.matmul(&x_star).unwrap();
        let x = solve_ridge(&a, &b, 0.0).unwrap();
        let mut diff = x.clone();
        axpy(-1.0, x_star.as_slice(), diff.as_mut_slice());
        assert!(diff.frobenius_norm() <= 1e-8 * x_star.frobenius_norm());
    }

    #[test]
    fn ridge_satisfies_normal_equations() {
        let a = random_matrix(15, 6, 3);
        let b = random_matrix(15, 4, 4);
        let lambda = 0.3;
        let x = solve_ridge(&a, &b, lambda).unwrap();
        let mut lhs = a.gram().matmul(&x).unwrap();
        axpy(lambda, x.as_slice(), lhs.as_mut_slice());
        let atb = a.transpose().matmul(&b).unwrap();
        assert!(max_abs_diff(&lhs, &atb) <= 1e-8 * (1.0 + atb.frobenius_norm()));
    }

    #[test]
    fn ridge_errors() {
        let a = Matrix::zeros(3, 2);
        let b = Matrix::zeros(3, 1);
        assert!(matches!(solve_ridge(&a, &b, 0.0), Err(Error::SingularSystem)));
        let b_bad = Matrix::zeros(4, 1);
        assert!(matches!(solve_ridge(&a, &b_bad, 0.0), Err(Error::Dimension(_))));
        assert!(matches!(
            solve_ridge(&Matrix::zeros(0, 2), &Matrix::zeros(0, 1), 1.0),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn ridge_rank_deficient_uses_jitter() {
        // Second column duplicates the first: AᵀA is singular but the system is consistent.
        let a = Matrix::from_rows(&[[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]]).unwrap();
        let b = Matrix::from_rows(&[[2.0], [4.0], [6.0]]).unwrap();
        let x = solve_ridge(&a, &b, 0.0).unwrap();
        let fit = a.matmul(&x).unwrap();
        assert!(max_abs_diff(&fit, &b) < 1e-6);
    }

    #[test]
    fn svd_diagonal() {
        let mut a = Matrix::zeros(3, 3);
        a[(0, 0)] = 3.0;
        a[(1, 1)] = 2.0;
        a[(2, 2)] = 1.0;
        let svd = truncated_svd(&a, 2).unwrap();
        assert!((svd.singulars[0] - 3.0).abs() < 1e-14);
        assert!((svd.singulars[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn svd_rank_one_exact() {
        let u = [1.0, -2.0, 0.5, 3.0];
        let v = [0.3, 0.7, -1.1];
        let a = outer(&u, &v);
        let svd = truncated_svd(&a, 1).unwrap();
        assert!(max_abs_diff(&svd.reconstruct(), &a) < 1e-13);
        // Wide orientation goes through the transposed path.
        let at = a.transpose();
        let svd_t = truncated_svd(&at, 1).unwrap();
        assert!(max_abs_diff(&svd_t.reconstruct(), &at) < 1e-13);
    }

    #[test]
    fn svd_full_rank_reconstruction() {
        for (rows, cols) in [(50, 10), (10, 50)] {
            let a = random_matrix(rows, cols, 7);
            let svd = truncated_svd(&a, 10).unwrap();
            let mut diff = svd.reconstruct();
            axpy(-1.0, a.as_slice(), diff.as_mut_slice());
            assert!(diff.frobenius_norm() <= 1e-8 * a.frobenius_norm());
            let utu = svd.u.transpose().matmul(&svd.u).unwrap();
            assert!(max_abs_diff(&utu, &Matrix::identity(10)) < 1e-10);
            assert!(svd.singulars.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn svd_truncation_is_best_rank_r() {
        // Frobenius error of the rank-r truncation equals the tail singular mass.
        let a = random_matrix(30, 8, 21);
        let full = truncated_svd(&a, 8).unwrap();
        let trunc = truncated_svd(&a, 3).unwrap();
        let mut diff = trunc.reconstruct();
        axpy(-1.0, a.as_slice(), diff.as_mut_slice());
        let tail: f64 = full.singulars[3..].iter().map(|s| s * s).sum();
        assert!((diff.frobenius_norm().powi(2) - tail).abs() < 1e-10);
    }

    #[test]
    fn svd_rank_deficient_basis_stays_orthonormal() {
        let a = outer(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0, 1.0]);
        let svd = truncated_svd(&a, 3).unwrap();
        let utu = svd.u.transpose().matmul(&svd.u).unwrap();
        assert!(max_abs_diff(&utu, &Matrix::identity(3)) < 1e-10);
    }

    #[test]
    fn svd_rank_out_of_range() {
        let a = Matrix::identity(3);
        assert!(matches!(truncated_svd(&a, 0), Err(Error::Dimension(_))));
        assert!(matches!(truncated_svd(&a, 4), Err(Error::Dimension(_))));
    }

    #[test]
    fn left_basis_matches_svd() {
        let a = random_matrix(40, 6, 5);
        let cols: Vec<Vec<f64>> = (0..6).map(|j| a.column(j)).collect();
        let (u, s) = left_singular_basis(&cols, 40).unwrap();
        let svd = truncated_svd(&a, 6).unwrap();
        for (x, y) in s.iter().zip(&svd.singulars) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(u.cols(), 6);
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(cosine(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroNorm)));
    }

    proptest::proptest! {
        #[test]
        fn cosine_scale_invariant(
            u in proptest::collection::vec(-5.0f64..5.0, 4),
            v in proptest::collection::vec(-5.0f64..5.0, 4),
            a in 0.1f64..10.0,
            b in -10.0f64..-0.1,
        ) {
            proptest::prop_assume!(norm(&u) > 1e-3 && norm(&v) > 1e-3);
            let base = cosine(&u, &v).unwrap();
            let us: Vec<f64> = u.iter().map(|x| a * x).collect();
            let vs: Vec<f64> = v.iter().map(|x| b * x).collect();
            let scaled = cosine(&us, &vs).unwrap();
            proptest::prop_assert!((scaled + base).abs() < 1e-12);
        }
    }
}
