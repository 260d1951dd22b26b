//! Dense column-major matrices, products and a one-sided Jacobi SVD.
//!
//! Everything downstream (weights, snapshot matrices, SVD factors) is carried
//! in [`Mat`]. Products go through a blocked GEMM kernel; the SVD is a
//! Hestenes one-sided Jacobi iteration which delivers singular values to high
//! relative accuracy and keeps the factors orthonormal to roughly machine
//! precision, which is what the nuclear-norm proximal map and the latent
//! truncation rely on.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Dense real matrix stored column-major.
#[derive(Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            let row: Vec<String> = (0..self.cols.min(8))
                .map(|j| format!("{:+.4e}", self[(i, j)]))
                .collect();
            writeln!(f, "  {}", row.join(" "))?;
        }
        write!(f, "]")
    }
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Rectangular matrix with `diag` on its main diagonal.
    pub fn diag(rows: usize, cols: usize, diag: &[f64]) -> Self {
        let mut m = Mat::zeros(rows, cols);
        for (i, &d) in diag.iter().enumerate().take(rows.min(cols)) {
            m[(i, i)] = d;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
    }

    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "column-major buffer of length {} cannot form a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "row-major buffer of length {} cannot form a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Mat::from_fn(rows, cols, |i, j| data[i * cols + j]))
    }

    /// Builds a matrix from nested rows; all rows must have equal length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, |r| r.as_ref().len());
        if rows.iter().any(|r| r.as_ref().len() != n_cols) {
            return Err(Error::invalid("ragged rows"));
        }
        Ok(Mat::from_fn(n_rows, n_cols, |i, j| rows[i].as_ref()[j]))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        let r = self.rows;
        &mut self.data[j * r..(j + 1) * r]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.cols).map(|j| self[(i, j)]).collect()
    }

    pub fn row_norm(&self, i: usize) -> f64 {
        (0..self.cols)
            .map(|j| self[(i, j)] * self[(i, j)])
            .sum::<f64>()
            .sqrt()
    }

    pub fn row_is_zero(&self, i: usize) -> bool {
        (0..self.cols).all(|j| self[(i, j)] == 0.0)
    }

    pub fn scale_row(&mut self, i: usize, factor: f64) {
        for j in 0..self.cols {
            self[(i, j)] *= factor;
        }
    }

    pub fn zero_row(&mut self, i: usize) {
        for j in 0..self.cols {
            self[(i, j)] = 0.0;
        }
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i)).collect()
    }

    pub fn transpose(&self) -> Mat {
        Mat::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Mat) -> Result<()> {
        self.check_same_shape("axpy", other)?;
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += alpha * b);
        Ok(())
    }

    pub fn sub(&self, other: &Mat) -> Result<Mat> {
        self.check_same_shape("sub", other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Mat {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn max_abs_diff(&self, other: &Mat) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Keeps the listed rows, in order.
    pub fn select_rows(&self, keep: &[usize]) -> Mat {
        Mat::from_fn(keep.len(), self.cols, |i, j| self[(keep[i], j)])
    }

    /// Keeps the listed columns, in order.
    pub fn select_cols(&self, keep: &[usize]) -> Mat {
        let mut data = Vec::with_capacity(self.rows * keep.len());
        for &j in keep {
            data.extend_from_slice(self.col(j));
        }
        Mat {
            rows: self.rows,
            cols: keep.len(),
            data,
        }
    }

    /// Leading `n` columns.
    pub fn leading_cols(&self, n: usize) -> Mat {
        Mat {
            rows: self.rows,
            cols: n,
            data: self.data[..self.rows * n].to_vec(),
        }
    }

    /// Leading `n` rows.
    pub fn leading_rows(&self, n: usize) -> Mat {
        Mat::from_fn(n, self.cols, |i, j| self[(i, j)])
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn hstack(parts: &[Mat]) -> Result<Mat> {
        let rows = parts.first().map_or(0, Mat::rows);
        if parts.iter().any(|p| p.rows != rows) {
            return Err(Error::invalid("hstack of matrices with different row counts"));
        }
        let cols = parts.iter().map(Mat::cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Mat { rows, cols, data })
    }

    fn check_same_shape(&self, op: &'static str, other: &Mat) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i + j * self.rows]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i + j * self.rows]
    }
}

/// Whether an operand enters a product as is or transposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    N,
    T,
}

fn op_shape(a: &Mat, op: Op) -> (usize, usize) {
    match op {
        Op::N => (a.rows, a.cols),
        Op::T => (a.cols, a.rows),
    }
}

fn op_strides(a: &Mat, op: Op) -> (isize, isize) {
    // column-major: (row stride, col stride) = (1, rows)
    let (rs, cs) = (1isize, a.rows.max(1) as isize);
    match op {
        Op::N => (rs, cs),
        Op::T => (cs, rs),
    }
}

/// `c = alpha * op(a) * op(b) + beta * c`.
///
/// The kernel is single-threaded and its summation order depends only on the
/// operand shapes, so repeated calls are bit-identical.
pub fn gemm(alpha: f64, a: &Mat, op_a: Op, b: &Mat, op_b: Op, beta: f64, c: &mut Mat) -> Result<()> {
    let (m, k) = op_shape(a, op_a);
    let (k2, n) = op_shape(b, op_b);
    if k != k2 {
        return Err(Error::DimensionMismatch {
            op: "gemm",
            left: (m, k),
            right: (k2, n),
        });
    }
    if c.shape() != (m, n) {
        return Err(Error::DimensionMismatch {
            op: "gemm output",
            left: (m, n),
            right: c.shape(),
        });
    }
    if m == 0 || n == 0 {
        return Ok(());
    }
    if k == 0 {
        c.scale(beta);
        return Ok(());
    }
    let (rsa, csa) = op_strides(a, op_a);
    let (rsb, csb) = op_strides(b, op_b);
    let rsc = 1isize;
    let csc = m as isize;
    // SAFETY: the pointers cover buffers of exactly the advertised shapes and
    // strides, and `c` does not alias `a` or `b` (it is borrowed mutably).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            rsc,
            csc,
        );
    }
    Ok(())
}

/// Standard matrix product `a * b`.
pub fn matmul(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.cols != b.rows {
        return Err(Error::DimensionMismatch {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut c = Mat::zeros(a.rows, b.cols);
    gemm(1.0, a, Op::N, b, Op::N, 0.0, &mut c)?;
    Ok(c)
}

/// `aᵀ * b`.
pub fn matmul_tn(a: &Mat, b: &Mat) -> Result<Mat> {
    let mut c = Mat::zeros(a.cols, b.cols);
    gemm(1.0, a, Op::T, b, Op::N, 0.0, &mut c)?;
    Ok(c)
}

/// `a * bᵀ`.
pub fn matmul_nt(a: &Mat, b: &Mat) -> Result<Mat> {
    let mut c = Mat::zeros(a.rows, b.rows);
    gemm(1.0, a, Op::N, b, Op::T, 0.0, &mut c)?;
    Ok(c)
}

/// Matrix-vector product.
pub fn matvec(a: &Mat, x: &[f64]) -> Result<Vec<f64>> {
    if a.cols != x.len() {
        return Err(Error::DimensionMismatch {
            op: "matvec",
            left: a.shape(),
            right: (x.len(), 1),
        });
    }
    let mut y = vec![0.0; a.rows];
    for (j, &xj) in x.iter().enumerate() {
        if xj != 0.0 {
            for (yi, aij) in y.iter_mut().zip(a.col(j)) {
                *yi += aij * xj;
            }
        }
    }
    Ok(y)
}

/// Thin singular value decomposition `a = u · diag(s) · vt`.
#[derive(Clone, Debug)]
pub struct SvdFactors {
    /// `m × r` with orthonormal columns.
    pub u: Mat,
    /// Non-increasing, non-negative, length `r = min(m, n)`.
    pub s: Vec<f64>,
    /// `r × n` with orthonormal rows.
    pub vt: Mat,
}

impl SvdFactors {
    /// `u · diag(s) · vt`, optionally using only the leading `rank` triplets.
    pub fn reconstruct(&self, rank: Option<usize>) -> Mat {
        let r = rank.unwrap_or(self.s.len()).min(self.s.len());
        let mut us = self.u.leading_cols(r);
        for (j, &sj) in self.s.iter().take(r).enumerate() {
            us.col_mut(j).iter_mut().for_each(|x| *x *= sj);
        }
        let vt = self.vt.leading_rows(r);
        matmul(&us, &vt).expect("svd factor shapes are consistent")
    }
}

const JACOBI_TOL: f64 = 1e-15;
const JACOBI_MAX_SWEEPS: usize = 80;

/// Thin SVD via one-sided Jacobi rotations.
pub fn svd(a: &Mat) -> Result<SvdFactors> {
    if a.is_empty() {
        return Err(Error::invalid("svd of an empty matrix"));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("svd input".into()));
    }
    if a.rows >= a.cols {
        Ok(jacobi_tall(a.clone()))
    } else {
        // a = (aᵀ)ᵀ = (u' s v'ᵀ)ᵀ = v' s u'ᵀ
        let f = jacobi_tall(a.transpose());
        Ok(SvdFactors {
            u: f.vt.transpose(),
            s: f.s,
            vt: f.u.transpose(),
        })
    }
}

/// One-sided Jacobi for `m >= n`: orthogonalises the columns of `w` while
/// accumulating the rotations in `v`.
fn jacobi_tall(mut w: Mat) -> SvdFactors {
    let (m, n) = w.shape();
    let mut v = Mat::identity(n);

    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = {
                    let cp = w.col(p);
                    let cq = w.col(q);
                    let mut alpha = 0.0;
                    let mut beta = 0.0;
                    let mut gamma = 0.0;
                    for (x, y) in cp.iter().zip(cq) {
                        alpha += x * x;
                        beta += y * y;
                        gamma += x * y;
                    }
                    (alpha, beta, gamma)
                };
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                if gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_cols(&mut w, p, q, c, s);
                rotate_cols(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut triplets: Vec<(f64, usize)> = (0..n)
        .map(|j| (w.col(j).iter().map(|x| x * x).sum::<f64>().sqrt(), j))
        .collect();
    // stable sort: ties keep column order
    triplets.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite norms"));

    let mut u = Mat::zeros(m, n);
    let mut vt = Mat::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (k, &(sigma, j)) in triplets.iter().enumerate() {
        if sigma > 0.0 && sigma.is_normal() {
            for (dst, src) in u.col_mut(k).iter_mut().zip(w.col(j)) {
                *dst = src / sigma;
            }
            s.push(sigma);
        } else {
            missing.push(k);
            s.push(0.0);
        }
        for i in 0..n {
            vt[(k, i)] = v[(i, j)];
        }
    }
    complete_orthonormal(&mut u, &missing);
    SvdFactors { u, s, vt }
}

#[inline]
fn rotate_cols(a: &mut Mat, p: usize, q: usize, c: f64, s: f64) {
    let rows = a.rows;
    let (lo, hi) = a.data.split_at_mut(q * rows);
    let cp = &mut lo[p * rows..(p + 1) * rows];
    let cq = &mut hi[..rows];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let yq = *y;
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// Fills the listed columns of `u` with unit vectors orthogonal to every
/// other column (modified Gram-Schmidt, applied twice).
fn complete_orthonormal(u: &mut Mat, missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let m = u.rows;
    let mut filled: Vec<usize> = (0..u.cols).filter(|j| !missing.contains(j)).collect();
    let mut candidate = 0usize;
    for &k in missing {
        loop {
            assert!(candidate < m, "cannot complete an orthonormal basis");
            let mut e = vec![0.0; m];
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for &j in &filled {
                    let cj = u.col(j);
                    let d: f64 = cj.iter().zip(&e).map(|(a, b)| a * b).sum();
                    e.iter_mut().zip(cj).for_each(|(x, c)| *x -= d * c);
                }
            }
            let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-8 {
                u.col_mut(k).iter_mut().zip(&e).for_each(|(d, x)| *d = x / norm);
                filled.push(k);
                break;
            }
        }
    }
}

/// Largest singular value.
pub fn spectral_norm(a: &Mat) -> Result<f64> {
    Ok(svd(a)?.s[0])
}

/// Smallest `r` such that `s[r] <= eps` (zero-based, with `s[len] = 0`),
/// but at least 1 whenever some singular value is positive.
pub fn truncation_rank(s: &[f64], eps: f64) -> Result<usize> {
    if eps.is_nan() || eps < 0.0 {
        return Err(Error::invalid(format!("truncation level must be >= 0, got {eps}")));
    }
    let r = s.iter().position(|&sv| sv <= eps).unwrap_or(s.len());
    if r == 0 && s.iter().any(|&sv| sv > 0.0) {
        return Ok(1);
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
        Mat::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn naive_matmul(a: &Mat, b: &Mat) -> Mat {
        let mut c = Mat::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut acc = 0.0;
                for k in 0..a.cols() {
                    acc += a[(i, k)] * b[(k, j)];
                }
                c[(i, j)] = acc;
            }
        }
        c
    }

    fn orthonormality_defect(q: &Mat) -> f64 {
        let g = matmul_tn(q, q).unwrap();
        g.max_abs_diff(&Mat::identity(q.cols()))
    }

    #[test]
    fn identity_is_neutral() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_mat(&mut rng, 3, 4);
        assert_eq!(matmul(&Mat::identity(3), &a).unwrap(), a);
    }

    #[test]
    fn zero_annihilates() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_mat(&mut rng, 3, 4);
        assert_eq!(matmul(&a, &Mat::zeros(4, 2)).unwrap(), Mat::zeros(3, 2));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_mat(&mut rng, 3, 4);
        let b = random_mat(&mut rng, 4, 2);
        let c = matmul(&a, &b).unwrap();
        assert!(c.max_abs_diff(&naive_matmul(&a, &b)) < 1e-12);
    }

    #[test]
    fn transposed_products_match_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_mat(&mut rng, 7, 5);
        let b = random_mat(&mut rng, 7, 3);
        let c = random_mat(&mut rng, 6, 5);
        assert!(matmul_tn(&a, &b).unwrap().max_abs_diff(&naive_matmul(&a.transpose(), &b)) < 1e-12);
        assert!(matmul_nt(&a, &c).unwrap().max_abs_diff(&naive_matmul(&a, &c.transpose())) < 1e-12);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Mat::zeros(2, 3), &Mat::zeros(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 3)"), "{msg}");
    }

    #[test]
    fn svd_of_identity() {
        let f = svd(&Mat::identity(4)).unwrap();
        assert_eq!(f.s, vec![1.0; 4]);
    }

    #[test]
    fn svd_of_diagonal() {
        let f = svd(&Mat::from_rows(&[[3.0, 0.0], [0.0, 1.0]]).unwrap()).unwrap();
        assert!((f.s[0] - 3.0).abs() < 1e-15 && (f.s[1] - 1.0).abs() < 1e-15);
        let f = svd(&Mat::from_rows(&[[1.0, 0.0], [0.0, 3.0]]).unwrap()).unwrap();
        assert!((f.s[0] - 3.0).abs() < 1e-15 && (f.s[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn svd_reconstructs_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(m, n) in &[(5, 3), (3, 5), (1, 4), (4, 1), (8, 8), (30, 50)] {
            let a = random_mat(&mut rng, m, n);
            let f = svd(&a).unwrap();
            let err = a.sub(&f.reconstruct(None)).unwrap().frobenius_norm();
            assert!(err <= 1e-10 * a.frobenius_norm().max(1.0), "{m}x{n}: {err}");
            assert!(orthonormality_defect(&f.u) < 1e-10);
            assert!(orthonormality_defect(&f.vt.transpose()) < 1e-10);
            assert!(f.s.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn svd_rank_deficient_keeps_orthonormal_factors() {
        let a = Mat::from_rows(&[[1.0, 1.0, 1.0], [1.0, 1.0, 1.0], [1.0, 1.0, 1.0], [0.0, 0.0, 0.0]]).unwrap();
        let f = svd(&a).unwrap();
        assert!((f.s[0] - 3.0).abs() < 1e-14);
        assert!(f.s[1].abs() < 1e-14 && f.s[2].abs() < 1e-14);
        assert!(orthonormality_defect(&f.u) < 1e-10);
        assert!(orthonormality_defect(&f.vt.transpose()) < 1e-10);

        let z = svd(&Mat::zeros(3, 2)).unwrap();
        assert_eq!(z.s, vec![0.0, 0.0]);
        assert!(orthonormality_defect(&z.u) < 1e-12);
    }

    #[test]
    fn svd_rejects_non_finite() {
        let mut a = Mat::identity(2);
        a[(0, 1)] = f64::NAN;
        assert!(matches!(svd(&a), Err(Error::NonFinite(_))));
    }

    #[test]
    fn spectral_norm_simple_cases() {
        assert!((spectral_norm(&Mat::identity(3)).unwrap() - 1.0).abs() < 1e-15);
        let d = Mat::from_rows(&[[3.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!((spectral_norm(&d).unwrap() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn spectral_norm_matches_power_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_mat(&mut rng, 4, 4);
        // power iteration on aᵀa
        let ata = matmul_tn(&a, &a).unwrap();
        let mut x = vec![1.0, 0.5, -0.25, 0.125];
        let mut lambda = 0.0;
        for _ in 0..10_000 {
            let y = matvec(&ata, &x).unwrap();
            let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            lambda = norm;
            x = y.iter().map(|v| v / norm).collect();
        }
        let oracle = lambda.sqrt();
        assert!((spectral_norm(&a).unwrap() - oracle).abs() < 1e-8);
    }

    #[test]
    fn truncation_rank_examples() {
        assert_eq!(truncation_rank(&[3.0, 1.0, 1e-9], 1e-6).unwrap(), 2);
        assert_eq!(truncation_rank(&[3.0, 1.0], 0.0).unwrap(), 2);
        assert_eq!(truncation_rank(&[5.0, 0.4, 0.3], 0.5).unwrap(), 1);
        assert_eq!(truncation_rank(&[0.2, 0.1], 0.5).unwrap(), 1);
        assert_eq!(truncation_rank(&[0.0, 0.0], 0.0).unwrap(), 0);
        assert!(truncation_rank(&[1.0], -1.0).is_err());
    }
}
