//! Dense row-major linear algebra in 64-bit floats.
//!
//! Only what the training engine and the linear-model analysis need:
//! products (plain and with either operand transposed), row-wise softmax and
//! log-sum-exp, and a one-sided Jacobi thin SVD for small matrices.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Exec};

/// Relative truncation threshold used by [`svd_thin`] callers that have no
/// better choice.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

const MAX_SWEEPS: usize = 80;

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(12) {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        if self.rows > 12 {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::new",
                format!("{} values for a {rows}x{cols} matrix", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(
                    "Matrix::from_rows",
                    format!("row {i} has {} entries, expected {cols}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn add(&self, other: &Matrix) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    fn zip_with(&self, other: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(), other.shape()),
            ));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest absolute entrywise difference; `inf` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        if self.shape() != other.shape() {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `‖a − b‖₂ / max(‖a‖₂, ‖b‖₂)`, with 0 when both are zero.
    pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
        assert_eq!(a.len(), b.len(), "relative_error: length mismatch");
        let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
        let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
        let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
        if scale == 0.0 {
            0.0
        } else {
            diff / scale
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn ensure_finite(&self, op: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(op))
        }
    }
}

/// `a · b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    matmul_with(Exec::default(), a, b)
}

pub fn matmul_with(exec: Exec, a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::shape(
            "matmul",
            format!("{:?} x {:?}", a.shape(), b.shape()),
        ));
    }
    let (n, m) = (a.rows, b.cols);
    let mut out = Matrix::zeros(n, m);
    if m == 0 {
        return Ok(out);
    }
    par::for_each_chunk_mut(exec, &mut out.data, m, |i, orow| {
        for (k, &aik) in a.row(i).iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            for (o, &bkj) in orow.iter_mut().zip(b.row(k)) {
                *o += aik * bkj;
            }
        }
    });
    Ok(out)
}

/// `a · bᵀ`.
pub fn matmul_transb(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    matmul_transb_with(Exec::default(), a, b)
}

pub fn matmul_transb_with(exec: Exec, a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::shape(
            "matmul_transb",
            format!("{:?} x {:?}ᵀ", a.shape(), b.shape()),
        ));
    }
    let (n, m) = (a.rows, b.rows);
    let mut out = Matrix::zeros(n, m);
    if m == 0 {
        return Ok(out);
    }
    par::for_each_chunk_mut(exec, &mut out.data, m, |i, orow| {
        let ai = a.row(i);
        for (j, o) in orow.iter_mut().enumerate() {
            *o = dot(ai, b.row(j));
        }
    });
    Ok(out)
}

/// `aᵀ · b`.
pub fn matmul_transa(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    matmul_transa_with(Exec::default(), a, b)
}

pub fn matmul_transa_with(exec: Exec, a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(Error::shape(
            "matmul_transa",
            format!("{:?}ᵀ x {:?}", a.shape(), b.shape()),
        ));
    }
    let (n, m) = (a.cols, b.cols);
    let mut out = Matrix::zeros(n, m);
    if m == 0 {
        return Ok(out);
    }
    par::for_each_chunk_mut(exec, &mut out.data, m, |i, orow| {
        for k in 0..a.rows {
            let aki = a.get(k, i);
            if aki == 0.0 {
                continue;
            }
            for (o, &bkj) in orow.iter_mut().zip(b.row(k)) {
                *o += aki * bkj;
            }
        }
    });
    Ok(out)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Softmax of each row, stabilised by subtracting the row maximum.
pub fn softmax_rows(m: &Matrix) -> Result<Matrix> {
    m.ensure_finite("softmax_rows")?;
    let mut out = m.clone();
    for r in 0..out.rows {
        softmax_in_place(out.row_mut(r));
    }
    Ok(out)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `ln Σ exp` of each row, overflow-safe.
pub fn log_sum_exp_rows(m: &Matrix) -> Result<Vec<f64>> {
    m.ensure_finite("log_sum_exp_rows")?;
    Ok((0..m.rows).map(|r| log_sum_exp(m.row(r))).collect())
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Rank-revealing thin singular value decomposition `m = u · diag(sigma) · vᵀ`.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    /// rows × r, orthonormal columns.
    pub u: Matrix,
    /// r values, descending, strictly above the truncation threshold.
    pub sigma: Vec<f64>,
    /// cols × r, orthonormal columns.
    pub v: Matrix,
}

impl ThinSvd {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn reconstruct(&self) -> Matrix {
        let us = Matrix::from_fn(self.u.rows(), self.sigma.len(), |r, c| {
            self.u.get(r, c) * self.sigma[c]
        });
        matmul_transb(&us, &self.v).expect("factor shapes agree")
    }
}

/// One-sided (Hestenes) Jacobi SVD.
///
/// Singular values below `tol · σ_max` are dropped. Each column of `v` is
/// signed so that its largest-magnitude entry is non-negative.
pub fn svd_thin(m: &Matrix, tol: f64) -> Result<ThinSvd> {
    m.ensure_finite("svd_thin")?;
    if m.rows < m.cols {
        let t = svd_thin(&m.transpose(), tol)?;
        let mut out = ThinSvd {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        };
        fix_signs(&mut out);
        return Ok(out);
    }

    let (rows, cols) = m.shape();
    // Column-major working copies: work[j] is column j of m·V.
    let mut work: Vec<Vec<f64>> = (0..cols).map(|c| m.column(c)).collect();
    let mut rot: Vec<Vec<f64>> = (0..cols)
        .map(|c| {
            let mut e = vec![0.0; cols];
            e[c] = 1.0;
            e
        })
        .collect();

    let eps = f64::EPSILON * (rows as f64).max(4.0);
    // Columns this small are numerically zero; rotating them only churns noise.
    let floor = {
        let f = f64::EPSILON * m.frobenius_norm();
        f * f
    };
    let mut converged = cols < 2;
    let mut sweeps = 0;
    while !converged {
        if sweeps == MAX_SWEEPS {
            return Err(Error::Convergence { sweeps });
        }
        sweeps += 1;
        converged = true;
        for p in 0..cols - 1 {
            for q in p + 1..cols {
                let alpha = dot(&work[p], &work[p]);
                let beta = dot(&work[q], &work[q]);
                let gamma = dot(&work[p], &work[q]);
                if alpha <= floor
                    || beta <= floor
                    || gamma.abs() <= eps * (alpha * beta).sqrt()
                {
                    continue;
                }
                converged = false;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut work, p, q, c, s);
                rotate(&mut rot, p, q, c, s);
            }
        }
    }

    let mut order: Vec<(usize, f64)> = work
        .iter()
        .enumerate()
        .map(|(j, col)| (j, dot(col, col).sqrt()))
        .collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let sigma_max = order.first().map_or(0.0, |o| o.1);
    let kept: Vec<(usize, f64)> = order
        .into_iter()
        .filter(|&(_, s)| sigma_max > 0.0 && s > tol * sigma_max)
        .collect();

    let r = kept.len();
    let mut u = Matrix::zeros(rows, r);
    let mut v = Matrix::zeros(cols, r);
    let mut sigma = Vec::with_capacity(r);
    for (k, &(j, s)) in kept.iter().enumerate() {
        sigma.push(s);
        for i in 0..rows {
            u.set(i, k, work[j][i] / s);
        }
        for i in 0..cols {
            v.set(i, k, rot[j][i]);
        }
    }
    let mut out = ThinSvd { u, sigma, v };
    fix_signs(&mut out);
    Ok(out)
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

fn fix_signs(svd: &mut ThinSvd) {
    for k in 0..svd.sigma.len() {
        let mut best = 0.0f64;
        for i in 0..svd.v.rows() {
            let x = svd.v.get(i, k);
            if x.abs() > best.abs() {
                best = x;
            }
        }
        if best < 0.0 {
            for i in 0..svd.v.rows() {
                svd.v.set(i, k, -svd.v.get(i, k));
            }
            for i in 0..svd.u.rows() {
                svd.u.set(i, k, -svd.u.get(i, k));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = crate::seed::rng(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn naive(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    fn orthonormal_cols(m: &Matrix) -> f64 {
        let g = matmul_transa(m, m).unwrap();
        g.max_abs_diff(&Matrix::identity(m.cols()))
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let m = random(3, 4, 1);
        assert_eq!(matmul(&Matrix::identity(3), &m).unwrap(), m);

        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[[1.0], [1.0]]).unwrap();
        let p = matmul(&a, &b).unwrap();
        assert_eq!(p.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a = random(5, 7, 2);
        let b = random(7, 3, 3);
        assert!(matmul(&a, &b).unwrap().max_abs_diff(&naive(&a, &b)) < 1e-12);
        let bt = b.transpose();
        assert!(matmul_transb(&a, &bt).unwrap().max_abs_diff(&naive(&a, &b)) < 1e-12);
        let at = a.transpose();
        assert!(matmul_transa(&at, &b).unwrap().max_abs_diff(&naive(&a, &b)) < 1e-12);
    }

    #[test]
    fn matmul_shape_error() {
        let err = matmul(&Matrix::zeros(2, 3), &Matrix::zeros(2, 3)).unwrap_err();
        assert!(matches!(err, Error::Shape { .. }));
    }

    #[test]
    fn exec_modes_bit_identical() {
        let a = random(33, 17, 4);
        let b = random(17, 9, 5);
        assert_eq!(
            matmul_with(Exec::Sequential, &a, &b).unwrap(),
            matmul_with(Exec::Parallel, &a, &b).unwrap()
        );
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&Matrix::zeros(1, 4)).unwrap();
        assert!(s.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));

        let s = softmax_rows(&Matrix::from_rows(&[[1000.0, 0.0]]).unwrap()).unwrap();
        assert!((s.get(0, 0) - 1.0).abs() < 1e-12 && s.get(0, 1) < 1e-12);

        // e/(e+2), 1/(e+2), 1/(e+2)
        let s = softmax_rows(&Matrix::from_rows(&[[1.0, 0.0, 0.0]]).unwrap()).unwrap();
        for (got, want) in s.data().iter().zip([0.57612, 0.21194, 0.21194]) {
            assert!((got - want).abs() < 1e-5);
        }

        let bad = Matrix::from_rows(&[[f64::NAN, 0.0]]).unwrap();
        assert!(matches!(softmax_rows(&bad), Err(Error::NonFinite(_))));
    }

    #[test]
    fn lse_examples() {
        let l = log_sum_exp_rows(&Matrix::zeros(1, 7)).unwrap();
        assert!((l[0] - 7f64.ln()).abs() < 1e-15);
        let l = log_sum_exp_rows(&Matrix::from_rows(&[[1000.0, 1000.0]]).unwrap()).unwrap();
        assert!((l[0] - (1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn lse_matches_compensated_sum() {
        // Neumaier-compensated sum of exp over a modest-range row is exact
        // to well below 1e-12 relative.
        let m = random(1, 50, 9).scale(3.0);
        let mut sum = 0.0f64;
        let mut comp = 0.0f64;
        for &x in m.row(0) {
            let e = x.exp();
            let t = sum + e;
            if sum.abs() >= e.abs() {
                comp += (sum - t) + e;
            } else {
                comp += (e - t) + sum;
            }
            sum = t;
        }
        let oracle = (sum + comp).ln();
        let got = log_sum_exp_rows(&m).unwrap()[0];
        assert!((got - oracle).abs() < 1e-12);
    }

    #[test]
    fn svd_small_cases() {
        let s = svd_thin(&Matrix::identity(3), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(s.sigma, vec![1.0, 1.0, 1.0]);

        let s = svd_thin(&Matrix::diag(&[2.0, 3.0]), DEFAULT_RANK_TOL).unwrap();
        assert!((s.sigma[0] - 3.0).abs() < 1e-14 && (s.sigma[1] - 2.0).abs() < 1e-14);

        let s = svd_thin(&Matrix::zeros(3, 2), DEFAULT_RANK_TOL).unwrap();
        assert_eq!(s.rank(), 0);
    }

    #[test]
    fn svd_clustered_sqrt_reps_scaling() {
        // 4 orthogonal centroids of norm c, each repeated 4 times: XᵀX = 4c²·P
        // on the centroid span, so every singular value is 2c.
        let c = 1.5;
        let x = Matrix::from_fn(16, 6, |r, col| if col == r / 4 { c } else { 0.0 });
        let s = svd_thin(&x, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(s.rank(), 4);
        for v in &s.sigma {
            assert!((v - 2.0 * c).abs() < 1e-12);
        }
    }

    #[test]
    fn svd_wide_matrix() {
        let m = random(4, 9, 11);
        let s = svd_thin(&m, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(s.rank(), 4);
        let err = s.reconstruct().sub(&m).unwrap().frobenius_norm() / m.frobenius_norm();
        assert!(err < 1e-12);
        assert!(orthonormal_cols(&s.u) < 1e-12 && orthonormal_cols(&s.v) < 1e-12);
    }

    #[test]
    fn svd_sign_convention() {
        let s = svd_thin(&random(8, 5, 12), DEFAULT_RANK_TOL).unwrap();
        for k in 0..s.rank() {
            let col = s.v.column(k);
            let big = col.iter().copied().fold(0.0f64, |b, x| if x.abs() > b.abs() { x } else { b });
            assert!(big >= 0.0);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn matmul_associative(seed in any::<u64>(), n in 1usize..6, k in 1usize..6, m in 1usize..6, p in 1usize..6) {
            let a = random(n, k, seed);
            let b = random(k, m, seed ^ 1);
            let c = random(m, p, seed ^ 2);
            let l = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let r = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            prop_assert!(l.max_abs_diff(&r) < 1e-10);
        }

        #[test]
        fn softmax_shift_invariant(seed in any::<u64>(), shift in -50.0f64..50.0) {
            let m = random(4, 6, seed).scale(5.0);
            let s = softmax_rows(&m).unwrap();
            let shifted = Matrix::from_fn(4, 6, |r, c| m.get(r, c) + shift * (r as f64 + 1.0));
            prop_assert!(softmax_rows(&shifted).unwrap().max_abs_diff(&s) < 1e-12);
            for r in 0..4 {
                prop_assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn svd_reconstructs(seed in any::<u64>(), rows in 1usize..64, cols in 1usize..64) {
            let m = random(rows, cols, seed);
            let s = svd_thin(&m, 1e-14).unwrap();
            let err = s.reconstruct().sub(&m).unwrap().frobenius_norm() / m.frobenius_norm();
            prop_assert!(err < 1e-10, "relative error {err}");
            prop_assert!(orthonormal_cols(&s.u) < 1e-10);
            prop_assert!(orthonormal_cols(&s.v) < 1e-10);
            prop_assert!(s.sigma.windows(2).all(|w| w[0] >= w[1]));
        }

        #[test]
        fn svd_rank_of_clustered(seed in any::<u64>(), k in 1usize..6, reps in 1usize..5, extra in 0usize..4) {
            // Random (hence independent) centroids; rank must equal k.
            let d = k + extra;
            let centroids = random(k, d, seed);
            let x = Matrix::from_fn(k * reps, d, |r, c| centroids.get(r / reps, c));
            let s = svd_thin(&x, DEFAULT_RANK_TOL).unwrap();
            prop_assert_eq!(s.rank(), k);
        }
    }
}
