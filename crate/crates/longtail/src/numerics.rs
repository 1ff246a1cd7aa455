//! Stable elementary numerics: row-major matrices, the softmax family, and
//! a central finite-difference gradient oracle.
//!
//! Everything here runs in f64. The models trained by this crate are small
//! enough that single precision buys nothing and would only add a tolerance
//! variable to the gradient checks.

use crate::error::{Error, Result};

/// Dense row-major matrix of f64 values.
#[derive(Debug, Clone, PartialEq)]
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

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: format!("{rows}x{cols} = {} values", rows * cols),
                got: format!("{} values", data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::ShapeMismatch {
                    expected: format!("row of {cols} values"),
                    got: format!("row {i} with {} values", row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self (r x k) * other (k x c)`.
    pub fn mul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x? for left {}x{}", self.cols, self.rows, self.cols),
                got: format!("{}x{}", other.rows, other.cols),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                let dst = out.row_mut(i);
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        Ok(out)
    }

    /// `self^T (k x r) * other (r x c)`: both operands indexed by their shared
    /// row dimension, used for weight gradients.
    pub fn t_mul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::ShapeMismatch {
                expected: format!("{} rows", self.rows),
                got: format!("{} rows", other.rows),
            });
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let left = self.row(r);
            let right = other.row(r);
            for (k, &a) in left.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let dst = out.row_mut(k);
                for (d, s) in dst.iter_mut().zip(right) {
                    *d += a * s;
                }
            }
        }
        Ok(out)
    }

    /// `self (r x k) * other^T (c x k)`.
    pub fn mul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::ShapeMismatch {
                expected: format!("{} cols", self.cols),
                got: format!("{} cols", other.cols),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let left = self.row(i);
            for j in 0..other.rows {
                let right = other.row(j);
                let mut acc = 0.0;
                for (a, b) in left.iter().zip(right) {
                    acc += a * b;
                }
                out.set(i, j, acc);
            }
        }
        Ok(out)
    }
}

/// Row-wise log-softmax with max-shift.
///
/// Exponentials of each output row sum to 1 within 1e-12, and adding a
/// constant to a row leaves the output bit-identical whenever the shifted
/// inputs are exactly representable.
pub fn log_softmax(logits: &Matrix) -> Result<Matrix> {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "logits",
                row: r,
            });
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter() {
            sum += (v - max).exp();
        }
        // Subtract the max first: when the shifted inputs are exactly
        // representable, `v - max` cancels the shift before any rounding at
        // the shifted magnitude can occur.
        let log_sum = sum.ln();
        for v in row.iter_mut() {
            *v = (*v - max) - log_sum;
        }
    }
    Ok(out)
}

/// Row-wise softmax, computed as `exp(log_softmax)`.
pub fn softmax(logits: &Matrix) -> Result<Matrix> {
    let mut out = log_softmax(logits)?;
    for v in out.data_mut() {
        *v = v.exp();
    }
    Ok(out)
}

/// Central-difference gradient estimate of a scalar function of a matrix:
/// `(f(x + h e_ij) - f(x - h e_ij)) / (2h)` per entry.
pub fn finite_diff_grad<F>(f: F, x: &Matrix, h: f64) -> Matrix
where
    F: Fn(&Matrix) -> f64,
{
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for i in 0..x.data().len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Agreement below this absolute difference counts as exact in gradient
/// checks: central differences at h near 1e-3 carry roundoff noise around
/// 1e-11, so differences this small say nothing about the analytic path.
pub const GRADCHECK_ABS_FLOOR: f64 = 1e-8;

/// Error metric for comparing an analytic derivative against a
/// finite-difference estimate: the symmetric relative error
/// `|a - b| / (|a| + |b|)`, with absolute agreement within
/// [`GRADCHECK_ABS_FLOOR`] counting as exact.
pub fn gradcheck_error(analytic: f64, estimate: f64) -> f64 {
    let diff = (analytic - estimate).abs();
    if diff <= GRADCHECK_ABS_FLOOR {
        0.0
    } else {
        diff / (analytic.abs() + estimate.abs())
    }
}

/// Largest entrywise [`gradcheck_error`] between two equally shaped matrices.
pub fn max_gradcheck_error(analytic: &Matrix, estimate: &Matrix) -> f64 {
    debug_assert_eq!(analytic.rows(), estimate.rows());
    debug_assert_eq!(analytic.cols(), estimate.cols());
    analytic
        .data()
        .iter()
        .zip(estimate.data())
        .map(|(&x, &y)| gradcheck_error(x, y))
        .fold(0.0, f64::max)
}

/// Largest entrywise absolute difference, for identity checks between two
/// computation routes.
pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    debug_assert_eq!(a.rows(), b.rows());
    debug_assert_eq!(a.cols(), b.cols());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn log_softmax_uniform_row() {
        let m = Matrix::from_vec(1, 4, vec![0.0; 4]).unwrap();
        let ls = log_softmax(&m).unwrap();
        for &v in ls.row(0) {
            assert!((v + 4.0f64.ln()).abs() < 1e-15, "got {v}");
        }
    }

    #[test]
    fn log_softmax_shift_invariance_is_exact() {
        // Integer logits and an integer shift keep every intermediate sum
        // exactly representable, so the outputs must be bit-identical.
        let base = Matrix::from_vec(2, 3, vec![1.0, -2.0, 3.0, 0.0, 5.0, -1.0]).unwrap();
        let mut shifted = base.clone();
        for v in shifted.data_mut() {
            *v += 1000.0;
        }
        let a = log_softmax(&base).unwrap();
        let b = log_softmax(&shifted).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn log_softmax_matches_direct_evaluation() {
        // Independent route: the plain definition without max-shift, safe at
        // these magnitudes. Frozen spot value for the [1, 2, 3] row.
        let m = Matrix::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let ls = log_softmax(&m).unwrap();
        let total: f64 = m.row(0).iter().map(|v| v.exp()).sum();
        for (j, &v) in ls.row(0).iter().enumerate() {
            let direct = m.get(0, j) - total.ln();
            assert!((v - direct).abs() < 1e-14);
        }
        assert!((ls.get(0, 0) - (-2.407_605_964_444_38)).abs() < 1e-12);
    }

    #[test]
    fn log_softmax_rejects_non_finite() {
        let m = Matrix::from_vec(2, 2, vec![0.0, 1.0, f64::NAN, 0.0]).unwrap();
        match log_softmax(&m) {
            Err(Error::NonFinite { row, .. }) => assert_eq!(row, 1),
            other => panic!("expected NonFinite error, got {other:?}"),
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = SeededRng::new(11);
        for _ in 0..50 {
            let data: Vec<f64> = (0..4 * 7).map(|_| rng.normal() * 3.0).collect();
            let m = Matrix::from_vec(4, 7, data).unwrap();
            let p = softmax(&m).unwrap();
            for r in 0..4 {
                let sum: f64 = p.row(r).iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
                assert!(p.row(r).iter().all(|&v| v > 0.0 && v < 1.0));
            }
            let ls = log_softmax(&m).unwrap();
            assert!(ls.data().iter().all(|&v| v <= 0.0));
        }
    }

    #[test]
    fn finite_diff_on_sum_of_squares() {
        let x = Matrix::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let f = |m: &Matrix| m.data().iter().map(|v| v * v).sum::<f64>();
        let g = finite_diff_grad(f, &x, 1e-3);
        assert!((g.get(0, 0) - 2.0).abs() < 1e-6);
        assert!((g.get(0, 1) - 4.0).abs() < 1e-6);
    }

    #[test]
    fn finite_diff_on_constant_is_zero() {
        let x = Matrix::from_vec(2, 2, vec![0.5; 4]).unwrap();
        let g = finite_diff_grad(|_| 3.25, &x, 1e-3);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = SeededRng::new(4);
        let a_data: Vec<f64> = (0..3 * 5).map(|_| rng.normal()).collect();
        let b_data: Vec<f64> = (0..5 * 2).map(|_| rng.normal()).collect();
        let a = Matrix::from_vec(3, 5, a_data).unwrap();
        let b = Matrix::from_vec(5, 2, b_data).unwrap();
        let c = a.mul(&b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut acc = 0.0;
                for k in 0..5 {
                    acc += a.get(i, k) * b.get(k, j);
                }
                assert!((c.get(i, j) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        assert!(matches!(a.mul(&b), Err(Error::ShapeMismatch { .. })));
    }
}
