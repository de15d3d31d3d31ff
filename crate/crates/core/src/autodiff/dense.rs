//! Row-major dense matrices, 64-bit floats.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_values(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "expected {}x{}={} values, got {}",
                rows,
                cols,
                rows * cols,
                values.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, values })
    }

    /// Build from nested rows; panics on ragged input. Test/toy convenience.
    pub fn from_rows(data: &[&[f64]]) -> Self {
        let rows = data.len();
        let cols = if rows == 0 { 0 } else { data[0].len() };
        let mut values = Vec::with_capacity(rows * cols);
        for r in data {
            assert_eq!(r.len(), cols, "ragged row");
            values.extend_from_slice(r);
        }
        DenseMatrix { rows, cols, values }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &DenseMatrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "matmul {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (k, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = other.row(k);
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.values[c * self.rows + r] = self.values[r * self.cols + c];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip(&self, other: &DenseMatrix, f: impl Fn(f64, f64) -> f64) -> DenseMatrix {
        debug_assert!(self.same_shape(other));
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &DenseMatrix) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, c: f64) {
        for v in self.values.iter_mut() {
            *v *= c;
        }
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn frob_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Numerically stabilized per-row softmax (max subtraction per row).
    pub fn softmax_rows(&self) -> Result<DenseMatrix> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::Contract("softmax_rows on empty matrix".into()));
        }
        if !self.is_finite() {
            return Err(Error::Numeric("softmax_rows on non-finite input".into()));
        }
        let mut out = self.clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        Ok(out)
    }

    /// Per-row l2 normalization; zero rows pass through unchanged.
    pub fn l2_normalize_rows(&self) -> DenseMatrix {
        let mut out = self.clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for v in row.iter_mut() {
                    *v /= norm;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_rows_sum_to_one() {
        let m = DenseMatrix::from_rows(&[&[0.0, 0.0], &[2.0_f64.ln(), 0.0]]);
        let s = m.softmax_rows().unwrap();
        assert!((s.get(0, 0) - 0.5).abs() < 1e-12);
        assert!((s.get(0, 1) - 0.5).abs() < 1e-12);
        assert!((s.get(1, 0) - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.get(1, 1) - 1.0 / 3.0).abs() < 1e-12);
        for r in 0..s.rows {
            let sum: f64 = s.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn softmax_large_values_no_overflow() {
        let m = DenseMatrix::from_rows(&[&[1000.0, 1000.0]]);
        let s = m.softmax_rows().unwrap();
        assert!((s.get(0, 0) - 0.5).abs() < 1e-12);
        assert!(s.is_finite());
    }

    #[test]
    fn softmax_nan_rejected() {
        let m = DenseMatrix::from_rows(&[&[f64::NAN, 0.0]]);
        assert!(m.softmax_rows().is_err());
    }

    #[test]
    fn l2_normalize_345() {
        let m = DenseMatrix::from_rows(&[&[3.0, 4.0]]);
        let n = m.l2_normalize_rows();
        assert!((n.get(0, 0) - 0.6).abs() < 1e-12);
        assert!((n.get(0, 1) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn l2_normalize_zero_row_passes_through() {
        let m = DenseMatrix::from_rows(&[&[0.0, 0.0]]);
        let n = m.l2_normalize_rows();
        assert_eq!(n.values, vec![0.0, 0.0]);
    }

    #[test]
    fn l2_normalize_idempotent() {
        let m = DenseMatrix::from_rows(&[&[1.0, 2.0, -0.5]]);
        let once = m.l2_normalize_rows();
        let twice = once.l2_normalize_rows();
        for (a, b) in once.values.iter().zip(&twice.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
