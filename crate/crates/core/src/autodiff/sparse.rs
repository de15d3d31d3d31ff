//! Compressed-row sparse matrices for adjacency and masked attention patterns.

use super::dense::DenseMatrix;
use crate::error::{Error, Result};

/// CSR matrix. Entries are sorted by (row, col) and deduplicated.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub weights: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        SparseMatrix {
            rows,
            cols,
            row_ptr: vec![0; rows + 1],
            col_idx: Vec::new(),
            weights: Vec::new(),
        }
    }

    /// Build from triplets. Duplicate (row, col) pairs keep the last weight.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        mut entries: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        for &(r, c, w) in &entries {
            if r >= rows || c >= cols {
                return Err(Error::Shape(format!(
                    "entry ({r},{c}) out of range for {rows}x{cols}"
                )));
            }
            if !w.is_finite() {
                return Err(Error::Numeric(format!("non-finite weight at ({r},{c})")));
            }
        }
        entries.sort_by_key(|&(r, c, _)| (r, c));
        entries.dedup_by(|a, b| {
            if a.0 == b.0 && a.1 == b.1 {
                b.2 = a.2;
                true
            } else {
                false
            }
        });
        let mut row_ptr = vec![0usize; rows + 1];
        for &(r, _, _) in &entries {
            row_ptr[r + 1] += 1;
        }
        for i in 0..rows {
            row_ptr[i + 1] += row_ptr[i];
        }
        let col_idx = entries.iter().map(|e| e.1).collect();
        let weights = entries.iter().map(|e| e.2).collect();
        Ok(SparseMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            weights,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0)).collect()).unwrap()
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (lo, hi) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.col_idx[lo..hi]
            .iter()
            .zip(&self.weights[lo..hi])
            .map(|(&c, &w)| (c, w))
    }

    /// Sparse-dense product `self * d`.
    pub fn spmm(&self, d: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != d.rows {
            return Err(Error::Shape(format!(
                "spmm {}x{} * {}x{}",
                self.rows, self.cols, d.rows, d.cols
            )));
        }
        let mut out = DenseMatrix::zeros(self.rows, d.cols);
        for r in 0..self.rows {
            for i in self.row_ptr[r]..self.row_ptr[r + 1] {
                let (c, w) = (self.col_idx[i], self.weights[i]);
                let src = d.row(c);
                let dst = out.row_mut(r);
                for (o, &v) in dst.iter_mut().zip(src) {
                    *o += w * v;
                }
            }
        }
        Ok(out)
    }

    /// Transposed sparse-dense product `selfᵀ * d` (spmm adjoint for the dense operand).
    pub fn spmm_transpose(&self, d: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != d.rows {
            return Err(Error::Shape(format!(
                "spmm_transpose {}x{} * {}x{}",
                self.cols, self.rows, d.rows, d.cols
            )));
        }
        let mut out = DenseMatrix::zeros(self.cols, d.cols);
        for r in 0..self.rows {
            let src = d.row(r);
            for i in self.row_ptr[r]..self.row_ptr[r + 1] {
                let (c, w) = (self.col_idx[i], self.weights[i]);
                let dst = out.row_mut(c);
                for (o, &v) in dst.iter_mut().zip(src) {
                    *o += w * v;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            for (c, w) in self.row_entries(r) {
                triplets.push((c, r, w));
            }
        }
        SparseMatrix::from_triplets(self.cols, self.rows, triplets).unwrap()
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, w) in self.row_entries(r) {
                out.set(r, c, w);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spmm_hand_example() {
        let s = SparseMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (1, 1, 2.0)]).unwrap();
        let d = DenseMatrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let p = s.spmm(&d).unwrap();
        assert_eq!(p.values, vec![1.0, 2.0, 6.0, 8.0]);
    }

    #[test]
    fn spmm_zero_matrix() {
        let s = SparseMatrix::zeros(3, 2);
        let d = DenseMatrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let p = s.spmm(&d).unwrap();
        assert!(p.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn spmm_identity() {
        let s = SparseMatrix::identity(3);
        let d = DenseMatrix::from_rows(&[&[1.0], &[2.0], &[3.0]]);
        assert_eq!(s.spmm(&d).unwrap(), d);
    }

    #[test]
    fn spmm_dimension_mismatch() {
        let s = SparseMatrix::zeros(2, 3);
        let d = DenseMatrix::zeros(2, 2);
        assert!(s.spmm(&d).is_err());
    }

    #[test]
    fn duplicates_collapse() {
        let s = SparseMatrix::from_triplets(1, 1, vec![(0, 0, 1.0), (0, 0, 5.0)]).unwrap();
        assert_eq!(s.nnz(), 1);
        assert_eq!(s.weights[0], 5.0);
    }
}
