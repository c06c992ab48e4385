//! Fixed (non-trainable) sparse matrices in triplet form.
//!
//! These carry the mesh pooling transforms. They are constant by design:
//! gradients flow through their multiplication but never into them.

use super::{AutodiffError, Tensor};

/// A sparse matrix stored as row-major sorted `(row, col, weight)` triplets
/// with no duplicate coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMat {
    rows: usize,
    cols: usize,
    triplets: Vec<(u32, u32, f64)>,
}

impl SparseMat {
    pub fn new(
        rows: usize,
        cols: usize,
        mut triplets: Vec<(u32, u32, f64)>,
    ) -> Result<SparseMat, AutodiffError> {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        for window in triplets.windows(2) {
            if window[0].0 == window[1].0 && window[0].1 == window[1].1 {
                return Err(AutodiffError::DuplicateTriplet {
                    row: window[0].0,
                    col: window[0].1,
                });
            }
        }
        for &(r, c, w) in &triplets {
            if r as usize >= rows || c as usize >= cols {
                return Err(AutodiffError::TripletOutOfRange {
                    row: r,
                    col: c,
                    rows,
                    cols,
                });
            }
            if !w.is_finite() {
                return Err(AutodiffError::NonFinite { op: "sparse matrix" });
            }
        }
        Ok(SparseMat {
            rows,
            cols,
            triplets,
        })
    }

    pub fn identity(n: usize) -> SparseMat {
        SparseMat {
            rows: n,
            cols: n,
            triplets: (0..n as u32).map(|i| (i, i, 1.0)).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.triplets.len()
    }

    pub fn triplets(&self) -> &[(u32, u32, f64)] {
        &self.triplets
    }

    /// Sum of weights per row (row-stochastic transforms sum to one).
    pub fn row_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.rows];
        for &(r, _, w) in &self.triplets {
            sums[r as usize] += w;
        }
        sums
    }

    pub fn nonzeros_per_row(&self) -> Vec<usize> {
        let mut counts = vec![0; self.rows];
        for &(r, _, _) in &self.triplets {
            counts[r as usize] += 1;
        }
        counts
    }

    /// `self * dense`, where dense is (cols x k).
    pub fn mul_dense(&self, dense: &Tensor) -> Result<Tensor, AutodiffError> {
        if dense.rows() != self.cols {
            return Err(AutodiffError::ShapeMismatch {
                op: "spmm",
                left: (self.rows, self.cols),
                right: dense.shape(),
            });
        }
        let mut out = Tensor::zeros(self.rows, dense.cols());
        let k = dense.cols();
        for &(r, c, w) in &self.triplets {
            let src = dense.row(c as usize);
            let dst = &mut out.as_mut_slice()[r as usize * k..(r as usize + 1) * k];
            for (o, &x) in dst.iter_mut().zip(src) {
                *o += w * x;
            }
        }
        Ok(out)
    }

    /// `acc += self^T * dense` without allocating.
    pub fn transpose_mul_dense_acc(&self, dense: &Tensor, acc: &mut Tensor) {
        debug_assert_eq!(dense.rows(), self.rows);
        debug_assert_eq!(acc.shape(), (self.cols, dense.cols()));
        let k = dense.cols();
        for &(r, c, w) in &self.triplets {
            let src = dense.row(r as usize);
            let dst = &mut acc.as_mut_slice()[c as usize * k..(c as usize + 1) * k];
            for (o, &x) in dst.iter_mut().zip(src) {
                *o += w * x;
            }
        }
    }

    /// `self^T * dense`, where dense is (rows x k). This is the gradient
    /// path of [`SparseMat::mul_dense`].
    pub fn transpose_mul_dense(&self, dense: &Tensor) -> Result<Tensor, AutodiffError> {
        if dense.rows() != self.rows {
            return Err(AutodiffError::ShapeMismatch {
                op: "spmm_transpose",
                left: (self.cols, self.rows),
                right: dense.shape(),
            });
        }
        let mut out = Tensor::zeros(self.cols, dense.cols());
        let k = dense.cols();
        for &(r, c, w) in &self.triplets {
            let src = dense.row(r as usize);
            let dst = &mut out.as_mut_slice()[c as usize * k..(c as usize + 1) * k];
            for (o, &x) in dst.iter_mut().zip(src) {
                *o += w * x;
            }
        }
        Ok(out)
    }
}
