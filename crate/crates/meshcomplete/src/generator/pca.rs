//! Linear (PCA) reconstruction baseline.
//!
//! Fit via the Gram trick (sample count << dimension), reconstruct by
//! projection onto the top components. The nonlinear generator is only
//! worth its complexity if it beats this at equal rank.

use crate::autodiff::Tensor;
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct PcaModel {
    mean: DVector<f64>,
    /// (dimension x rank), orthonormal columns.
    components: DMatrix<f64>,
}

impl PcaModel {
    /// Fits at most `rank` components to flattened samples.
    pub fn fit(samples: &[Tensor], rank: usize) -> PcaModel {
        assert!(!samples.is_empty(), "pca needs samples");
        let n = samples.len();
        let d = samples[0].len();
        let mut mean = DVector::zeros(d);
        for s in samples {
            for (m, &x) in mean.iter_mut().zip(s.as_slice()) {
                *m += x;
            }
        }
        mean /= n as f64;

        // Centered data, rows are samples.
        let mut a = DMatrix::zeros(n, d);
        for (i, s) in samples.iter().enumerate() {
            for (j, &x) in s.as_slice().iter().enumerate() {
                a[(i, j)] = x - mean[j];
            }
        }
        let gram = &a * a.transpose(); // (n x n)
        let eig = gram.symmetric_eigen();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

        let max_eig = eig.eigenvalues[order[0]].max(0.0);
        let keep: Vec<usize> = order
            .into_iter()
            .take(rank)
            .filter(|&i| eig.eigenvalues[i] > 1e-12 * max_eig.max(1.0))
            .collect();
        let mut components = DMatrix::zeros(d, keep.len());
        for (c, &i) in keep.iter().enumerate() {
            let u = eig.eigenvectors.column(i);
            let v = a.transpose() * u / eig.eigenvalues[i].sqrt();
            components.set_column(c, &v);
        }
        PcaModel { mean, components }
    }

    pub fn rank(&self) -> usize {
        self.components.ncols()
    }

    /// Projection of a flattened sample onto the model.
    pub fn reconstruct(&self, sample: &Tensor) -> Tensor {
        let x = DVector::from_column_slice(sample.as_slice());
        let centered = &x - &self.mean;
        let coeffs = self.components.transpose() * &centered;
        let rebuilt = &self.mean + &self.components * coeffs;
        Tensor::from_vec(sample.rows(), sample.cols(), rebuilt.as_slice().to_vec())
    }

    /// Mean vertex L2 error of the reconstruction, for (N x 3) samples.
    pub fn mean_vertex_error(&self, sample: &Tensor) -> f64 {
        let rebuilt = self.reconstruct(sample);
        mean_vertex_l2(sample, &rebuilt)
    }
}

/// Mean over rows of the Euclidean row distance (mean vertex L2, mm).
pub fn mean_vertex_l2(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let mut total = 0.0;
    for i in 0..a.rows() {
        let mut d2 = 0.0;
        for j in 0..a.cols() {
            let d = a.get(i, j) - b.get(i, j);
            d2 += d * d;
        }
        total += d2.sqrt();
    }
    total / a.rows() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn linear_family(n: usize, seed: u64) -> Vec<Tensor> {
        // Rank-2 family plus a mean offset, 30 vertices.
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let base = Tensor::from_fn(30, 3, |i, j| (i * 3 + j) as f64 * 0.1);
        let dir_a = Tensor::from_fn(30, 3, |i, _| (i as f64 * 0.7).sin());
        let dir_b = Tensor::from_fn(30, 3, |_, j| j as f64 - 1.0);
        (0..n)
            .map(|_| {
                let (a, b) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                let mut t = base.clone();
                t.add_assign_scaled(&dir_a, a);
                t.add_assign_scaled(&dir_b, b);
                t
            })
            .collect()
    }

    #[test]
    fn rank_two_family_is_reconstructed_exactly() {
        let samples = linear_family(20, 1);
        let pca = PcaModel::fit(&samples, 2);
        assert_eq!(pca.rank(), 2);
        let held_out = linear_family(5, 2);
        for s in &held_out {
            assert!(pca.mean_vertex_error(s) < 1e-9);
        }
    }

    #[test]
    fn truncated_rank_loses_accuracy() {
        let samples = linear_family(20, 3);
        let full = PcaModel::fit(&samples, 2);
        let truncated = PcaModel::fit(&samples, 1);
        let probe = &linear_family(8, 4);
        let full_err: f64 = probe.iter().map(|s| full.mean_vertex_error(s)).sum();
        let trunc_err: f64 = probe.iter().map(|s| truncated.mean_vertex_error(s)).sum();
        assert!(trunc_err > full_err + 1e-6);
    }

    #[test]
    fn mean_vertex_l2_of_offset_rows() {
        let a = Tensor::zeros(4, 3);
        let b = Tensor::from_fn(4, 3, |_, j| if j == 0 { 3.0 } else { 4.0 * (j == 1) as u8 as f64 });
        // Every row differs by the vector (3, 4, 0): distance 5.
        assert!((mean_vertex_l2(&a, &b) - 5.0).abs() < 1e-12);
    }
}
