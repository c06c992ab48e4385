//! Convex interpolation weights for the pooling transforms.
//!
//! Each target vertex is written as a convex combination of its k nearest
//! source vertices: the weights minimize the reconstruction residual subject
//! to nonnegativity and summing to one. With k small the constrained least
//! squares is solved exactly by enumerating active sets; singleton sets are
//! always feasible, so a solution always exists. Inverse-distance weights
//! are the fallback if the solver degenerates numerically.

use super::HierarchyError;
use crate::autodiff::SparseMat;
use crate::mesh::{KdTree, TriMesh};
use nalgebra::{DMatrix, DVector, Point3};

/// Convex weights over `neighbors` best reproducing `target`.
/// Returns `(weights, residual)`.
fn convex_weights(
    neighbors: &[Point3<f64>],
    target: Point3<f64>,
) -> Option<(Vec<f64>, f64)> {
    let k = neighbors.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    // Active-set enumeration in ascending bitmask order; ties keep the
    // earliest (deterministic).
    for mask in 1u32..(1 << k) {
        let support: Vec<usize> = (0..k).filter(|&i| mask >> i & 1 == 1).collect();
        let s = support.len();
        // KKT system for: min ||A w - t||^2  s.t.  sum w = 1.
        let mut kkt = DMatrix::zeros(s + 1, s + 1);
        let mut rhs = DVector::zeros(s + 1);
        for (r, &i) in support.iter().enumerate() {
            for (c, &j) in support.iter().enumerate() {
                kkt[(r, c)] = 2.0 * neighbors[i].coords.dot(&neighbors[j].coords);
            }
            kkt[(r, s)] = 1.0;
            kkt[(s, r)] = 1.0;
            rhs[r] = 2.0 * neighbors[i].coords.dot(&target.coords);
        }
        rhs[s] = 1.0;
        let solution = match kkt.lu().solve(&rhs) {
            Some(sol) => sol,
            None => continue,
        };
        let mut w = vec![0.0; k];
        let mut feasible = true;
        for (r, &i) in support.iter().enumerate() {
            let wi = solution[r];
            if !(wi.is_finite() && wi >= -1e-9) {
                feasible = false;
                break;
            }
            w[i] = wi.max(0.0);
        }
        if !feasible {
            continue;
        }
        let sum: f64 = w.iter().sum();
        if sum <= 0.0 {
            continue;
        }
        for wi in &mut w {
            *wi /= sum;
        }
        let mut rec = Point3::origin();
        for (wi, n) in w.iter().zip(neighbors) {
            rec += n.coords * *wi;
        }
        let residual = (rec - target).norm();
        let better = match &best {
            None => true,
            Some((r, _)) => residual < *r - 1e-15,
        };
        if better {
            best = Some((residual, w));
        }
    }
    best.map(|(r, w)| (w, r))
}

fn inverse_distance_weights(neighbors: &[Point3<f64>], target: Point3<f64>) -> Vec<f64> {
    let mut w: Vec<f64> = neighbors
        .iter()
        .map(|n| 1.0 / ((n - target).norm() + 1e-9))
        .collect();
    let sum: f64 = w.iter().sum();
    for wi in &mut w {
        *wi /= sum;
    }
    w
}

/// Report of a [`build_transform`] run.
#[derive(Debug, Clone, Default)]
pub struct TransformReport {
    /// Largest constrained-fit residual over all rows (mm).
    pub max_residual: f64,
    /// Rows that fell back to inverse-distance weights.
    pub fallback_rows: usize,
}

/// Sparse transform with one row per `to` vertex holding convex weights
/// over its `k_nn` nearest `from` vertices: `to ~= D * from`.
pub fn build_transform(
    from: &TriMesh,
    to: &TriMesh,
    k_nn: usize,
) -> Result<SparseMat, HierarchyError> {
    build_transform_reported(from, to, k_nn).map(|(mat, _)| mat)
}

pub fn build_transform_reported(
    from: &TriMesh,
    to: &TriMesh,
    k_nn: usize,
) -> Result<(SparseMat, TransformReport), HierarchyError> {
    if from.vertices.is_empty() || to.vertices.is_empty() {
        return Err(HierarchyError::EmptyMesh);
    }
    if k_nn == 0 || k_nn > from.vertex_count() {
        return Err(HierarchyError::BadKnn {
            k: k_nn,
            vertex_count: from.vertex_count(),
        });
    }
    let tree = KdTree::build(&from.vertices);
    let mut triplets = Vec::with_capacity(to.vertex_count() * k_nn);
    let mut report = TransformReport::default();
    for (row, &target) in to.vertices.iter().enumerate() {
        let nn = tree.knn(target, k_nn);
        let pts: Vec<Point3<f64>> = nn.iter().map(|&i| from.vertices[i as usize]).collect();
        let weights = match convex_weights(&pts, target) {
            Some((w, residual)) => {
                report.max_residual = report.max_residual.max(residual);
                w
            }
            None => {
                report.fallback_rows += 1;
                inverse_distance_weights(&pts, target)
            }
        };
        for (&col, &w) in nn.iter().zip(&weights) {
            if w > 0.0 {
                triplets.push((row as u32, col, w));
            }
        }
    }
    let mat = SparseMat::new(to.vertex_count(), from.vertex_count(), triplets)?;
    Ok((mat, report))
}

/// Applies a transform to vertex positions: `out[r] = sum_c w * pos[c]`.
pub fn apply_to_positions(mat: &SparseMat, positions: &[Point3<f64>]) -> Vec<Point3<f64>> {
    let mut out = vec![Point3::origin(); mat.rows()];
    for &(r, c, w) in mat.triplets() {
        out[r as usize] += positions[c as usize].coords * w;
    }
    out
}
