//! The trimmed fit loss: mean point-to-surface distance from the partial
//! input's vertices to the candidate surface.
//!
//! Differentiation uses a frozen closest-point assignment per step: the
//! closest face and its barycentric coordinates are recomputed, then held
//! fixed while the distance is differentiated through the barycentric
//! combination. The farthest `ceil(trim * n)` vertices are excluded before
//! averaging, tolerating scan outliers.

use super::FitError;
use crate::autodiff::{SparseMat, Tensor, Value};
use crate::mesh::{Bvh, TriMesh};
use nalgebra::Point3;
use std::sync::Arc;

/// A frozen closest-point assignment for one optimizer step.
#[derive(Debug, Clone)]
pub struct FrozenAssignment {
    /// (kept x N) sparse barycentric gather: `gather * candidate_vertices`
    /// is the matrix of closest points.
    pub gather: Arc<SparseMat>,
    /// Kept input points, (kept x 3).
    pub points: Tensor,
    /// Number of kept vertices after trimming.
    pub kept: usize,
    /// Total input vertices before trimming.
    pub total: usize,
}

/// Computes the assignment of input points to the candidate surface, trims
/// the farthest fraction, and freezes barycentric weights.
pub fn freeze_assignment(
    points: &[Point3<f64>],
    candidate: &TriMesh,
    trim_fraction: f64,
) -> Result<FrozenAssignment, FitError> {
    if points.is_empty() {
        return Err(FitError::EmptyInput);
    }
    if !(0.0..1.0).contains(&trim_fraction) {
        return Err(FitError::BadTrimFraction(trim_fraction));
    }
    let bvh = Bvh::build(candidate).map_err(FitError::Mesh)?;
    let hits: Vec<_> = points.iter().map(|&p| bvh.closest(p)).collect();

    let n = points.len();
    let trim_count = (trim_fraction * n as f64).ceil() as usize;
    if trim_count >= n {
        return Err(FitError::TrimmedEverything {
            trimmed: trim_count,
            total: n,
        });
    }
    // Order by (distance, index); drop the largest-distance tail.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| hits[a].distance.total_cmp(&hits[b].distance).then(a.cmp(&b)));
    let mut keep: Vec<usize> = order[..n - trim_count].to_vec();
    keep.sort_unstable(); // rows in input order

    let mut triplets = Vec::with_capacity(keep.len() * 3);
    let mut kept_points = Tensor::zeros(keep.len(), 3);
    for (row, &i) in keep.iter().enumerate() {
        let hit = &hits[i];
        let face = candidate.faces[hit.face_index];
        for (corner, &w) in face.iter().zip(&hit.barycentric) {
            if w != 0.0 {
                triplets.push((row as u32, *corner, w));
            }
        }
        for (j, coord) in [points[i].x, points[i].y, points[i].z].into_iter().enumerate() {
            kept_points.set(row, j, coord);
        }
    }
    // Barycentric weights can repeat a column when a face has coincident
    // projections; SparseMat forbids duplicates, so merge them.
    triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
    let mut merged: Vec<(u32, u32, f64)> = Vec::with_capacity(triplets.len());
    for (r, c, w) in triplets {
        match merged.last_mut() {
            Some(last) if last.0 == r && last.1 == c => last.2 += w,
            _ => merged.push((r, c, w)),
        }
    }
    let gather = SparseMat::new(keep.len(), candidate.vertex_count(), merged)
        .map_err(FitError::Autodiff)?;
    Ok(FrozenAssignment {
        gather: Arc::new(gather),
        points: kept_points,
        kept: keep.len(),
        total: n,
    })
}

/// The differentiable trimmed mean distance for a frozen assignment:
/// `mean_i || p_i - (gather * V)_i ||`.
pub fn fit_loss_value(
    assignment: &FrozenAssignment,
    candidate_vertices: &Value,
) -> Result<Value, FitError> {
    let tape = candidate_vertices.owner();
    let target = tape.constant(assignment.points.clone());
    let closest = candidate_vertices.spmm(&assignment.gather)?;
    let delta = target.sub(&closest)?;
    let squared = delta.hadamard(&delta)?;
    let ones = tape.constant(Tensor::from_vec(3, 1, vec![1.0; 3]));
    let row_sums = squared.matmul(&ones)?;
    // Epsilon inside the root keeps the gradient finite at zero distance.
    let distances = row_sums.sqrt_guarded(1e-24);
    Ok(distances.mean())
}

/// Plain (non-differentiable) trimmed fit loss between two meshes; the
/// independent evaluation path used by initialization and tests.
pub fn fit_loss(
    defect: &TriMesh,
    candidate: &TriMesh,
    trim_fraction: f64,
) -> Result<f64, FitError> {
    if candidate.faces.is_empty() {
        return Err(FitError::Mesh(crate::mesh::MeshError::NoFaces));
    }
    let bvh = Bvh::build(candidate).map_err(FitError::Mesh)?;
    let n = defect.vertices.len();
    if n == 0 {
        return Err(FitError::EmptyInput);
    }
    if !(0.0..1.0).contains(&trim_fraction) {
        return Err(FitError::BadTrimFraction(trim_fraction));
    }
    let trim_count = (trim_fraction * n as f64).ceil() as usize;
    if trim_count >= n {
        return Err(FitError::TrimmedEverything {
            trimmed: trim_count,
            total: n,
        });
    }
    let mut distances: Vec<f64> = defect
        .vertices
        .iter()
        .map(|&p| bvh.closest(p).distance)
        .collect();
    distances.sort_by(|a, b| a.total_cmp(b));
    let kept = &distances[..n - trim_count];
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}
