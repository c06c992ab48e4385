//! Evaluation metrics: unidirectional L2 Chamfer after Loop refinement,
//! mean point-to-surface distance, margin fitness along open boundaries,
//! and per-vertex error maps.
//!
//! All metrics are unidirectional (prediction toward reference) because the
//! fitted mesh typically has larger spatial extent than the partial input.

use crate::hierarchy::{loop_subdivide, HierarchyError};
use crate::mesh::{Bvh, KdTree, MeshError, TriMesh};
use nalgebra::Point3;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("mesh has no vertices")]
    EmptyMesh,
    #[error("reference has no faces (surface distance undefined)")]
    NoReferenceSurface,
    #[error("completed region has no open boundary")]
    NoBoundary,
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
}

/// Subdivision cap for Chamfer refinement.
const MAX_SUBDIVISIONS: usize = 4;

/// Unidirectional L2 Chamfer (mm): the prediction is Loop-subdivided until
/// its face count reaches `target_faces` (bounded), then the mean
/// nearest-vertex distance to the reference is taken, prediction side only.
pub fn chamfer_unidirectional(
    pred: &TriMesh,
    reference: &TriMesh,
    target_faces: usize,
) -> Result<f64, MetricsError> {
    if pred.vertices.is_empty() || reference.vertices.is_empty() {
        return Err(MetricsError::EmptyMesh);
    }
    let mut refined = pred.clone();
    let mut iterations = 0;
    while refined.face_count() < target_faces && iterations < MAX_SUBDIVISIONS {
        refined = loop_subdivide(&refined, 1)?;
        iterations += 1;
    }
    let tree = KdTree::build(&reference.vertices);
    let total: f64 = refined
        .vertices
        .iter()
        .map(|&p| (reference.vertices[tree.nearest(p) as usize] - p).norm())
        .sum();
    Ok(total / refined.vertex_count() as f64)
}

/// Mean point-to-surface distance (mm), prediction toward reference.
pub fn mean_point_to_surface(pred: &TriMesh, reference: &TriMesh) -> Result<f64, MetricsError> {
    if pred.vertices.is_empty() {
        return Err(MetricsError::EmptyMesh);
    }
    if reference.faces.is_empty() {
        return Err(MetricsError::NoReferenceSurface);
    }
    let bvh = Bvh::build(reference)?;
    let total: f64 = pred
        .vertices
        .iter()
        .map(|&p| bvh.closest(p).distance)
        .sum();
    Ok(total / pred.vertex_count() as f64)
}

/// Margin fitness (mm): RMS point-to-surface distance of samples placed
/// uniformly along the completed region's open boundary, measured against
/// the partial input surface.
pub fn margin_fitness(
    completed_region: &TriMesh,
    defect: &TriMesh,
    samples_per_edge: usize,
) -> Result<f64, MetricsError> {
    let boundary = completed_region.boundary_edges();
    if boundary.is_empty() {
        return Err(MetricsError::NoBoundary);
    }
    if defect.faces.is_empty() {
        return Err(MetricsError::NoReferenceSurface);
    }
    let bvh = Bvh::build(defect)?;
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    for &(a, b) in &boundary {
        let pa = completed_region.vertices[a as usize];
        let pb = completed_region.vertices[b as usize];
        for s in 0..samples_per_edge {
            let t = (s as f64 + 0.5) / samples_per_edge as f64;
            let p = Point3::from(pa.coords * (1.0 - t) + pb.coords * t);
            let d = bvh.closest(p).distance;
            sum_sq += d * d;
            count += 1;
        }
    }
    Ok((sum_sq / count as f64).sqrt())
}

/// Mean and standard deviation across benchmark cases.
pub fn margin_summary(values: &[f64]) -> (f64, f64) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let variance =
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    (mean, variance.sqrt())
}

/// Per-vertex point-to-surface distances of `pred` against `reference`.
pub fn error_map(pred: &TriMesh, reference: &TriMesh) -> Result<Vec<f64>, MetricsError> {
    if reference.faces.is_empty() {
        return Err(MetricsError::NoReferenceSurface);
    }
    let bvh = Bvh::build(reference)?;
    Ok(pred
        .vertices
        .iter()
        .map(|&p| bvh.closest(p).distance)
        .collect())
}

/// Writes a color-mapped PLY of an error map with a fixed color range so
/// paired maps are directly comparable: blue at zero through red at
/// `range_mm` and above.
pub fn write_error_map_ply(
    mesh: &TriMesh,
    errors: &[f64],
    range_mm: f64,
    path: &Path,
) -> Result<(), MetricsError> {
    assert_eq!(errors.len(), mesh.vertex_count());
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    out.push_str(&format!("element vertex {}\n", mesh.vertex_count()));
    out.push_str("property float x\nproperty float y\nproperty float z\n");
    out.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    out.push_str(&format!("element face {}\n", mesh.face_count()));
    out.push_str("property list uchar uint vertex_indices\nend_header\n");
    for (v, &e) in mesh.vertices.iter().zip(errors) {
        let t = (e / range_mm).clamp(0.0, 1.0);
        let r = (t * 255.0) as u8;
        let b = ((1.0 - t) * 255.0) as u8;
        let g = ((1.0 - (2.0 * t - 1.0).abs()) * 200.0) as u8;
        out.push_str(&format!(
            "{} {} {} {} {} {}\n",
            v.x as f32, v.y as f32, v.z as f32, r, g, b
        ));
    }
    for f in &mesh.faces {
        out.push_str(&format!("3 {} {} {}\n", f[0], f[1], f[2]));
    }
    std::fs::write(path, out).map_err(|source| MetricsError::Write {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::RigidTransform;
    use crate::synth::unit_icosphere;
    use nalgebra::Vector3;

    fn dense_grid(n: usize, z: f64) -> TriMesh {
        let mut vertices = Vec::new();
        for i in 0..=n {
            for j in 0..=n {
                vertices.push(Point3::new(i as f64, j as f64, z));
            }
        }
        let idx = |i: usize, j: usize| (i * (n + 1) + j) as u32;
        let mut faces = Vec::new();
        for i in 0..n {
            for j in 0..n {
                faces.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
                faces.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
            }
        }
        TriMesh::new(vertices, faces).unwrap()
    }

    #[test]
    fn identical_meshes_have_zero_chamfer() {
        let sphere = unit_icosphere(2);
        // Target below the current face count: no subdivision, self distance
        // is exactly zero.
        let cd = chamfer_unidirectional(&sphere, &sphere, 1).unwrap();
        assert_eq!(cd, 0.0);
    }

    #[test]
    fn offset_planes_give_the_offset() {
        let a = dense_grid(20, 0.0);
        let b = dense_grid(20, 0.25);
        // Dense flat grids shifted along z: nearest vertex is the copy.
        let cd = chamfer_unidirectional(&a, &b, 1).unwrap();
        assert!((cd - 0.25).abs() < 1e-12);
        let md = mean_point_to_surface(&a, &b).unwrap();
        assert!((md - 0.25).abs() < 1e-12);
    }

    #[test]
    fn chamfer_matches_quadratic_oracle() {
        let pred = unit_icosphere(1);
        let mut reference = unit_icosphere(1);
        for v in &mut reference.vertices {
            v.coords *= 1.3;
        }
        let fast = chamfer_unidirectional(&pred, &reference, 1).unwrap();
        let mut total = 0.0;
        for p in &pred.vertices {
            let mut best = f64::INFINITY;
            for q in &reference.vertices {
                best = best.min((p - q).norm());
            }
            total += best;
        }
        let slow = total / pred.vertex_count() as f64;
        assert!((fast - slow).abs() < 1e-9);
    }

    #[test]
    fn chamfer_subdivides_to_reach_the_target() {
        let pred = unit_icosphere(1); // 80 faces
        let reference = unit_icosphere(3);
        // Requesting 1000 faces forces two subdivisions (80 -> 320 -> 1280).
        let with = chamfer_unidirectional(&pred, &reference, 1000).unwrap();
        let without = chamfer_unidirectional(&pred, &reference, 1).unwrap();
        assert_ne!(with, without);
    }

    #[test]
    fn md_matches_exhaustive_triangle_oracle() {
        let pred = unit_icosphere(1);
        let mut reference = unit_icosphere(2);
        for v in &mut reference.vertices {
            v.coords *= 0.9;
        }
        let fast = mean_point_to_surface(&pred, &reference).unwrap();
        let mut total = 0.0;
        for &p in &pred.vertices {
            let mut best = f64::INFINITY;
            for f in 0..reference.face_count() {
                let [a, b, c] = reference.face_points(f);
                let (cp, _) = crate::mesh::closest_point_on_triangle(p, a, b, c);
                best = best.min((p - cp).norm());
            }
            total += best;
        }
        let slow = total / pred.vertex_count() as f64;
        assert!((fast - slow).abs() < 1e-9);
    }

    #[test]
    fn metrics_are_rigid_invariant() {
        let pred = unit_icosphere(1);
        let mut reference = unit_icosphere(2);
        for v in &mut reference.vertices {
            v.coords *= 1.1;
        }
        let motion = RigidTransform::new(
            Vector3::new(0.2, -0.7, 0.4),
            Vector3::new(3.0, 8.0, -2.0),
        );
        let cd = chamfer_unidirectional(&pred, &reference, 1).unwrap();
        let md = mean_point_to_surface(&pred, &reference).unwrap();
        let cd_moved = chamfer_unidirectional(
            &pred.transformed(&motion),
            &reference.transformed(&motion),
            1,
        )
        .unwrap();
        let md_moved =
            mean_point_to_surface(&pred.transformed(&motion), &reference.transformed(&motion))
                .unwrap();
        assert!((cd - cd_moved).abs() < 1e-6);
        assert!((md - md_moved).abs() < 1e-6);
    }

    #[test]
    fn margin_of_exact_boundary_is_zero() {
        // A region cut out of a plane, measured against the same plane.
        let plane = dense_grid(10, 0.0);
        let keep: Vec<usize> = (0..plane.face_count() / 2).collect();
        let (region, _) = plane.submesh(&keep);
        let rms = margin_fitness(&region, &plane, 4).unwrap();
        assert!(rms < 1e-9, "rms {rms}");
    }

    #[test]
    fn margin_of_offset_boundary_is_the_offset() {
        let plane = dense_grid(10, 0.0);
        let keep: Vec<usize> = (0..plane.face_count() / 2).collect();
        let (mut region, _) = plane.submesh(&keep);
        for v in &mut region.vertices {
            v.z += 0.125;
        }
        let rms = margin_fitness(&region, &plane, 4).unwrap();
        assert!((rms - 0.125).abs() < 1e-9, "rms {rms}");
    }

    #[test]
    fn margin_rms_matches_its_definition() {
        let plane = dense_grid(8, 0.0);
        let keep: Vec<usize> = (0..plane.face_count() / 3).collect();
        let (mut region, _) = plane.submesh(&keep);
        for (i, v) in region.vertices.iter_mut().enumerate() {
            v.z += 0.05 * (i % 3) as f64;
        }
        let rms = margin_fitness(&region, &plane, 3).unwrap();
        // Independent recomputation from the definition.
        let bvh = Bvh::build(&plane).unwrap();
        let mut squares = Vec::new();
        for &(a, b) in &region.boundary_edges() {
            let pa = region.vertices[a as usize];
            let pb = region.vertices[b as usize];
            for s in 0..3 {
                let t = (s as f64 + 0.5) / 3.0;
                let p = Point3::from(pa.coords * (1.0 - t) + pb.coords * t);
                squares.push(bvh.closest(p).distance.powi(2));
            }
        }
        let expected = (squares.iter().sum::<f64>() / squares.len() as f64).sqrt();
        assert!((rms - expected).abs() < 1e-12);
    }

    #[test]
    fn closed_surface_has_no_margin() {
        let sphere = unit_icosphere(1);
        assert!(matches!(
            margin_fitness(&sphere, &sphere, 4),
            Err(MetricsError::NoBoundary)
        ));
    }

    #[test]
    fn error_map_is_zero_on_self_and_consistent() {
        let sphere = unit_icosphere(2);
        let map = error_map(&sphere, &sphere).unwrap();
        assert!(map.iter().all(|&e| e < 1e-9));

        let mut inflated = sphere.clone();
        for v in &mut inflated.vertices {
            v.coords *= 1.05;
        }
        let map = error_map(&inflated, &sphere).unwrap();
        let max_of_map = map.iter().copied().fold(0.0f64, f64::max);
        let direct_max = inflated
            .vertices
            .iter()
            .map(|&p| crate::mesh::point_to_surface(p, &sphere).unwrap().distance)
            .fold(0.0f64, f64::max);
        assert!((max_of_map - direct_max).abs() < 1e-12);
    }

    #[test]
    fn error_map_ply_uses_the_fixed_range() {
        let dir = tempfile::tempdir().unwrap();
        let sphere = unit_icosphere(1);
        let errors = vec![0.5; sphere.vertex_count()];
        let path_a = dir.path().join("a.ply");
        let path_b = dir.path().join("b.ply");
        write_error_map_ply(&sphere, &errors, 1.0, &path_a).unwrap();
        write_error_map_ply(&sphere, &errors, 1.0, &path_b).unwrap();
        assert_eq!(
            std::fs::read(&path_a).unwrap(),
            std::fs::read(&path_b).unwrap()
        );
    }
}
