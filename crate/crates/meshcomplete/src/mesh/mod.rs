//! Triangle-mesh representation, I/O and geometric queries.
//!
//! All coordinates are in millimeters. Meshes are plain indexed triangle
//! lists; vertex and face order is preserved exactly by construction, I/O
//! and transforms, which the rest of the pipeline relies on for
//! reproducibility and for template-topology correspondences.

mod distance;
mod io;
mod knn;
mod transform;

pub use distance::{closest_point_on_triangle, point_to_surface, Bvh, RayHit, SurfaceHit};
pub use io::{load_mesh, save_mesh, save_mesh_with, LoadReport, PlyEncoding, SaveOptions};
pub use knn::{knn_points, knn_vertices, KdTree};
pub use transform::{rotation_jacobian, rotation_matrix, RigidTransform};

use nalgebra::{Point3, Vector3};
use std::collections::BTreeMap;
use thiserror::Error;

/// Errors raised by mesh construction, queries and I/O.
#[derive(Debug, Error)]
pub enum MeshError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("unsupported mesh format: {0} (expected .obj or .ply)")]
    UnsupportedFormat(String),
    #[error("parse error in {path} (line {line}): {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("mesh has no vertices after cleanup: {0}")]
    Empty(String),
    #[error("face index {index} out of range (vertex count {vertex_count})")]
    IndexOutOfRange { index: u32, vertex_count: usize },
    #[error("operation requires at least one face")]
    NoFaces,
    #[error("k={k} exceeds vertex count {vertex_count}")]
    KnnTooLarge { k: usize, vertex_count: usize },
}

/// An indexed triangle mesh with positions in millimeters.
///
/// `labels` optionally carries one integer tag per vertex (used by the
/// post-process stage and by defect bookkeeping).
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Point3<f64>>,
    pub faces: Vec<[u32; 3]>,
    pub labels: Option<Vec<i32>>,
}

/// Squared-area threshold below which a face is considered degenerate.
/// `cross(e1, e2)` has norm `2 * area`; 1e-20 mm^4 corresponds to an area
/// of 5e-11 mm^2, far below anything a real scan can represent.
const DEGENERATE_CROSS_SQ: f64 = 1e-20;

impl TriMesh {
    pub fn new(vertices: Vec<Point3<f64>>, faces: Vec<[u32; 3]>) -> Result<Self, MeshError> {
        let mesh = TriMesh {
            vertices,
            faces,
            labels: None,
        };
        mesh.check_indices()?;
        Ok(mesh)
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    fn check_indices(&self) -> Result<(), MeshError> {
        let n = self.vertices.len();
        for f in &self.faces {
            for &i in f {
                if i as usize >= n {
                    return Err(MeshError::IndexOutOfRange {
                        index: i,
                        vertex_count: n,
                    });
                }
            }
        }
        Ok(())
    }

    /// Drops faces with repeated indices or (near-)zero area, in place.
    /// Returns the number of dropped faces. Vertex list is untouched.
    pub fn drop_degenerate_faces(&mut self) -> usize {
        let verts = &self.vertices;
        let before = self.faces.len();
        self.faces.retain(|f| {
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return false;
            }
            let a = verts[f[0] as usize];
            let b = verts[f[1] as usize];
            let c = verts[f[2] as usize];
            (b - a).cross(&(c - a)).norm_squared() > DEGENERATE_CROSS_SQ
        });
        before - self.faces.len()
    }

    pub fn face_points(&self, face: usize) -> [Point3<f64>; 3] {
        let f = self.faces[face];
        [
            self.vertices[f[0] as usize],
            self.vertices[f[1] as usize],
            self.vertices[f[2] as usize],
        ]
    }

    pub fn face_centroid(&self, face: usize) -> Point3<f64> {
        let [a, b, c] = self.face_points(face);
        Point3::from((a.coords + b.coords + c.coords) / 3.0)
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.face_points(face);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn centroid(&self) -> Point3<f64> {
        let mut sum = Vector3::zeros();
        for v in &self.vertices {
            sum += v.coords;
        }
        Point3::from(sum / self.vertices.len().max(1) as f64)
    }

    pub fn bounding_box(&self) -> (Point3<f64>, Point3<f64>) {
        let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut hi = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    /// Per-vertex neighbor lists: sorted, deduplicated, no self loops.
    pub fn vertex_adjacency(&self) -> Vec<Vec<u32>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                adj[a as usize].push(b);
                adj[b as usize].push(a);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }

    /// Unique undirected edges as (min, max) pairs, sorted.
    pub fn edges(&self) -> Vec<(u32, u32)> {
        let mut edges = Vec::with_capacity(self.faces.len() * 3);
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                edges.push((a.min(b), a.max(b)));
            }
        }
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    /// Map from undirected edge to the number of incident faces.
    pub fn edge_face_counts(&self) -> BTreeMap<(u32, u32), u32> {
        let mut counts = BTreeMap::new();
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Edges with exactly one incident face.
    pub fn boundary_edges(&self) -> Vec<(u32, u32)> {
        self.edge_face_counts()
            .into_iter()
            .filter(|&(_, c)| c == 1)
            .map(|(e, _)| e)
            .collect()
    }

    pub fn mean_edge_length(&self) -> f64 {
        let edges = self.edges();
        if edges.is_empty() {
            return 0.0;
        }
        let total: f64 = edges
            .iter()
            .map(|&(a, b)| (self.vertices[a as usize] - self.vertices[b as usize]).norm())
            .sum();
        total / edges.len() as f64
    }

    /// Single-source geodesic (graph) distances over edge lengths, Dijkstra.
    /// Unreachable vertices get `f64::INFINITY`.
    pub fn geodesic_distances(&self, seed: u32) -> Vec<f64> {
        use std::cmp::Reverse;
        use std::collections::BinaryHeap;

        let n = self.vertices.len();
        let adj = self.vertex_adjacency();
        let mut dist = vec![f64::INFINITY; n];
        let mut heap: BinaryHeap<Reverse<(DistKey, u32)>> = BinaryHeap::new();
        dist[seed as usize] = 0.0;
        heap.push(Reverse((DistKey(0.0), seed)));
        while let Some(Reverse((DistKey(d), v))) = heap.pop() {
            if d > dist[v as usize] {
                continue;
            }
            for &w in &adj[v as usize] {
                let nd = d + (self.vertices[v as usize] - self.vertices[w as usize]).norm();
                if nd < dist[w as usize] {
                    dist[w as usize] = nd;
                    heap.push(Reverse((DistKey(nd), w)));
                }
            }
        }
        dist
    }

    /// Area-weighted vertex normals. Vertices with no incident face area get
    /// a zero vector and a `false` validity flag.
    pub fn vertex_normals(&self) -> VertexNormals {
        let mut accum = vec![Vector3::zeros(); self.vertices.len()];
        for f in &self.faces {
            let a = self.vertices[f[0] as usize];
            let b = self.vertices[f[1] as usize];
            let c = self.vertices[f[2] as usize];
            // Cross product norm is twice the face area, so summing the raw
            // cross products is the area weighting.
            let cross = (b - a).cross(&(c - a));
            for &i in f {
                accum[i as usize] += cross;
            }
        }
        let mut normals = Vec::with_capacity(accum.len());
        let mut valid = Vec::with_capacity(accum.len());
        for sum in accum {
            let norm = sum.norm();
            if norm > 1e-12 {
                normals.push(sum / norm);
                valid.push(true);
            } else {
                normals.push(Vector3::zeros());
                valid.push(false);
            }
        }
        VertexNormals { normals, valid }
    }

    /// Rigidly transforms every vertex; connectivity and labels unchanged.
    pub fn transformed(&self, t: &RigidTransform) -> TriMesh {
        let rot = t.rotation_matrix();
        TriMesh {
            vertices: self
                .vertices
                .iter()
                .map(|v| Point3::from(rot * v.coords + t.translation))
                .collect(),
            faces: self.faces.clone(),
            labels: self.labels.clone(),
        }
    }

    /// Keeps only the given faces, dropping vertices that become unreferenced.
    /// Returns the submesh and the map from surviving vertex index to the
    /// original vertex index.
    pub fn submesh(&self, keep_faces: &[usize]) -> (TriMesh, Vec<u32>) {
        let mut old_to_new = vec![u32::MAX; self.vertices.len()];
        let mut new_to_old = Vec::new();
        let mut faces = Vec::with_capacity(keep_faces.len());
        for &fi in keep_faces {
            let f = self.faces[fi];
            let mut nf = [0u32; 3];
            for (slot, &vi) in nf.iter_mut().zip(f.iter()) {
                if old_to_new[vi as usize] == u32::MAX {
                    old_to_new[vi as usize] = new_to_old.len() as u32;
                    new_to_old.push(vi);
                }
                *slot = old_to_new[vi as usize];
            }
            faces.push(nf);
        }
        let vertices = new_to_old
            .iter()
            .map(|&vi| self.vertices[vi as usize])
            .collect();
        let labels = self.labels.as_ref().map(|l| {
            new_to_old
                .iter()
                .map(|&vi| l[vi as usize])
                .collect::<Vec<_>>()
        });
        (
            TriMesh {
                vertices,
                faces,
                labels,
            },
            new_to_old,
        )
    }
}

/// Result of [`TriMesh::vertex_normals`].
#[derive(Debug, Clone)]
pub struct VertexNormals {
    pub normals: Vec<Vector3<f64>>,
    pub valid: Vec<bool>,
}

/// Total-order f64 key for use in heaps; inputs must not be NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct DistKey(pub f64);

impl Eq for DistKey {}

impl PartialOrd for DistKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for DistKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::unit_icosphere;

    fn square_grid(n: usize) -> TriMesh {
        // (n+1)^2 vertices in the z=0 plane, 2n^2 triangles.
        let mut vertices = Vec::new();
        for i in 0..=n {
            for j in 0..=n {
                vertices.push(Point3::new(i as f64, j as f64, 0.0));
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
    fn flat_grid_normals_point_up() {
        let grid = square_grid(4);
        let n = grid.vertex_normals();
        for (normal, valid) in n.normals.iter().zip(&n.valid) {
            assert!(valid);
            assert!((normal - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn icosphere_normals_are_radial() {
        let sphere = unit_icosphere(2);
        let n = sphere.vertex_normals();
        let max_angle_deg = 5.0_f64;
        for (v, normal) in sphere.vertices.iter().zip(&n.normals) {
            let radial = v.coords.normalize();
            let cos = normal.dot(&radial).clamp(-1.0, 1.0);
            assert!(cos.acos().to_degrees() < max_angle_deg);
        }
    }

    #[test]
    fn isolated_vertex_flagged_invalid() {
        let mut mesh = square_grid(1);
        mesh.vertices.push(Point3::new(10.0, 10.0, 10.0));
        let n = mesh.vertex_normals();
        assert!(!n.valid[mesh.vertex_count() - 1]);
        assert_eq!(n.normals[mesh.vertex_count() - 1], Vector3::zeros());
    }

    #[test]
    fn degenerate_faces_dropped() {
        let mut mesh = square_grid(1);
        mesh.faces.push([0, 0, 1]); // repeated index
        mesh.faces.push([0, 1, 2]); // fine
        let dup = mesh.vertices[0];
        mesh.vertices.push(dup);
        let zero_idx = (mesh.vertex_count() - 1) as u32;
        mesh.faces.push([0, zero_idx, 1]); // zero area: two coincident corners
        let dropped = mesh.drop_degenerate_faces();
        assert_eq!(dropped, 2);
    }

    #[test]
    fn adjacency_is_symmetric_and_loop_free() {
        let sphere = unit_icosphere(1);
        let adj = sphere.vertex_adjacency();
        for (v, list) in adj.iter().enumerate() {
            for &w in list {
                assert_ne!(w as usize, v);
                assert!(adj[w as usize].contains(&(v as u32)));
            }
        }
    }

    #[test]
    fn geodesic_on_grid_matches_manhattan_paths() {
        let grid = square_grid(3);
        let d = grid.geodesic_distances(0);
        // Vertex 0 is (0,0); the far corner (3,3) is reachable through mixed
        // unit and diagonal edges; distance is at most 3*sqrt(2) and at least
        // the Euclidean distance.
        let far = (3 * 4 + 3) as usize;
        assert!(d[far] >= 18.0_f64.sqrt() - 1e-12);
        assert!(d[far] <= 3.0 * 2.0_f64.sqrt() + 1e-12);
        assert_eq!(d[0], 0.0);
    }

    #[test]
    fn submesh_preserves_coordinates_and_maps_back() {
        let grid = square_grid(2);
        let keep: Vec<usize> = (0..grid.face_count()).step_by(2).collect();
        let (sub, map) = grid.submesh(&keep);
        assert_eq!(sub.face_count(), keep.len());
        for (new_idx, &old_idx) in map.iter().enumerate() {
            assert_eq!(sub.vertices[new_idx], grid.vertices[old_idx as usize]);
        }
    }

    #[test]
    fn boundary_of_grid_is_outer_ring() {
        let grid = square_grid(2);
        let boundary = grid.boundary_edges();
        // 2x2 grid: outer ring has 8 boundary edges.
        assert_eq!(boundary.len(), 8);
        let closed = unit_icosphere(1);
        assert!(closed.boundary_edges().is_empty());
    }
}
