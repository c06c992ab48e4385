//! Loop subdivision for triangle meshes.
//!
//! Standard masks: edge points at `3/8 (a+b) + 1/8 (c+d)` for interior
//! edges, `1/2 (a+b)` on boundaries; even vertices use beta = 3/16 at
//! valence 3 and 3/(8n) otherwise, with the 3/4-1/8-1/8 boundary rule.
//! Counts follow V' = V + E and F' = 4F exactly on edge-manifold input.

use super::HierarchyError;
use crate::mesh::TriMesh;
use nalgebra::Point3;
use std::collections::BTreeMap;

pub fn loop_subdivide(mesh: &TriMesh, iterations: usize) -> Result<TriMesh, HierarchyError> {
    let mut current = mesh.clone();
    for _ in 0..iterations {
        current = subdivide_once(&current)?;
    }
    Ok(current)
}

fn subdivide_once(mesh: &TriMesh) -> Result<TriMesh, HierarchyError> {
    // Edge -> (wing vertices, incident face count).
    let mut edge_info: BTreeMap<(u32, u32), (Vec<u32>, u32)> = BTreeMap::new();
    for f in &mesh.faces {
        for (a, b, opposite) in [
            (f[0], f[1], f[2]),
            (f[1], f[2], f[0]),
            (f[2], f[0], f[1]),
        ] {
            let key = (a.min(b), a.max(b));
            let entry = edge_info.entry(key).or_insert((Vec::new(), 0));
            entry.0.push(opposite);
            entry.1 += 1;
        }
    }
    for ((a, b), (_, count)) in &edge_info {
        if *count > 2 {
            return Err(HierarchyError::NonManifoldEdge { a: *a, b: *b });
        }
    }

    let mut vertices = Vec::with_capacity(mesh.vertex_count() + edge_info.len());

    // Even (original) vertices.
    let adjacency = mesh.vertex_adjacency();
    let mut boundary_neighbors: Vec<Vec<u32>> = vec![Vec::new(); mesh.vertex_count()];
    for (&(a, b), &(_, count)) in &edge_info {
        if count == 1 {
            boundary_neighbors[a as usize].push(b);
            boundary_neighbors[b as usize].push(a);
        }
    }
    for (i, v) in mesh.vertices.iter().enumerate() {
        let boundary = &boundary_neighbors[i];
        let updated = if boundary.is_empty() {
            let ring = &adjacency[i];
            let n = ring.len();
            if n == 0 {
                *v // isolated vertex: untouched
            } else {
                let beta = if n == 3 { 3.0 / 16.0 } else { 3.0 / (8.0 * n as f64) };
                let mut sum = v.coords * (1.0 - n as f64 * beta);
                for &w in ring {
                    sum += mesh.vertices[w as usize].coords * beta;
                }
                Point3::from(sum)
            }
        } else if boundary.len() == 2 {
            Point3::from(
                v.coords * 0.75
                    + (mesh.vertices[boundary[0] as usize].coords
                        + mesh.vertices[boundary[1] as usize].coords)
                        * 0.125,
            )
        } else {
            // Boundary corner touching more than two boundary edges: keep.
            *v
        };
        vertices.push(updated);
    }

    // Odd (edge) vertices; BTreeMap order keeps ids deterministic.
    let mut edge_vertex: BTreeMap<(u32, u32), u32> = BTreeMap::new();
    for (&(a, b), (wings, count)) in &edge_info {
        let pa = mesh.vertices[a as usize].coords;
        let pb = mesh.vertices[b as usize].coords;
        let position = if *count == 2 {
            let pc = mesh.vertices[wings[0] as usize].coords;
            let pd = mesh.vertices[wings[1] as usize].coords;
            Point3::from((pa + pb) * 0.375 + (pc + pd) * 0.125)
        } else {
            Point3::from((pa + pb) * 0.5)
        };
        edge_vertex.insert((a, b), vertices.len() as u32);
        vertices.push(position);
    }

    let mut faces = Vec::with_capacity(mesh.face_count() * 4);
    for f in &mesh.faces {
        let m = |a: u32, b: u32| edge_vertex[&(a.min(b), a.max(b))];
        let (mab, mbc, mca) = (m(f[0], f[1]), m(f[1], f[2]), m(f[2], f[0]));
        faces.push([f[0], mab, mca]);
        faces.push([f[1], mbc, mab]);
        faces.push([f[2], mca, mbc]);
        faces.push([mab, mbc, mca]);
    }

    Ok(TriMesh {
        vertices,
        faces,
        labels: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::unit_icosphere;

    #[test]
    fn icosahedron_counts_follow_the_rules() {
        let ico = unit_icosphere(0); // V=12, E=30, F=20
        let once = loop_subdivide(&ico, 1).unwrap();
        assert_eq!(once.vertex_count(), 42); // V + E
        assert_eq!(once.face_count(), 80); // 4F
        let twice = loop_subdivide(&ico, 2).unwrap();
        assert_eq!(twice.face_count(), 320); // 4^2 * 20
        assert_eq!(twice.vertex_count(), 42 + once.edges().len());
    }

    #[test]
    fn surface_becomes_rounder() {
        // Radial spread over dense per-face samples, normalized by the mean
        // radius; Loop smoothing contracts the mesh toward its (rounder)
        // limit surface, so the spread shrinks each iteration.
        fn radial_spread(mesh: &TriMesh) -> f64 {
            let mut norms = Vec::new();
            for f in 0..mesh.face_count() {
                let [a, b, c] = mesh.face_points(f);
                for p in [
                    a.coords,
                    b.coords,
                    c.coords,
                    (a.coords + b.coords) / 2.0,
                    (b.coords + c.coords) / 2.0,
                    (c.coords + a.coords) / 2.0,
                    (a.coords + b.coords + c.coords) / 3.0,
                ] {
                    norms.push(p.norm());
                }
            }
            let mean = norms.iter().sum::<f64>() / norms.len() as f64;
            let max = norms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = norms.iter().copied().fold(f64::INFINITY, f64::min);
            (max - min) / mean
        }
        let mut mesh = unit_icosphere(0);
        let mut previous = radial_spread(&mesh);
        for _ in 0..2 {
            mesh = loop_subdivide(&mesh, 1).unwrap();
            let now = radial_spread(&mesh);
            assert!(now < previous, "{now} !< {previous}");
            previous = now;
        }
    }

    #[test]
    fn boundary_mesh_subdivides_with_boundary_rules() {
        // A single triangle: all edges are boundary.
        let tri = TriMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let out = loop_subdivide(&tri, 1).unwrap();
        assert_eq!(out.vertex_count(), 6);
        assert_eq!(out.face_count(), 4);
        // Edge midpoints of boundary edges stay at the exact midpoints.
        assert!(out
            .vertices
            .iter()
            .any(|v| (v - Point3::new(0.5, 0.0, 0.0)).norm() < 1e-12));
    }

    #[test]
    fn non_manifold_edge_is_rejected() {
        // Three faces sharing one edge.
        let mesh = TriMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
                Point3::new(0.0, -1.0, 0.0),
                Point3::new(0.0, 0.0, 1.0),
            ],
            vec![[0, 1, 2], [0, 1, 3], [0, 1, 4]],
        )
        .unwrap();
        assert!(matches!(
            loop_subdivide(&mesh, 1),
            Err(HierarchyError::NonManifoldEdge { .. })
        ));
    }
}
