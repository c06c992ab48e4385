//! Construction of incomplete inputs from a complete mesh.
//!
//! Defect regions are defined by geodesic (graph) distance so they respect
//! surface connectivity: a nose defect never nibbles the chin even when the
//! two are close in space. Three kinds are supported: a contiguous region
//! removed around a seed vertex, scattered fragments (only a union of
//! geodesic disks is kept), and a bare landmark point set.

use super::SynthError;
use crate::mesh::TriMesh;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DefectKind {
    /// Remove every face whose centroid lies within `radius_mm` geodesic
    /// distance of the seed vertex.
    Region { seed_vertex: u32, radius_mm: f64 },
    /// Keep only faces inside a union of random geodesic disks covering at
    /// least `keep_fraction` of the faces.
    Fragments { rng_seed: u64, keep_fraction: f64 },
    /// Keep only the landmark vertices, as a face-free point set.
    Keypoints { landmarks: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectSpec {
    #[serde(flatten)]
    pub kind: DefectKind,
}

/// A defect plus the map from surviving vertex index to the original index.
#[derive(Debug, Clone)]
pub struct DefectResult {
    pub mesh: TriMesh,
    pub vertex_map: Vec<u32>,
}

impl DefectResult {
    /// Original vertex ids that did not survive.
    pub fn removed_vertices(&self, original: &TriMesh) -> Vec<u32> {
        let mut kept = vec![false; original.vertex_count()];
        for &v in &self.vertex_map {
            kept[v as usize] = true;
        }
        (0..original.vertex_count() as u32)
            .filter(|&v| !kept[v as usize])
            .collect()
    }
}

/// Geodesic distance proxy for a face: nearest vertex distance plus the
/// in-face hop from that vertex to the centroid.
fn face_geodesic(mesh: &TriMesh, dist: &[f64], face: usize) -> f64 {
    let centroid = mesh.face_centroid(face);
    mesh.faces[face]
        .iter()
        .map(|&v| dist[v as usize] + (mesh.vertices[v as usize] - centroid).norm())
        .fold(f64::INFINITY, f64::min)
}

pub fn make_defect(mesh: &TriMesh, spec: &DefectSpec) -> Result<DefectResult, SynthError> {
    match &spec.kind {
        DefectKind::Region {
            seed_vertex,
            radius_mm,
        } => {
            if *radius_mm <= 0.0 {
                return Err(SynthError::BadDefectSpec(format!(
                    "radius {radius_mm} must be positive"
                )));
            }
            if *seed_vertex as usize >= mesh.vertex_count() {
                return Err(SynthError::SeedOutOfRange {
                    seed: *seed_vertex,
                    vertex_count: mesh.vertex_count(),
                });
            }
            let dist = mesh.geodesic_distances(*seed_vertex);
            let keep: Vec<usize> = (0..mesh.face_count())
                .filter(|&f| face_geodesic(mesh, &dist, f) > *radius_mm)
                .collect();
            if keep.is_empty() {
                return Err(SynthError::DefectEmpty);
            }
            let (sub, vertex_map) = mesh.submesh(&keep);
            Ok(DefectResult {
                mesh: sub,
                vertex_map,
            })
        }
        DefectKind::Fragments {
            rng_seed,
            keep_fraction,
        } => {
            if !(*keep_fraction > 0.0 && *keep_fraction < 1.0) {
                return Err(SynthError::BadDefectSpec(format!(
                    "keep_fraction {keep_fraction} must be in (0, 1)"
                )));
            }
            let mut rng = crate::config::substream(*rng_seed, "fragments");
            let mut kept = vec![false; mesh.face_count()];
            let mut kept_count = 0usize;
            let target = (*keep_fraction * mesh.face_count() as f64).ceil() as usize;
            // Cap the disk count; tiny disks on a large mesh could
            // otherwise spin for a long time.
            for _ in 0..256 {
                if kept_count >= target {
                    break;
                }
                let seed = rng.random_range(0..mesh.vertex_count() as u32);
                let radius = rng.random_range(10.0..25.0);
                let dist = mesh.geodesic_distances(seed);
                for f in 0..mesh.face_count() {
                    if !kept[f] && face_geodesic(mesh, &dist, f) <= radius {
                        kept[f] = true;
                        kept_count += 1;
                    }
                }
            }
            let keep: Vec<usize> = (0..mesh.face_count()).filter(|&f| kept[f]).collect();
            if keep.is_empty() {
                return Err(SynthError::DefectEmpty);
            }
            let (sub, vertex_map) = mesh.submesh(&keep);
            Ok(DefectResult {
                mesh: sub,
                vertex_map,
            })
        }
        DefectKind::Keypoints { landmarks } => {
            for &l in landmarks {
                if l as usize >= mesh.vertex_count() {
                    return Err(SynthError::SeedOutOfRange {
                        seed: l,
                        vertex_count: mesh.vertex_count(),
                    });
                }
            }
            if landmarks.is_empty() {
                return Err(SynthError::DefectEmpty);
            }
            let vertices = landmarks
                .iter()
                .map(|&l| mesh.vertices[l as usize])
                .collect();
            Ok(DefectResult {
                mesh: TriMesh {
                    vertices,
                    faces: vec![],
                    labels: None,
                },
                vertex_map: landmarks.clone(),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{landmark_vertex_ids, make_template};

    /// Heap-free O(V^2) Dijkstra, an independent check of the defect rule.
    fn dijkstra_slow(mesh: &TriMesh, seed: u32) -> Vec<f64> {
        let n = mesh.vertex_count();
        let adj = mesh.vertex_adjacency();
        let mut dist = vec![f64::INFINITY; n];
        let mut done = vec![false; n];
        dist[seed as usize] = 0.0;
        for _ in 0..n {
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            for v in 0..n {
                if !done[v] && dist[v] < best_d {
                    best = v;
                    best_d = dist[v];
                }
            }
            if best == usize::MAX {
                break;
            }
            done[best] = true;
            for &w in &adj[best] {
                let nd = best_d + (mesh.vertices[best] - mesh.vertices[w as usize]).norm();
                if nd < dist[w as usize] {
                    dist[w as usize] = nd;
                }
            }
        }
        dist
    }

    fn nose_tip_vertex(t: &TriMesh) -> u32 {
        // The template nose tip is its maximal-z vertex.
        let mut best = 0u32;
        for (i, v) in t.vertices.iter().enumerate() {
            if v.z > t.vertices[best as usize].z {
                best = i as u32;
            }
        }
        best
    }

    #[test]
    fn tiny_radius_removes_at_most_incident_faces() {
        let t = make_template();
        let seed = nose_tip_vertex(&t);
        let spec = DefectSpec {
            kind: DefectKind::Region {
                seed_vertex: seed,
                radius_mm: 0.01,
            },
        };
        let result = make_defect(&t, &spec).unwrap();
        let incident = t.faces.iter().filter(|f| f.contains(&seed)).count();
        assert!(t.face_count() - result.mesh.face_count() <= incident);
    }

    #[test]
    fn radius_beyond_diameter_errors_empty() {
        let t = make_template();
        let spec = DefectSpec {
            kind: DefectKind::Region {
                seed_vertex: 0,
                radius_mm: 1e6,
            },
        };
        assert!(matches!(make_defect(&t, &spec), Err(SynthError::DefectEmpty)));
    }

    #[test]
    fn region_rule_matches_independent_dijkstra() {
        let t = make_template();
        let seed = nose_tip_vertex(&t);
        let radius = 30.0;
        let spec = DefectSpec {
            kind: DefectKind::Region {
                seed_vertex: seed,
                radius_mm: radius,
            },
        };
        let result = make_defect(&t, &spec).unwrap();

        let dist = dijkstra_slow(&t, seed);
        let mut removed = vec![true; t.face_count()];
        // Mark faces of the defect as kept, found by exact vertex match.
        let kept_set: std::collections::BTreeSet<[u32; 3]> = result
            .mesh
            .faces
            .iter()
            .map(|f| {
                let mut orig = [
                    result.vertex_map[f[0] as usize],
                    result.vertex_map[f[1] as usize],
                    result.vertex_map[f[2] as usize],
                ];
                orig.sort_unstable();
                orig
            })
            .collect();
        for (i, f) in t.faces.iter().enumerate() {
            let mut key = *f;
            key.sort_unstable();
            if kept_set.contains(&key) {
                removed[i] = false;
            }
        }
        for (f, &was_removed) in removed.iter().enumerate() {
            let g = face_geodesic(&t, &dist, f);
            if was_removed {
                assert!(g <= radius, "removed face {f} at geodesic {g}");
            } else {
                assert!(g > radius, "kept face {f} at geodesic {g}");
            }
        }
    }

    #[test]
    fn defect_is_a_submesh_with_exact_coordinates() {
        let t = make_template();
        let spec = DefectSpec {
            kind: DefectKind::Region {
                seed_vertex: nose_tip_vertex(&t),
                radius_mm: 25.0,
            },
        };
        let result = make_defect(&t, &spec).unwrap();
        for (new_idx, &old_idx) in result.vertex_map.iter().enumerate() {
            assert_eq!(
                result.mesh.vertices[new_idx],
                t.vertices[old_idx as usize]
            );
        }
    }

    #[test]
    fn fragments_keep_requested_fraction() {
        let t = make_template();
        let spec = DefectSpec {
            kind: DefectKind::Fragments {
                rng_seed: 5,
                keep_fraction: 0.3,
            },
        };
        let result = make_defect(&t, &spec).unwrap();
        let fraction = result.mesh.face_count() as f64 / t.face_count() as f64;
        assert!(fraction >= 0.3, "kept {fraction}");
        assert!(fraction < 0.9, "kept almost everything: {fraction}");
        // Deterministic under the same seed.
        let again = make_defect(&t, &spec).unwrap();
        assert_eq!(again.mesh, result.mesh);
    }

    #[test]
    fn keypoints_are_a_face_free_point_set() {
        let t = make_template();
        let landmarks = landmark_vertex_ids();
        let spec = DefectSpec {
            kind: DefectKind::Keypoints {
                landmarks: landmarks.clone(),
            },
        };
        let result = make_defect(&t, &spec).unwrap();
        assert_eq!(result.mesh.vertex_count(), 32);
        assert_eq!(result.mesh.face_count(), 0);
        assert_eq!(result.vertex_map, landmarks);
    }
}
