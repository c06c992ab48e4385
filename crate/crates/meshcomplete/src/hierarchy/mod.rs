//! Multi-resolution mesh hierarchy with fixed sparse pooling transforms.
//!
//! Levels are built by repeated quadric simplification of the template.
//! Coarse vertex positions are then *defined* as the convex-weight
//! combination of their nearest finer-level vertices, i.e. each coarse
//! level satisfies `coarse = down * fine` exactly by construction, which is
//! what makes the transforms valid differentiable pooling operators.

mod loop_subdiv;
mod qem;
mod weights;

pub use loop_subdiv::loop_subdivide;
pub use qem::qem_simplify;
pub use weights::{apply_to_positions, build_transform, build_transform_reported, TransformReport};

/// Default neighbor count for the pooling transforms. Three neighbors (a
/// single simplex) leave a large tangential clipping error on reconstruction;
/// six lets the solver pick a containing simplex.
pub const DEFAULT_K_NN: usize = 6;

use crate::autodiff::SparseMat;
use crate::mesh::TriMesh;
use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HierarchyError {
    #[error("target face count {0} too small (minimum 4)")]
    TargetTooSmall(usize),
    #[error("simplification stalled at {reached} faces (target {target}): remaining collapses violate manifold/flip guards")]
    CannotReachTarget { reached: usize, target: usize },
    #[error("face targets must be strictly decreasing")]
    TargetsNotDecreasing,
    #[error("non-manifold edge ({a}, {b})")]
    NonManifoldEdge { a: u32, b: u32 },
    #[error("mesh has no vertices")]
    EmptyMesh,
    #[error("k_nn {k} invalid for vertex count {vertex_count}")]
    BadKnn { k: usize, vertex_count: usize },
    #[error(transparent)]
    Autodiff(#[from] crate::autodiff::AutodiffError),
    #[error("hierarchy file error: {0}")]
    Serialization(String),
}

/// One resolution level: its mesh and vertex adjacency (sorted neighbor
/// lists, no self loops).
#[derive(Debug, Clone)]
pub struct MeshLevel {
    pub mesh: TriMesh,
    pub adjacency: Vec<Vec<u32>>,
}

/// The full hierarchy, finest (template) to coarsest, plus the pooling
/// transforms between consecutive levels. Immutable and shareable across
/// threads after construction.
#[derive(Debug, Clone)]
pub struct SamplingHierarchy {
    pub levels: Vec<MeshLevel>,
    /// `downs[i]`: level i -> level i+1, shape (N_{i+1} x N_i).
    pub downs: Vec<Arc<SparseMat>>,
    /// `ups[i]`: level i+1 -> level i, shape (N_i x N_{i+1}).
    pub ups: Vec<Arc<SparseMat>>,
    pub k_nn: usize,
}

impl SamplingHierarchy {
    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    pub fn template(&self) -> &TriMesh {
        &self.levels[0].mesh
    }

    pub fn vertex_counts(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.mesh.vertex_count()).collect()
    }
}

/// Builds the hierarchy from a template with strictly decreasing face
/// targets. Coarse positions are snapped to `down * fine`, making the
/// construction identity exact.
pub fn build_hierarchy(
    template: &TriMesh,
    level_face_targets: &[usize],
    k_nn: usize,
) -> Result<SamplingHierarchy, HierarchyError> {
    if template.vertices.is_empty() {
        return Err(HierarchyError::EmptyMesh);
    }
    let mut previous_target = template.face_count();
    for &t in level_face_targets {
        if t >= previous_target {
            return Err(HierarchyError::TargetsNotDecreasing);
        }
        previous_target = t;
    }

    let mut levels = vec![MeshLevel {
        adjacency: template.vertex_adjacency(),
        mesh: template.clone(),
    }];
    let mut downs = Vec::new();
    let mut ups = Vec::new();

    for &target in level_face_targets {
        let fine = &levels.last().unwrap().mesh;
        let mut coarse = qem_simplify(fine, target)?;
        let down = build_transform(fine, &coarse, k_nn)?;
        // The defining relation: coarse positions are the transform applied
        // to fine positions.
        coarse.vertices = apply_to_positions(&down, &fine.vertices);
        let up = build_transform(&coarse, fine, k_nn)?;
        downs.push(Arc::new(down));
        ups.push(Arc::new(up));
        levels.push(MeshLevel {
            adjacency: coarse.vertex_adjacency(),
            mesh: coarse,
        });
    }

    Ok(SamplingHierarchy {
        levels,
        downs,
        ups,
        k_nn,
    })
}

const HIERARCHY_MAGIC: &[u8; 8] = b"MCHIER01";

#[derive(Serialize, Deserialize)]
struct HierarchyHeader {
    version: u32,
    k_nn: usize,
    levels: Vec<LevelInfo>,
}

#[derive(Serialize, Deserialize)]
struct LevelInfo {
    vertices: usize,
    faces: usize,
    down_nnz: Option<usize>,
    up_nnz: Option<usize>,
}

impl SamplingHierarchy {
    /// Binary container: JSON header, then per level raw vertex/face data,
    /// then the two transforms' triplet blocks.
    pub fn save(&self, path: &Path) -> Result<(), HierarchyError> {
        let header = HierarchyHeader {
            version: 1,
            k_nn: self.k_nn,
            levels: self
                .levels
                .iter()
                .enumerate()
                .map(|(i, l)| LevelInfo {
                    vertices: l.mesh.vertex_count(),
                    faces: l.mesh.face_count(),
                    down_nnz: self.downs.get(i).map(|d| d.nnz()),
                    up_nnz: self.ups.get(i).map(|u| u.nnz()),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)
            .map_err(|e| HierarchyError::Serialization(e.to_string()))?;
        let file = std::fs::File::create(path)
            .map_err(|e| HierarchyError::Serialization(format!("{}: {e}", path.display())))?;
        let mut out = std::io::BufWriter::new(file);
        let io = |e: std::io::Error| HierarchyError::Serialization(e.to_string());
        out.write_all(HIERARCHY_MAGIC).map_err(io)?;
        out.write_all(&(json.len() as u32).to_le_bytes()).map_err(io)?;
        out.write_all(&json).map_err(io)?;
        for level in &self.levels {
            for v in &level.mesh.vertices {
                for c in [v.x, v.y, v.z] {
                    out.write_all(&c.to_le_bytes()).map_err(io)?;
                }
            }
            for f in &level.mesh.faces {
                for &i in f {
                    out.write_all(&i.to_le_bytes()).map_err(io)?;
                }
            }
        }
        for mat in self.downs.iter().chain(self.ups.iter()) {
            for &(r, c, w) in mat.triplets() {
                out.write_all(&r.to_le_bytes()).map_err(io)?;
                out.write_all(&c.to_le_bytes()).map_err(io)?;
                out.write_all(&w.to_le_bytes()).map_err(io)?;
            }
        }
        out.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<SamplingHierarchy, HierarchyError> {
        let file = std::fs::File::open(path)
            .map_err(|e| HierarchyError::Serialization(format!("{}: {e}", path.display())))?;
        let mut input = std::io::BufReader::new(file);
        let io = |e: std::io::Error| HierarchyError::Serialization(e.to_string());
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(io)?;
        if &magic != HIERARCHY_MAGIC {
            return Err(HierarchyError::Serialization("bad magic".into()));
        }
        let mut len = [0u8; 4];
        input.read_exact(&mut len).map_err(io)?;
        let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
        input.read_exact(&mut json).map_err(io)?;
        let header: HierarchyHeader = serde_json::from_slice(&json)
            .map_err(|e| HierarchyError::Serialization(e.to_string()))?;
        if header.version != 1 {
            return Err(HierarchyError::Serialization(format!(
                "unsupported hierarchy version {}",
                header.version
            )));
        }

        let mut f64buf = [0u8; 8];
        let mut u32buf = [0u8; 4];
        let mut levels = Vec::new();
        for info in &header.levels {
            let mut vertices = Vec::with_capacity(info.vertices);
            for _ in 0..info.vertices {
                let mut coords = [0.0; 3];
                for c in &mut coords {
                    input.read_exact(&mut f64buf).map_err(io)?;
                    *c = f64::from_le_bytes(f64buf);
                }
                vertices.push(Point3::new(coords[0], coords[1], coords[2]));
            }
            let mut faces = Vec::with_capacity(info.faces);
            for _ in 0..info.faces {
                let mut idx = [0u32; 3];
                for i in &mut idx {
                    input.read_exact(&mut u32buf).map_err(io)?;
                    *i = u32::from_le_bytes(u32buf);
                }
                faces.push(idx);
            }
            let mesh = TriMesh {
                vertices,
                faces,
                labels: None,
            };
            levels.push(MeshLevel {
                adjacency: mesh.vertex_adjacency(),
                mesh,
            });
        }

        let mut read_mat =
            |rows: usize, cols: usize, nnz: usize| -> Result<SparseMat, HierarchyError> {
                let mut triplets = Vec::with_capacity(nnz);
                for _ in 0..nnz {
                    let mut rbuf = [0u8; 4];
                    let mut cbuf = [0u8; 4];
                    let mut wbuf = [0u8; 8];
                    input.read_exact(&mut rbuf).map_err(io)?;
                    input.read_exact(&mut cbuf).map_err(io)?;
                    input.read_exact(&mut wbuf).map_err(io)?;
                    triplets.push((
                        u32::from_le_bytes(rbuf),
                        u32::from_le_bytes(cbuf),
                        f64::from_le_bytes(wbuf),
                    ));
                }
                Ok(SparseMat::new(rows, cols, triplets)?)
            };

        let mut downs = Vec::new();
        for i in 0..header.levels.len() - 1 {
            let nnz = header.levels[i]
                .down_nnz
                .ok_or_else(|| HierarchyError::Serialization("missing down transform".into()))?;
            downs.push(Arc::new(read_mat(
                header.levels[i + 1].vertices,
                header.levels[i].vertices,
                nnz,
            )?));
        }
        let mut ups = Vec::new();
        for i in 0..header.levels.len() - 1 {
            let nnz = header.levels[i]
                .up_nnz
                .ok_or_else(|| HierarchyError::Serialization("missing up transform".into()))?;
            ups.push(Arc::new(read_mat(
                header.levels[i].vertices,
                header.levels[i + 1].vertices,
                nnz,
            )?));
        }

        Ok(SamplingHierarchy {
            levels,
            downs,
            ups,
            k_nn: header.k_nn,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::make_template;

    fn template_hierarchy() -> SamplingHierarchy {
        build_hierarchy(&make_template(), &[1280, 320, 80], DEFAULT_K_NN).unwrap()
    }

    #[test]
    fn four_levels_with_strictly_decreasing_counts() {
        let h = template_hierarchy();
        assert_eq!(h.level_count(), 4);
        let counts = h.vertex_counts();
        assert_eq!(counts[0], 2562);
        for w in counts.windows(2) {
            assert!(w[1] < w[0], "counts {counts:?}");
        }
    }

    #[test]
    fn construction_identity_is_exact() {
        let h = template_hierarchy();
        for i in 0..h.downs.len() {
            let fine = &h.levels[i].mesh.vertices;
            let coarse = &h.levels[i + 1].mesh.vertices;
            let rebuilt = apply_to_positions(&h.downs[i], fine);
            for (a, b) in rebuilt.iter().zip(coarse) {
                assert!((a - b).norm() < 1e-6, "snap identity violated");
            }
        }
    }

    #[test]
    fn all_transform_rows_are_stochastic() {
        let h = template_hierarchy();
        for mat in h.downs.iter().chain(h.ups.iter()) {
            for sum in mat.row_sums() {
                assert!((sum - 1.0).abs() < 1e-6, "row sum {sum}");
            }
            for &(_, _, w) in mat.triplets() {
                assert!(w >= -1e-9);
            }
            for count in mat.nonzeros_per_row() {
                assert!((1..=h.k_nn).contains(&count));
            }
        }
    }

    #[test]
    fn one_target_gives_two_levels() {
        let h = build_hierarchy(&make_template(), &[1280], DEFAULT_K_NN).unwrap();
        assert_eq!(h.level_count(), 2);
        assert_eq!(h.downs.len(), 1);
        assert_eq!(h.ups.len(), 1);
    }

    #[test]
    fn down_then_up_reconstructs_within_edge_fraction() {
        let h = template_hierarchy();
        let fine = &h.levels[0].mesh;
        let coarse_pos = apply_to_positions(&h.downs[0], &fine.vertices);
        let rebuilt = apply_to_positions(&h.ups[0], &coarse_pos);
        let mean_error: f64 = rebuilt
            .iter()
            .zip(&fine.vertices)
            .map(|(a, b)| (a - b).norm())
            .sum::<f64>()
            / fine.vertex_count() as f64;
        let bound = 0.05 * fine.mean_edge_length();
        assert!(
            mean_error < bound,
            "mean reconstruction error {mean_error} vs bound {bound}"
        );
    }

    #[test]
    fn hierarchy_is_deterministic() {
        let a = template_hierarchy();
        let b = template_hierarchy();
        for (x, y) in a.downs.iter().zip(&b.downs) {
            assert_eq!(x.triplets(), y.triplets());
        }
        for (x, y) in a.ups.iter().zip(&b.ups) {
            assert_eq!(x.triplets(), y.triplets());
        }
    }

    #[test]
    fn non_decreasing_targets_rejected() {
        assert!(matches!(
            build_hierarchy(&make_template(), &[1280, 1280], DEFAULT_K_NN),
            Err(HierarchyError::TargetsNotDecreasing)
        ));
    }

    #[test]
    fn save_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hierarchy.bin");
        let h = build_hierarchy(&make_template(), &[1280, 320], DEFAULT_K_NN).unwrap();
        h.save(&path).unwrap();
        let loaded = SamplingHierarchy::load(&path).unwrap();
        assert_eq!(loaded.level_count(), h.level_count());
        assert_eq!(loaded.k_nn, h.k_nn);
        for (a, b) in loaded.levels.iter().zip(&h.levels) {
            assert_eq!(a.mesh, b.mesh);
            assert_eq!(a.adjacency, b.adjacency);
        }
        for (a, b) in loaded.downs.iter().zip(&h.downs) {
            assert_eq!(a.triplets(), b.triplets());
        }
    }
}
