//! Geometric post-processing of a fitted mesh against its partial input:
//! identify which fitted vertices are explained by the input, project them
//! onto the input surface along their normals, blend the displacement into
//! the repaired region's boundary band, and clean up projection outliers.
//!
//! Connectivity is never edited; repaired-interior vertices are never
//! displaced; the matched-region distance to the input is guarded to be
//! monotone across stages.

use crate::mesh::{Bvh, KdTree, MeshError, TriMesh};
use nalgebra::{Point3, Vector3};
use serde::Serialize;
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PostprocessError {
    #[error("fitted mesh and labels disagree: {labels} labels for {vertices} vertices")]
    LabelMismatch { labels: usize, vertices: usize },
    #[error("no matched vertices: the fit does not touch the input within threshold")]
    NoMatchedVertices,
    #[error("input mesh has no vertices")]
    EmptyInput,
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Per-vertex region classification of the fitted mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VertexLabel {
    /// Lies on the input surface (within threshold, closest point interior).
    Matched,
    /// Fills a defect region.
    Repaired,
    /// Repaired vertices within the boundary band next to matched ones.
    BoundaryExt,
}

#[derive(Debug, Clone)]
pub struct RegionLabels {
    pub labels: Vec<VertexLabel>,
    /// Band index for `BoundaryExt` vertices: 0 right next to matched,
    /// `boundary_rings - 1` deepest. `usize::MAX` elsewhere.
    pub ring: Vec<usize>,
}

impl RegionLabels {
    pub fn count(&self, label: VertexLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Integer tags for serialization: matched 0, repaired 1, boundary 2.
    pub fn tags(&self) -> Vec<i32> {
        self.labels
            .iter()
            .map(|l| match l {
                VertexLabel::Matched => 0,
                VertexLabel::Repaired => 1,
                VertexLabel::BoundaryExt => 2,
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct PostprocessConfig {
    /// Identification threshold (mm).
    pub threshold: f64,
    /// Boundary band width in edge rings.
    pub boundary_rings: usize,
    /// Neighbors used when blending displacements into the band.
    pub knn: usize,
    /// Maximum projection distance (mm).
    pub max_projection: f64,
    /// Refinement iterations cap.
    pub refine_iterations: usize,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        PostprocessConfig {
            threshold: 1.0,
            boundary_rings: 4,
            knn: 8,
            max_projection: 5.0,
            refine_iterations: 5,
        }
    }
}

/// Distance and projection queries against the partial input, which may be
/// a surface or a bare point set.
pub struct DefectProbe<'a> {
    defect: &'a TriMesh,
    bvh: Option<Bvh>,
    tree: KdTree,
    boundary_vertex: Vec<bool>,
    boundary_edges: BTreeSet<(u32, u32)>,
}

impl<'a> DefectProbe<'a> {
    pub fn new(defect: &'a TriMesh) -> Result<DefectProbe<'a>, PostprocessError> {
        if defect.vertices.is_empty() {
            return Err(PostprocessError::EmptyInput);
        }
        let bvh = if defect.faces.is_empty() {
            None
        } else {
            Some(Bvh::build(defect)?)
        };
        let boundary_edges: BTreeSet<(u32, u32)> = defect.boundary_edges().into_iter().collect();
        let mut boundary_vertex = vec![false; defect.vertex_count()];
        for &(a, b) in &boundary_edges {
            boundary_vertex[a as usize] = true;
            boundary_vertex[b as usize] = true;
        }
        Ok(DefectProbe {
            defect,
            bvh,
            tree: KdTree::build(&defect.vertices),
            boundary_vertex,
            boundary_edges,
        })
    }

    /// Distance to the input (surface distance when faces exist, nearest
    /// point otherwise).
    pub fn distance(&self, p: Point3<f64>) -> f64 {
        match &self.bvh {
            Some(bvh) => bvh.closest(p).distance,
            None => {
                let i = self.tree.nearest(p);
                (self.defect.vertices[i as usize] - p).norm()
            }
        }
    }

    /// Distance plus whether the closest point lies in the interior (not on
    /// an open boundary edge or boundary vertex). Point sets are always
    /// "interior".
    fn interior_distance(&self, p: Point3<f64>) -> (f64, bool) {
        match &self.bvh {
            Some(bvh) => {
                let hit = bvh.closest(p);
                let face = self.defect.faces[hit.face_index];
                const EPS: f64 = 1e-7;
                let zeros: Vec<usize> = (0..3).filter(|&k| hit.barycentric[k] <= EPS).collect();
                let interior = match zeros.len() {
                    0 => true,
                    1 => {
                        // Closest point on the edge opposite the zero corner.
                        let (a, b) = match zeros[0] {
                            0 => (face[1], face[2]),
                            1 => (face[0], face[2]),
                            _ => (face[0], face[1]),
                        };
                        !self.boundary_edges.contains(&(a.min(b), a.max(b)))
                    }
                    _ => {
                        // Closest point at a vertex: the corner with the
                        // largest coordinate.
                        let k = (0..3)
                            .max_by(|&a, &b| {
                                hit.barycentric[a].total_cmp(&hit.barycentric[b])
                            })
                            .unwrap();
                        !self.boundary_vertex[face[k] as usize]
                    }
                };
                (hit.distance, interior)
            }
            None => {
                let i = self.tree.nearest(p);
                ((self.defect.vertices[i as usize] - p).norm(), true)
            }
        }
    }

    /// First intersection of the bidirectional normal ray within `max_dist`,
    /// or the nearest point for point-set inputs.
    fn project(&self, p: Point3<f64>, normal: Vector3<f64>, max_dist: f64) -> Option<Point3<f64>> {
        match &self.bvh {
            Some(bvh) => {
                let forward = bvh.raycast(p, normal);
                let backward = bvh.raycast(p, -normal);
                let best = match (forward, backward) {
                    (Some(f), Some(b)) => {
                        if f.t <= b.t {
                            Some(f)
                        } else {
                            Some(b)
                        }
                    }
                    (Some(f), None) => Some(f),
                    (None, Some(b)) => Some(b),
                    (None, None) => None,
                };
                best.filter(|hit| hit.t <= max_dist).map(|hit| hit.point)
            }
            None => {
                let i = self.tree.nearest(p);
                let q = self.defect.vertices[i as usize];
                ((q - p).norm() <= max_dist).then_some(q)
            }
        }
    }
}

/// Mean distance of the matched region to the input.
pub fn matched_md(
    mesh: &TriMesh,
    labels: &RegionLabels,
    probe: &DefectProbe,
) -> Result<f64, PostprocessError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (v, label) in mesh.vertices.iter().zip(&labels.labels) {
        if *label == VertexLabel::Matched {
            total += probe.distance(*v);
            count += 1;
        }
    }
    if count == 0 {
        return Err(PostprocessError::NoMatchedVertices);
    }
    Ok(total / count as f64)
}

/// Labels fitted vertices as matched / repaired / boundary band.
pub fn identify_repaired(
    fitted: &TriMesh,
    probe: &DefectProbe,
    cfg: &PostprocessConfig,
) -> RegionLabels {
    let n = fitted.vertex_count();
    let mut labels = vec![VertexLabel::Repaired; n];
    for (i, v) in fitted.vertices.iter().enumerate() {
        let (distance, interior) = probe.interior_distance(*v);
        if distance <= cfg.threshold && interior {
            labels[i] = VertexLabel::Matched;
        }
    }

    // Boundary band: repaired vertices within `boundary_rings` BFS rings of
    // any matched vertex (ring 0 = adjacent to matched).
    let adjacency = fitted.vertex_adjacency();
    let mut ring = vec![usize::MAX; n];
    let mut frontier: Vec<u32> = (0..n as u32)
        .filter(|&i| labels[i as usize] == VertexLabel::Matched)
        .collect();
    for depth in 0..cfg.boundary_rings {
        let mut next = Vec::new();
        for &v in &frontier {
            for &w in &adjacency[v as usize] {
                if labels[w as usize] == VertexLabel::Repaired && ring[w as usize] == usize::MAX {
                    ring[w as usize] = depth;
                    labels[w as usize] = VertexLabel::BoundaryExt;
                    next.push(w);
                }
            }
        }
        frontier = next;
        if frontier.is_empty() {
            break;
        }
    }
    RegionLabels { labels, ring }
}

/// Result of the projection stage.
pub struct ProjectionOutcome {
    pub mesh: TriMesh,
    /// Displacement applied to each vertex (zero when unmoved).
    pub displacements: Vec<Vector3<f64>>,
    /// Matched vertices whose normal ray missed within the cap.
    pub unprojected: Vec<u32>,
}

/// Moves matched vertices to the nearest normal-ray intersection with the
/// input (both directions, capped). Other vertices are untouched here.
pub fn project_matched(
    fitted: &TriMesh,
    probe: &DefectProbe,
    labels: &RegionLabels,
    cfg: &PostprocessConfig,
) -> Result<ProjectionOutcome, PostprocessError> {
    if labels.labels.len() != fitted.vertex_count() {
        return Err(PostprocessError::LabelMismatch {
            labels: labels.labels.len(),
            vertices: fitted.vertex_count(),
        });
    }
    let normals = fitted.vertex_normals();
    let mut mesh = fitted.clone();
    let mut displacements = vec![Vector3::zeros(); fitted.vertex_count()];
    let mut unprojected = Vec::new();
    for (i, label) in labels.labels.iter().enumerate() {
        if *label != VertexLabel::Matched {
            continue;
        }
        if !normals.valid[i] {
            unprojected.push(i as u32);
            continue;
        }
        match probe.project(fitted.vertices[i], normals.normals[i], cfg.max_projection) {
            Some(target) => {
                displacements[i] = target - fitted.vertices[i];
                mesh.vertices[i] = target;
            }
            None => unprojected.push(i as u32),
        }
    }
    Ok(ProjectionOutcome {
        mesh,
        displacements,
        unprojected,
    })
}

/// Blends matched displacements into the boundary band with inverse-distance
/// weights and a linear ring falloff. Deep repaired vertices are unchanged.
pub fn blend_boundary(
    projected: &TriMesh,
    pre_projection: &TriMesh,
    labels: &RegionLabels,
    displacements: &[Vector3<f64>],
    cfg: &PostprocessConfig,
) -> Result<TriMesh, PostprocessError> {
    let matched: Vec<u32> = (0..projected.vertex_count() as u32)
        .filter(|&i| labels.labels[i as usize] == VertexLabel::Matched)
        .collect();
    if matched.is_empty() {
        return Err(PostprocessError::NoMatchedVertices);
    }
    let matched_points: Vec<Point3<f64>> = matched
        .iter()
        .map(|&i| pre_projection.vertices[i as usize])
        .collect();
    let tree = KdTree::build(&matched_points);
    let k = cfg.knn.min(matched_points.len());

    let mut mesh = projected.clone();
    for i in 0..mesh.vertex_count() {
        if labels.labels[i] != VertexLabel::BoundaryExt {
            continue;
        }
        let p = pre_projection.vertices[i];
        let neighbors = tree.knn(p, k);
        let mut weight_sum = 0.0;
        let mut blended = Vector3::zeros();
        for &ni in &neighbors {
            let source = matched[ni as usize];
            let d = (matched_points[ni as usize] - p).norm();
            let w = 1.0 / (d + 1e-6);
            weight_sum += w;
            blended += displacements[source as usize] * w;
        }
        blended /= weight_sum;
        let falloff = 1.0 - labels.ring[i] as f64 / cfg.boundary_rings as f64;
        mesh.vertices[i] += blended * falloff;
    }
    Ok(mesh)
}

/// Detects projection outliers (displacement beyond median + 3 MAD of the
/// matched displacements, or a flipped incident face) and relaxes them with
/// uniform Laplacian averaging over non-outlier neighbors. Repaired-interior
/// vertices are never touched.
pub fn refine_outliers(
    mesh: &TriMesh,
    pre_projection: &TriMesh,
    labels: &RegionLabels,
    cfg: &PostprocessConfig,
) -> TriMesh {
    let mut current = mesh.clone();
    let adjacency = mesh.vertex_adjacency();
    let movable = |i: usize| labels.labels[i] != VertexLabel::Repaired;

    for _ in 0..cfg.refine_iterations {
        // Robust displacement statistics over matched vertices.
        let mut matched_disp: Vec<f64> = (0..current.vertex_count())
            .filter(|&i| labels.labels[i] == VertexLabel::Matched)
            .map(|i| (current.vertices[i] - pre_projection.vertices[i]).norm())
            .collect();
        if matched_disp.is_empty() {
            break;
        }
        matched_disp.sort_by(|a, b| a.total_cmp(b));
        let median = matched_disp[matched_disp.len() / 2];
        let mut deviations: Vec<f64> = matched_disp.iter().map(|d| (d - median).abs()).collect();
        deviations.sort_by(|a, b| a.total_cmp(b));
        let mad = deviations[deviations.len() / 2];
        let cutoff = median + 3.0 * mad;

        // Face flips vs the pre-projection geometry.
        let mut flipped = vec![false; current.vertex_count()];
        for f in &current.faces {
            let now = {
                let [a, b, c] = [
                    current.vertices[f[0] as usize],
                    current.vertices[f[1] as usize],
                    current.vertices[f[2] as usize],
                ];
                (b - a).cross(&(c - a))
            };
            let before = {
                let [a, b, c] = [
                    pre_projection.vertices[f[0] as usize],
                    pre_projection.vertices[f[1] as usize],
                    pre_projection.vertices[f[2] as usize],
                ];
                (b - a).cross(&(c - a))
            };
            if now.dot(&before) < 0.0 {
                for &v in f {
                    flipped[v as usize] = true;
                }
            }
        }

        let outliers: Vec<usize> = (0..current.vertex_count())
            .filter(|&i| {
                movable(i) && {
                    let d = (current.vertices[i] - pre_projection.vertices[i]).norm();
                    d > cutoff || flipped[i]
                }
            })
            .collect();
        if outliers.is_empty() {
            break;
        }
        let outlier_set: BTreeSet<usize> = outliers.iter().copied().collect();
        let mut updated = current.vertices.clone();
        for &i in &outliers {
            let mut sum = Vector3::zeros();
            let mut count = 0usize;
            for &w in &adjacency[i] {
                if !outlier_set.contains(&(w as usize)) {
                    sum += current.vertices[w as usize].coords;
                    count += 1;
                }
            }
            if count > 0 {
                updated[i] = Point3::from(sum / count as f64);
            }
        }
        current.vertices = updated;
    }
    current
}

#[derive(Debug, Clone, Serialize)]
pub struct StageReport {
    pub stage: &'static str,
    pub matched_md: f64,
}

pub struct PostprocessOutput {
    pub mesh: TriMesh,
    pub labels: RegionLabels,
    pub stages: Vec<StageReport>,
    /// True when the refinement stage was rolled back by the guard.
    pub refine_reverted: bool,
}

/// The full pipeline: identify, project, blend, refine, with a guard that
/// rejects a refinement raising the matched-region distance.
pub fn postprocess_pipeline(
    fitted: &TriMesh,
    defect: &TriMesh,
    cfg: &PostprocessConfig,
) -> Result<PostprocessOutput, PostprocessError> {
    let probe = DefectProbe::new(defect)?;
    let labels = identify_repaired(fitted, &probe, cfg);
    if labels.count(VertexLabel::Matched) == 0 {
        return Err(PostprocessError::NoMatchedVertices);
    }
    let mut stages = Vec::new();
    stages.push(StageReport {
        stage: "fit",
        matched_md: matched_md(fitted, &labels, &probe)?,
    });

    let projection = project_matched(fitted, &probe, &labels, cfg)?;
    stages.push(StageReport {
        stage: "projection",
        matched_md: matched_md(&projection.mesh, &labels, &probe)?,
    });

    let blended = blend_boundary(&projection.mesh, fitted, &labels, &projection.displacements, cfg)?;
    stages.push(StageReport {
        stage: "blend",
        matched_md: matched_md(&blended, &labels, &probe)?,
    });

    let refined = refine_outliers(&blended, fitted, &labels, cfg);
    let refined_md = matched_md(&refined, &labels, &probe)?;
    let blend_md = stages.last().unwrap().matched_md;
    let (final_mesh, refine_reverted, final_md) = if refined_md <= blend_md + 1e-12 {
        (refined, false, refined_md)
    } else {
        (blended, true, blend_md)
    };
    stages.push(StageReport {
        stage: "refine",
        matched_md: final_md,
    });

    let mut mesh = final_mesh;
    mesh.labels = Some(labels.tags());
    Ok(PostprocessOutput {
        mesh,
        labels,
        stages,
        refine_reverted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{make_defect, make_template, DefectKind, DefectSpec};

    fn nose_defect(radius: f64) -> (TriMesh, crate::synth::DefectResult) {
        let template = make_template();
        let defect = make_defect(
            &template,
            &DefectSpec {
                kind: DefectKind::Region {
                    seed_vertex: 1305, // nose tip landmark
                    radius_mm: radius,
                },
            },
        )
        .unwrap();
        (template, defect)
    }

    /// A slightly-off fit: the ground truth inflated by a small factor.
    fn imperfect_fit(template: &TriMesh) -> TriMesh {
        let mut fit = template.clone();
        let centroid = template.centroid();
        for v in &mut fit.vertices {
            *v = centroid + (*v - centroid) * 1.004;
        }
        fit
    }

    #[test]
    fn perfect_fit_on_full_input_is_all_matched_and_identity() {
        let template = make_template();
        let cfg = PostprocessConfig::default();
        let out = postprocess_pipeline(&template, &template, &cfg).unwrap();
        assert_eq!(out.labels.count(VertexLabel::Matched), template.vertex_count());
        let max_move = out
            .mesh
            .vertices
            .iter()
            .zip(&template.vertices)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0f64, f64::max);
        assert!(max_move < cfg.threshold, "moved {max_move}");
        assert_eq!(out.mesh.faces, template.faces);
    }

    #[test]
    fn repaired_set_covers_the_removed_region() {
        let (template, defect) = nose_defect(30.0);
        let probe = DefectProbe::new(&defect.mesh).unwrap();
        let cfg = PostprocessConfig::default();
        // Fit = ground truth: matched/repaired split must align with the
        // removed region from the defect generator's own map.
        let labels = identify_repaired(&template, &probe, &cfg);
        let removed = defect.removed_vertices(&template);
        let mut misses = 0;
        for &v in &removed {
            if labels.labels[v as usize] == VertexLabel::Matched {
                misses += 1;
            }
        }
        assert_eq!(misses, 0, "{misses} removed vertices labeled matched");
    }

    #[test]
    fn threshold_zero_matches_only_exact_surface_points() {
        let (template, defect) = nose_defect(25.0);
        let probe = DefectProbe::new(&defect.mesh).unwrap();
        let cfg = PostprocessConfig {
            threshold: 0.0,
            ..PostprocessConfig::default()
        };
        // Ground truth: surviving vertices lie exactly on the defect.
        let labels = identify_repaired(&template, &probe, &cfg);
        for (i, &orig) in defect.vertex_map.iter().enumerate() {
            let _ = i;
            let label = labels.labels[orig as usize];
            // Boundary vertices of the open defect fail the interior test;
            // everything else on the surface matches exactly.
            assert_ne!(label, VertexLabel::Repaired,
                "surviving vertex {orig} should be matched or band");
        }
        // An inflated fit has no exact-surface points.
        let inflated = imperfect_fit(&template);
        let labels = identify_repaired(&inflated, &probe, &cfg);
        assert_eq!(labels.count(VertexLabel::Matched), 0);
    }

    #[test]
    fn projection_moves_matched_onto_the_surface() {
        let (template, defect) = nose_defect(30.0);
        let fit = imperfect_fit(&template);
        let probe = DefectProbe::new(&defect.mesh).unwrap();
        let cfg = PostprocessConfig::default();
        let labels = identify_repaired(&fit, &probe, &cfg);
        let before = matched_md(&fit, &labels, &probe).unwrap();
        let projection = project_matched(&fit, &probe, &labels, &cfg).unwrap();
        let after = matched_md(&projection.mesh, &labels, &probe).unwrap();
        assert!(after < before, "{after} !< {before}");
        assert!(after < 1e-6, "matched vertices should land on the surface");
    }

    #[test]
    fn zero_displacements_leave_the_band_unchanged() {
        let (template, defect) = nose_defect(30.0);
        let probe = DefectProbe::new(&defect.mesh).unwrap();
        let cfg = PostprocessConfig::default();
        let labels = identify_repaired(&template, &probe, &cfg);
        let displacements = vec![Vector3::zeros(); template.vertex_count()];
        let blended =
            blend_boundary(&template, &template, &labels, &displacements, &cfg).unwrap();
        assert_eq!(blended, template);
    }

    #[test]
    fn uniform_displacement_blends_with_ring_falloff() {
        let (template, defect) = nose_defect(30.0);
        let probe = DefectProbe::new(&defect.mesh).unwrap();
        let cfg = PostprocessConfig::default();
        let labels = identify_repaired(&template, &probe, &cfg);
        let delta = Vector3::new(0.5, 0.0, 0.0);
        let mut moved = template.clone();
        let mut displacements = vec![Vector3::zeros(); template.vertex_count()];
        for i in 0..template.vertex_count() {
            if labels.labels[i] == VertexLabel::Matched {
                moved.vertices[i] += delta;
                displacements[i] = delta;
            }
        }
        let blended = blend_boundary(&moved, &template, &labels, &displacements, &cfg).unwrap();
        for i in 0..template.vertex_count() {
            match labels.labels[i] {
                VertexLabel::BoundaryExt => {
                    let d = blended.vertices[i] - template.vertices[i];
                    let expected = 1.0 - labels.ring[i] as f64 / cfg.boundary_rings as f64;
                    assert!(
                        (d.norm() - expected * 0.5).abs() < 1e-9,
                        "ring {} moved {}",
                        labels.ring[i],
                        d.norm()
                    );
                }
                VertexLabel::Repaired => {
                    assert_eq!(blended.vertices[i], template.vertices[i]);
                }
                VertexLabel::Matched => {}
            }
        }
    }

    #[test]
    fn refinement_pulls_back_a_spike() {
        let (template, defect) = nose_defect(30.0);
        let probe = DefectProbe::new(&defect.mesh).unwrap();
        let cfg = PostprocessConfig::default();
        let labels = identify_repaired(&template, &probe, &cfg);
        // Spike one matched vertex far off the surface.
        let spike = (0..template.vertex_count())
            .find(|&i| labels.labels[i] == VertexLabel::Matched)
            .unwrap();
        let normals = template.vertex_normals();
        let mut spiked = template.clone();
        spiked.vertices[spike] += normals.normals[spike] * 4.0;
        let refined = refine_outliers(&spiked, &template, &labels, &cfg);
        let residual = (refined.vertices[spike] - template.vertices[spike]).norm();
        assert!(residual < 1.0, "spike residual {residual}");
        // Repaired-interior vertices are untouched.
        for i in 0..template.vertex_count() {
            if labels.labels[i] == VertexLabel::Repaired {
                assert_eq!(refined.vertices[i], spiked.vertices[i]);
            }
        }
    }

    #[test]
    fn pipeline_reports_monotone_matched_md() {
        let (template, defect) = nose_defect(30.0);
        let fit = imperfect_fit(&template);
        let cfg = PostprocessConfig::default();
        let out = postprocess_pipeline(&fit, &defect.mesh, &cfg).unwrap();
        assert_eq!(out.stages.len(), 4);
        for pair in out.stages.windows(2) {
            assert!(
                pair[1].matched_md <= pair[0].matched_md + 1e-9,
                "{} -> {}: {} > {}",
                pair[0].stage,
                pair[1].stage,
                pair[1].matched_md,
                pair[0].matched_md
            );
        }
        assert_eq!(out.mesh.faces, fit.faces);
        assert_eq!(out.mesh.vertex_count(), fit.vertex_count());
        assert!(out.mesh.labels.is_some());
    }

    #[test]
    fn pipeline_is_deterministic() {
        let (template, defect) = nose_defect(25.0);
        let fit = imperfect_fit(&template);
        let cfg = PostprocessConfig::default();
        let a = postprocess_pipeline(&fit, &defect.mesh, &cfg).unwrap();
        let b = postprocess_pipeline(&fit, &defect.mesh, &cfg).unwrap();
        assert_eq!(a.mesh, b.mesh);
    }

    #[test]
    fn keypoint_input_uses_point_distances() {
        let template = make_template();
        let landmarks = crate::synth::landmark_vertex_ids();
        let defect = make_defect(
            &template,
            &DefectSpec {
                kind: DefectKind::Keypoints {
                    landmarks: landmarks.clone(),
                },
            },
        )
        .unwrap();
        let cfg = PostprocessConfig::default();
        let out = postprocess_pipeline(&template, &defect.mesh, &cfg).unwrap();
        // Only vertices near landmarks can match.
        assert!(out.labels.count(VertexLabel::Matched) >= landmarks.len() / 2);
        assert!(out.labels.count(VertexLabel::Matched) < template.vertex_count() / 4);
        // Matched vertices end on the landmark points.
        let final_md = out.stages.last().unwrap().matched_md;
        assert!(final_md < 1e-6, "matched md {final_md}");
    }
}
