//! Rigid initialization: centroid alignment plus principal-axes rotation.
//!
//! Covariance eigenvectors give each shape's principal frame; the four
//! proper axis-sign combinations are disambiguated by one fit-loss
//! evaluation each. Degenerate covariance (fewer than 3 well-separated
//! directions) falls back to translation only.

use super::loss::fit_loss;
use crate::mesh::{RigidTransform, TriMesh};
use nalgebra::{Matrix3, Point3, Vector3};

fn centroid(points: &[Point3<f64>]) -> Point3<f64> {
    let mut sum = Vector3::zeros();
    for p in points {
        sum += p.coords;
    }
    Point3::from(sum / points.len() as f64)
}

/// Principal axes as columns, eigenvalue-descending, right-handed.
/// `None` when the covariance is rank-deficient.
fn principal_frame(points: &[Point3<f64>]) -> Option<Matrix3<f64>> {
    let c = centroid(points);
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    cov /= points.len() as f64;
    let eig = cov.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let max = eig.eigenvalues[order[0]];
    if !(max > 0.0) || eig.eigenvalues[order[2]] < 1e-8 * max {
        return None;
    }
    let columns: Vec<Vector3<f64>> = order
        .iter()
        .map(|&i| Vector3::from(eig.eigenvectors.column(i).into_owned()))
        .collect();
    let mut frame = Matrix3::from_columns(&columns);
    if frame.determinant() < 0.0 {
        let flipped = -frame.column(2);
        frame.set_column(2, &flipped);
    }
    Some(frame)
}

/// Initial transform mapping `reference` toward `defect`.
pub fn init_transform(defect: &TriMesh, reference: &TriMesh) -> RigidTransform {
    let c_defect = centroid(&defect.vertices);
    let c_reference = centroid(&reference.vertices);
    let translation_only =
        RigidTransform::new(Vector3::zeros(), c_defect - c_reference);

    let (frame_d, frame_r) = match (
        principal_frame(&defect.vertices),
        principal_frame(&reference.vertices),
    ) {
        (Some(d), Some(r)) => (d, r),
        _ => return translation_only,
    };

    // Proper rotations only: flip axis signs in pairs.
    let sign_sets = [
        [1.0, 1.0, 1.0],
        [1.0, -1.0, -1.0],
        [-1.0, 1.0, -1.0],
        [-1.0, -1.0, 1.0],
    ];
    let mut best: Option<(f64, RigidTransform)> = None;
    for signs in sign_sets {
        let rot = frame_d * Matrix3::from_diagonal(&Vector3::from_row_slice(&signs))
            * frame_r.transpose();
        let t = c_defect - rot * c_reference.coords;
        let candidate = RigidTransform::from_matrix(&rot, Point3::from(t) - Point3::origin());
        let moved = reference.transformed(&candidate);
        let score = match fit_loss(&defect.vertices_as_cloud(), &moved, 0.0) {
            Ok(s) => s,
            Err(_) => continue,
        };
        let better = match &best {
            None => true,
            Some((s, _)) => score < *s,
        };
        if better {
            best = Some((score, candidate));
        }
    }
    best.map(|(_, t)| t).unwrap_or(translation_only)
}

impl TriMesh {
    /// View of this mesh as a bare point set (drops connectivity).
    pub fn vertices_as_cloud(&self) -> TriMesh {
        TriMesh {
            vertices: self.vertices.clone(),
            faces: vec![],
            labels: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{make_defect, make_template, DefectKind, DefectSpec};

    #[test]
    fn identical_meshes_give_identity() {
        let template = make_template();
        let t = init_transform(&template, &template);
        assert!(t.rotation.norm() < 1e-6, "rotation {:?}", t.rotation);
        assert!(t.translation.norm() < 1e-6, "translation {:?}", t.translation);
    }

    #[test]
    fn recovers_a_known_rigid_motion() {
        let template = make_template();
        let defect = make_defect(
            &template,
            &DefectSpec {
                kind: DefectKind::Region {
                    seed_vertex: 1305,
                    radius_mm: 30.0,
                },
            },
        )
        .unwrap();
        let motion = RigidTransform::new(
            Vector3::new(0.15, -0.1, 0.2),
            Vector3::new(12.0, -5.0, 9.0),
        );
        let moved_defect = defect.mesh.transformed(&motion);
        let recovered = init_transform(&moved_defect, &template);
        // The recovered transform maps the template toward the moved defect;
        // compare action on probes rather than raw parameters (the defect is
        // partial, so the estimate is approximate but should be close).
        let probes = [
            Point3::new(0.0, 0.0, 60.0),
            Point3::new(30.0, 40.0, 30.0),
            Point3::new(-50.0, -20.0, 20.0),
        ];
        for p in probes {
            let expected = motion.apply(p);
            let got = recovered.apply(p);
            assert!(
                (expected - got).norm() < 6.0,
                "probe {p:?}: {expected:?} vs {got:?}"
            );
        }
    }

    #[test]
    fn exact_recovery_on_full_mesh() {
        let template = make_template();
        let motion = RigidTransform::new(
            Vector3::new(0.0, 0.3, 0.0),
            Vector3::new(4.0, 2.0, -7.0),
        );
        let moved = template.transformed(&motion);
        let recovered = init_transform(&moved, &template);
        // Full-mesh principal axes recover the motion almost exactly.
        let probe = Point3::new(10.0, 20.0, 40.0);
        assert!((recovered.apply(probe) - motion.apply(probe)).norm() < 1e-3);
        let angle_err = (recovered.rotation - motion.rotation).norm();
        assert!(angle_err < 1e-3, "angle err {angle_err}");
    }

    #[test]
    fn collinear_points_fall_back_to_translation() {
        let line = TriMesh {
            vertices: (0..5)
                .map(|i| Point3::new(i as f64, 0.0, 0.0))
                .collect(),
            faces: vec![],
            labels: None,
        };
        let template = make_template();
        let t = init_transform(&line, &template);
        assert_eq!(t.rotation, Vector3::zeros());
        let expected = centroid(&line.vertices) - centroid(&template.vertices);
        assert!((t.translation - expected).norm() < 1e-9);
    }
}
