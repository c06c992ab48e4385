//! Rigid transforms parameterized by an axis-angle rotation and translation.
//!
//! The axis-angle vector is `angle * unit_axis` in radians. The rotation
//! matrix is materialized through an exactly-unit quaternion with series
//! guards near zero angle, keeping both the matrix and its derivative
//! [`rotation_jacobian`] smooth everywhere, which the fitting optimizer
//! depends on.

use nalgebra::{Matrix3, Point3, Rotation3, Vector3};

/// A rigid (rotation + translation) transform. No scale, no shear.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    /// Axis-angle rotation vector (radians times unit axis).
    pub rotation: Vector3<f64>,
    /// Translation in millimeters.
    pub translation: Vector3<f64>,
}

/// Unit quaternion (w, x, y, z) for the axis-angle vector, with the
/// half-angle sine factored as `sin(theta/2)/theta` so the map is smooth
/// through zero.
fn quaternion_of(w: Vector3<f64>) -> [f64; 4] {
    let theta = w.norm();
    let half_cos = (0.5 * theta).cos();
    let a = sinc_half(theta);
    [half_cos, a * w.x, a * w.y, a * w.z]
}

/// sin(theta/2) / theta, series-expanded below 1e-4.
fn sinc_half(theta: f64) -> f64 {
    if theta < 1e-4 {
        let t2 = theta * theta;
        0.5 - t2 / 48.0 + t2 * t2 / 3840.0
    } else {
        (0.5 * theta).sin() / theta
    }
}

/// d(sinc_half)/d(theta) / theta == (cos(theta/2)/2 - sinc_half) / theta^2,
/// series-expanded below 1e-3.
fn sinc_half_slope(theta: f64) -> f64 {
    if theta < 1e-3 {
        let t2 = theta * theta;
        -1.0 / 24.0 + t2 / 960.0
    } else {
        let c = (0.5 * theta).cos();
        (0.5 * c - sinc_half(theta)) / (theta * theta)
    }
}

fn matrix_of_quaternion(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - z * w),
        2.0 * (x * z + y * w),
        2.0 * (x * y + z * w),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - x * w),
        2.0 * (x * z - y * w),
        2.0 * (y * z + x * w),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Rotation matrix for an axis-angle vector.
pub fn rotation_matrix(w: Vector3<f64>) -> Matrix3<f64> {
    matrix_of_quaternion(quaternion_of(w))
}

/// Derivative of [`rotation_matrix`] with respect to each axis-angle
/// component: `out[k] = dR/dw_k`. Exact (the quaternion stays on the unit
/// sphere for every `w`, so the chain rule through the quaternion formula is
/// the true derivative), and smooth through `w = 0`.
pub fn rotation_jacobian(w: Vector3<f64>) -> [Matrix3<f64>; 3] {
    let theta = w.norm();
    let q = quaternion_of(w);
    let [qw, qx, qy, qz] = q;
    let a = sinc_half(theta);
    let b = sinc_half_slope(theta);

    // dR/dq for the unit-quaternion matrix formula.
    let dr_dqw = Matrix3::new(0.0, -qz, qy, qz, 0.0, -qx, -qy, qx, 0.0) * 2.0;
    let dr_dqx = Matrix3::new(0.0, qy, qz, qy, -2.0 * qx, -qw, qz, qw, -2.0 * qx) * 2.0;
    let dr_dqy = Matrix3::new(-2.0 * qy, qx, qw, qx, 0.0, qz, -qw, qz, -2.0 * qy) * 2.0;
    let dr_dqz = Matrix3::new(-2.0 * qz, -qw, qx, qw, -2.0 * qz, qy, qx, qy, 0.0) * 2.0;
    let dr_dq = [dr_dqw, dr_dqx, dr_dqy, dr_dqz];

    let mut out = [Matrix3::zeros(); 3];
    for k in 0..3 {
        // dq/dw_k: d(qw) = -(a/2) w_k; d(q_i) = a delta_ik + b w_i w_k.
        let mut dq = [0.0; 4];
        dq[0] = -0.5 * a * w[k];
        for i in 0..3 {
            dq[i + 1] = b * w[i] * w[k] + if i == k { a } else { 0.0 };
        }
        let mut m = Matrix3::zeros();
        for c in 0..4 {
            m += dr_dq[c] * dq[c];
        }
        out[k] = m;
    }
    out
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Vector3::zeros(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Vector3<f64>, translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation,
            translation,
        }
    }

    /// Recovers the axis-angle parameterization from a proper rotation
    /// matrix plus translation.
    pub fn from_matrix(rot: &Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let r = Rotation3::from_matrix(rot);
        let rotation = match r.axis_angle() {
            Some((axis, angle)) => axis.into_inner() * angle,
            None => Vector3::zeros(),
        };
        RigidTransform {
            rotation,
            translation,
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        rotation_matrix(self.rotation)
    }

    pub fn apply(&self, p: Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation_matrix() * p.coords + self.translation)
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation_matrix().transpose();
        RigidTransform {
            rotation: -self.rotation,
            translation: -(rt * self.translation),
        }
    }

    /// Wraps the rotation magnitude into [0, pi], flipping to the equivalent
    /// short rotation when the angle has drifted past pi.
    pub fn shortened(&self) -> RigidTransform {
        let theta = self.rotation.norm();
        if theta > std::f64::consts::PI {
            let wrapped = theta - 2.0 * std::f64::consts::PI * (theta / (2.0 * std::f64::consts::PI)).round();
            RigidTransform {
                rotation: self.rotation * (wrapped / theta),
                translation: self.translation,
            }
        } else {
            *self
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_is_identity() {
        let t = RigidTransform::identity();
        let p = Point3::new(1.0, 2.0, 3.0);
        assert_eq!(t.apply(p), p);
        assert_eq!(t.rotation_matrix(), Matrix3::identity());
    }

    #[test]
    fn pi_about_z_negates_x() {
        let t = RigidTransform::new(
            Vector3::new(0.0, 0.0, std::f64::consts::PI),
            Vector3::zeros(),
        );
        let p = t.apply(Point3::new(1.0, 0.0, 0.0));
        assert!((p - Point3::new(-1.0, 0.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn translation_only_shifts() {
        let t = RigidTransform::new(Vector3::zeros(), Vector3::new(1.0, 2.0, 3.0));
        let p = t.apply(Point3::origin());
        assert_eq!(p, Point3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn inverse_round_trips() {
        let t = RigidTransform::new(Vector3::new(0.3, -0.2, 0.9), Vector3::new(4.0, -1.0, 2.5));
        let p = Point3::new(0.5, 8.0, -3.0);
        let back = t.inverse().apply(t.apply(p));
        assert!((back - p).norm() < 1e-12);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let ws = [
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1e-7, -2e-7, 5e-8),
            Vector3::new(0.4, -0.8, 0.3),
            Vector3::new(2.0, 1.5, -1.0),
        ];
        let h = 1e-6;
        for w in ws {
            let jac = rotation_jacobian(w);
            for k in 0..3 {
                let mut wp = w;
                let mut wm = w;
                wp[k] += h;
                wm[k] -= h;
                let fd = (rotation_matrix(wp) - rotation_matrix(wm)) / (2.0 * h);
                let err = (jac[k] - fd).abs().max();
                assert!(err < 1e-7, "dR/dw[{k}] at {w:?}: err {err}");
            }
        }
    }

    #[test]
    fn shortened_wraps_past_pi() {
        let w = Vector3::new(0.0, 0.0, 1.0) * (std::f64::consts::PI + 0.5);
        let t = RigidTransform::new(w, Vector3::zeros()).shortened();
        assert!(t.rotation.norm() <= std::f64::consts::PI);
        let p = Point3::new(1.0, 2.0, 3.0);
        let orig = RigidTransform::new(w, Vector3::zeros()).apply(p);
        assert!((t.apply(p) - orig).norm() < 1e-9);
    }

    proptest! {
        #[test]
        fn rotation_is_orthonormal(
            wx in -6.0..6.0f64,
            wy in -6.0..6.0f64,
            wz in -6.0..6.0f64,
        ) {
            let r = rotation_matrix(Vector3::new(wx, wy, wz));
            let gram = r.transpose() * r - Matrix3::identity();
            prop_assert!(gram.abs().max() < 1e-6);
            prop_assert!(r.determinant() > 0.0);
        }

        #[test]
        fn transform_preserves_pairwise_distances(
            wx in -3.0..3.0f64,
            wy in -3.0..3.0f64,
            wz in -3.0..3.0f64,
            tx in -100.0..100.0f64,
        ) {
            let t = RigidTransform::new(
                Vector3::new(wx, wy, wz),
                Vector3::new(tx, -tx, 0.5 * tx),
            );
            let a = Point3::new(10.0, -4.0, 2.0);
            let b = Point3::new(-3.0, 7.0, 11.0);
            let before = (a - b).norm();
            let after = (t.apply(a) - t.apply(b)).norm();
            prop_assert!(((after - before) / before).abs() < 1e-9);
        }
    }
}
