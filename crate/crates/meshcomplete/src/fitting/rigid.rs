//! Rigid transform as a differentiable tape operation.
//!
//! `Y = V R(w)^T + 1 t^T` with axis-angle `w`; the backward pass contracts
//! the upstream gradient against the analytic rotation jacobian.

use crate::autodiff::{AutodiffError, Tensor, Value};
use crate::mesh::{rotation_jacobian, rotation_matrix};
use nalgebra::Vector3;

/// Applies the rigid transform parameterized by `w` (axis-angle, 1x3) and
/// `t` (translation, 1x3) to vertex rows `v` (N x 3).
pub fn rigid_transform_value(v: &Value, w: &Value, t: &Value) -> Result<Value, AutodiffError> {
    if v.cols() != 3 || w.shape() != (1, 3) || t.shape() != (1, 3) {
        return Err(AutodiffError::ShapeMismatch {
            op: "rigid_transform",
            left: v.shape(),
            right: w.shape(),
        });
    }
    let wv = w.value();
    let axis_angle = Vector3::new(wv.get(0, 0), wv.get(0, 1), wv.get(0, 2));
    let rot = rotation_matrix(axis_angle);
    let jac = rotation_jacobian(axis_angle);
    let tv = t.value();
    let vv = v.value();

    let mut out = Tensor::zeros(vv.rows(), 3);
    for i in 0..vv.rows() {
        let p = Vector3::new(vv.get(i, 0), vv.get(i, 1), vv.get(i, 2));
        let q = rot * p;
        for j in 0..3 {
            out.set(i, j, q[j] + tv.get(0, j));
        }
    }

    Value::custom(
        &[v, w, t],
        out,
        Box::new(move |upstream, inputs, grads| {
            let vv = &inputs[0];
            let n = vv.rows();
            // dV = G * R ; dt = column sums of G ; dw_k = <G^T V, dR/dw_k>.
            let mut dr = [[0.0f64; 3]; 3];
            for i in 0..n {
                for a in 0..3 {
                    let g = upstream.get(i, a);
                    if g == 0.0 {
                        continue;
                    }
                    for b in 0..3 {
                        grads[0].set(i, b, grads[0].get(i, b) + g * rot[(a, b)]);
                        dr[a][b] += g * vv.get(i, b);
                    }
                    grads[2].set(0, a, grads[2].get(0, a) + g);
                }
            }
            for k in 0..3 {
                let mut acc = 0.0;
                for a in 0..3 {
                    for b in 0..3 {
                        acc += dr[a][b] * jac[k][(a, b)];
                    }
                }
                grads[1].set(0, k, grads[1].get(0, k) + acc);
            }
        }),
    )
}
