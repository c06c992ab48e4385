//! Orthographic depth rasterization with interior-pixel gradients.
//!
//! Per pixel, the nearest triangle along the view direction wins the
//! z-buffer; depth is the barycentric interpolation of vertex depths. The
//! backward pass differentiates through both the vertex depths and the
//! barycentric weights with the pixel-to-triangle assignment frozen (no
//! silhouette terms), which matches finite differences away from occlusion
//! boundaries.

use super::{Camera, DepthImage};
use crate::mesh::TriMesh;
use nalgebra::{Point3, Vector2, Vector3};

/// Per-pixel rasterization record kept for the backward pass.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PixelHit {
    pub face: u32,
    pub bary: [f64; 3],
}

#[derive(Debug)]
pub struct RenderResult {
    pub image: DepthImage,
    pub(crate) hits: Vec<Option<PixelHit>>,
}

/// Projects a point into (pixel-space x, y, depth-along-view).
fn project(cam: &Camera, p: Point3<f64>) -> (Vector2<f64>, f64) {
    let rel = p - cam.origin();
    (
        Vector2::new(rel.dot(&cam.right()), rel.dot(&cam.up_ortho())),
        rel.dot(&cam.view()),
    )
}

pub fn render_depth(mesh: &TriMesh, cam: &Camera) -> RenderResult {
    let (w, h) = (cam.width, cam.height);
    let mut depth = vec![f64::INFINITY; w * h];
    let mut hits: Vec<Option<PixelHit>> = vec![None; w * h];

    let projected: Vec<(Vector2<f64>, f64)> =
        mesh.vertices.iter().map(|&v| project(cam, v)).collect();

    for (fi, f) in mesh.faces.iter().enumerate() {
        let (a, da) = projected[f[0] as usize];
        let (b, db) = projected[f[1] as usize];
        let (c, dc) = projected[f[2] as usize];
        let area = (b - a).perp(&(c - a));
        if area.abs() < 1e-12 {
            continue; // edge-on triangle
        }
        // Pixel-space bounding box.
        let (min_x, max_x) = (
            a.x.min(b.x).min(c.x),
            a.x.max(b.x).max(c.x),
        );
        let (min_y, max_y) = (
            a.y.min(b.y).min(c.y),
            a.y.max(b.y).max(c.y),
        );
        // One extra ring of candidate pixels; the coverage test filters.
        let px0 = (cam.pixel_of_x(min_x) - 1).max(0);
        let px1 = (cam.pixel_of_x(max_x) + 1).min(w as i64 - 1);
        let (pa, pb) = (cam.pixel_of_y(min_y), cam.pixel_of_y(max_y));
        let py0 = (pa.min(pb) - 1).max(0);
        let py1 = (pa.max(pb) + 1).min(h as i64 - 1);

        for py in py0..=py1 {
            for px in px0..=px1 {
                let p = Vector2::new(cam.x_of_pixel(px), cam.y_of_pixel(py));
                // Inclusive edge test so coverage matches a ray-cast oracle.
                let wa = (b - p).perp(&(c - p)) / area;
                let wb = (c - p).perp(&(a - p)) / area;
                let wc = (a - p).perp(&(b - p)) / area;
                if wa < -1e-12 || wb < -1e-12 || wc < -1e-12 {
                    continue;
                }
                let d = wa * da + wb * db + wc * dc;
                let idx = py as usize * w + px as usize;
                let better = d < depth[idx]
                    || (d == depth[idx]
                        && hits[idx].map_or(true, |hit| fi < hit.face as usize));
                if better {
                    depth[idx] = d;
                    hits[idx] = Some(PixelHit {
                        face: fi as u32,
                        bary: [wa, wb, wc],
                    });
                }
            }
        }
    }

    let valid: Vec<bool> = hits.iter().map(|h| h.is_some()).collect();
    for (d, ok) in depth.iter_mut().zip(&valid) {
        if !ok {
            *d = DepthImage::INVALID;
        }
    }
    RenderResult {
        image: DepthImage {
            width: w,
            height: h,
            depth,
            valid,
        },
        hits,
    }
}

/// Propagates per-pixel depth gradients to per-vertex position gradients
/// using the stored pixel assignments.
///
/// For pixel p on triangle (v0, v1, v2): `depth = sum_k w_k(q) * d_k` where
/// `q` are the projected 2D vertex positions and `d_k` the view depths.
/// Gradients flow through both `d_k` (along the view axis) and the
/// barycentric weights `w_k` (in the image plane).
pub fn render_depth_backward(
    mesh: &TriMesh,
    cam: &Camera,
    result: &RenderResult,
    upstream: &[f64],
) -> Vec<Vector3<f64>> {
    assert_eq!(upstream.len(), result.hits.len());
    let mut grads = vec![Vector3::zeros(); mesh.vertex_count()];
    let projected: Vec<(Vector2<f64>, f64)> =
        mesh.vertices.iter().map(|&v| project(cam, v)).collect();
    let axes = [cam.right(), cam.up_ortho()];

    for (idx, (hit, &g)) in result.hits.iter().zip(upstream).enumerate() {
        let hit = match hit {
            Some(h) if g != 0.0 => h,
            _ => continue,
        };
        let f = mesh.faces[hit.face as usize];
        let q = [
            projected[f[0] as usize].0,
            projected[f[1] as usize].0,
            projected[f[2] as usize].0,
        ];
        let d = [
            projected[f[0] as usize].1,
            projected[f[1] as usize].1,
            projected[f[2] as usize].1,
        ];
        let px = (idx % cam.width) as i64;
        let py = (idx / cam.width) as i64;
        let p = Vector2::new(cam.x_of_pixel(px), cam.y_of_pixel(py));

        let area = (q[1] - q[0]).perp(&(q[2] - q[0]));
        if area.abs() < 1e-12 {
            continue;
        }
        let w = hit.bary;

        // Depth-path gradient: d(depth)/d(vertex along view) = w_k.
        for k in 0..3 {
            grads[f[k] as usize] += cam.view() * (g * w[k]);
        }

        // Barycentric-path gradient. With e_k = perp-area coefficients:
        // w_k = A_k / A; dA/dq and dA_k/dq have closed forms via 2D cross
        // products. Assemble d(depth)/dq_k then map into 3D via the camera
        // axes.
        for k in 0..3 {
            let (j, l) = ((k + 1) % 3, (k + 2) % 3);
            // dA/dq_k = rot90(q_l - q_j), the rotated edge opposite k.
            let edge = q[l] - q[j];
            let d_area = Vector2::new(-edge.y, edge.x);
            // A_k uses the pixel in place of vertex k, so dA_k/dq_k = 0;
            // dA_j/dq_k and dA_l/dq_k are rotated edges through p.
            // d(w_m)/dq_k = (dA_m/dq_k - w_m * dA/dq_k) / A.
            let mut ddepth_dqk = Vector2::zeros();
            for m in 0..3 {
                let da_m = if m == k {
                    Vector2::zeros()
                } else {
                    // A_m = cross(q_u - p, q_v - p) with (u, v) the other two
                    // vertices in orientation order (m+1, m+2).
                    let (u, v) = ((m + 1) % 3, (m + 2) % 3);
                    if u == k {
                        let other = q[v] - p;
                        Vector2::new(other.y, -other.x)
                    } else {
                        let other = q[u] - p;
                        Vector2::new(-other.y, other.x)
                    }
                };
                let dw_m = (da_m - d_area * w[m]) / area;
                ddepth_dqk += dw_m * d[m];
            }
            grads[f[k] as usize] += (axes[0] * ddepth_dqk.x + axes[1] * ddepth_dqk.y) * g;
        }
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Bvh;

    fn flat_triangle(depth: f64) -> TriMesh {
        // Large triangle covering the image center, parallel to the image
        // plane at the given view depth (camera plane sits at z = 200,
        // looking along -z).
        let z = 200.0 - depth;
        TriMesh::new(
            vec![
                Point3::new(-80.0, -80.0, z),
                Point3::new(80.0, -80.0, z),
                Point3::new(0.0, 80.0, z),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    fn camera() -> Camera {
        Camera::frontal(64, 180.0)
    }

    #[test]
    fn flat_triangle_renders_constant_depth() {
        let cam = camera();
        let result = render_depth(&flat_triangle(10.0), &cam);
        let mut covered = 0;
        for (d, ok) in result.image.depth.iter().zip(&result.image.valid) {
            if *ok {
                covered += 1;
                assert!((d - 10.0).abs() < 1e-9, "depth {d}");
            }
        }
        assert!(covered > 0);
    }

    #[test]
    fn uncovered_pixels_are_invalid() {
        let cam = camera();
        let result = render_depth(&flat_triangle(10.0), &cam);
        // Corners of the image are outside the triangle.
        assert!(!result.image.valid[0]);
        assert_eq!(result.image.depth[0], DepthImage::INVALID);
    }

    #[test]
    fn depth_matches_raycast_oracle() {
        let cam = camera();
        let mesh = {
            let mut sphere = crate::synth::unit_icosphere(3);
            for v in &mut sphere.vertices {
                v.coords *= 70.0;
            }
            sphere
        };
        let result = render_depth(&mesh, &cam);
        let bvh = Bvh::build(&mesh).unwrap();
        let mut rng = crate::config::substream(7, "pixels");
        use rand::Rng;
        let mut checked = 0;
        for _ in 0..1000 {
            let px = rng.random_range(0..cam.width as i64);
            let py = rng.random_range(0..cam.height as i64);
            let origin = cam.origin()
                + cam.right() * cam.x_of_pixel(px)
                + cam.up_ortho() * cam.y_of_pixel(py);
            let oracle = bvh.raycast(origin, cam.view());
            let idx = py as usize * cam.width + px as usize;
            match oracle {
                Some(hit) => {
                    assert!(result.image.valid[idx], "raster missed pixel {px},{py}");
                    assert!(
                        (result.image.depth[idx] - hit.t).abs() < 1e-6,
                        "depth {} vs oracle {}",
                        result.image.depth[idx],
                        hit.t
                    );
                    checked += 1;
                }
                None => assert!(!result.image.valid[idx], "raster covered empty pixel"),
            }
        }
        assert!(checked > 200, "oracle only hit {checked} pixels");
    }

    #[test]
    fn rendering_is_deterministic() {
        let cam = camera();
        let mesh = flat_triangle(25.0);
        let a = render_depth(&mesh, &cam);
        let b = render_depth(&mesh, &cam);
        assert_eq!(a.image.depth, b.image.depth);
        assert_eq!(a.image.valid, b.image.valid);
    }

    #[test]
    fn translating_along_view_shifts_depth_and_gradients_match() {
        let cam = camera();
        let mesh = flat_triangle(10.0);
        let result = render_depth(&mesh, &cam);
        let covered: usize = result.image.valid.iter().filter(|&&v| v).count();

        // Mean-depth loss: upstream gradient 1/covered per valid pixel.
        let upstream: Vec<f64> = result
            .image
            .valid
            .iter()
            .map(|&v| if v { 1.0 / covered as f64 } else { 0.0 })
            .collect();
        let grads = render_depth_backward(&mesh, &cam, &result, &upstream);

        // Coverage-weighted barycentric sums along the view axis.
        let mut expected = vec![0.0f64; 3];
        for hit in result.hits.iter().flatten() {
            for k in 0..3 {
                expected[k] += hit.bary[k] / covered as f64;
            }
        }
        for k in 0..3 {
            let along_view = grads[k].dot(&cam.view());
            assert!(
                (along_view - expected[k]).abs() < 1e-9,
                "vertex {k}: {along_view} vs {}",
                expected[k]
            );
        }

        // Finite-difference check of the mean depth when the whole mesh
        // translates along the view.
        let mean_depth = |mesh: &TriMesh| -> f64 {
            let r = render_depth(mesh, &cam);
            let mut sum = 0.0;
            let mut n = 0;
            for (d, ok) in r.image.depth.iter().zip(&r.image.valid) {
                if *ok {
                    sum += d;
                    n += 1;
                }
            }
            sum / n as f64
        };
        let h = 1e-4;
        let mut plus = mesh.clone();
        let mut minus = mesh.clone();
        for v in &mut plus.vertices {
            *v -= cam.view() * h; // moving against view increases depth
        }
        for v in &mut minus.vertices {
            *v += cam.view() * h;
        }
        let fd = (mean_depth(&plus) - mean_depth(&minus)) / (2.0 * h);
        let analytic: f64 = grads.iter().map(|g| g.dot(&-cam.view())).sum();
        assert!(
            (fd - analytic).abs() / fd.abs().max(1.0) < 1e-6,
            "fd {fd} vs analytic {analytic}"
        );
    }

    #[test]
    fn interior_gradients_match_finite_differences_on_a_slanted_mesh() {
        let cam = Camera::frontal(48, 180.0);
        // Slanted and curved surface so in-plane motion changes depth.
        let mut mesh = crate::synth::unit_icosphere(2);
        for v in &mut mesh.vertices {
            v.coords *= 70.0;
        }
        let result = render_depth(&mesh, &cam);

        // Loss: sum of covered depths (upstream = 1 at covered pixels).
        // Exclude silhouette pixels: only pixels whose 8-neighborhood is
        // fully covered by the same assignment stability test.
        let w = cam.width as i64;
        let h = cam.height as i64;
        let stable: Vec<bool> = (0..w * h)
            .map(|idx| {
                let (px, py) = (idx % w, idx / w);
                for dy in -1..=1i64 {
                    for dx in -1..=1i64 {
                        let (nx, ny) = (px + dx, py + dy);
                        if nx < 0 || ny < 0 || nx >= w || ny >= h {
                            return false;
                        }
                        if !result.image.valid[(ny * w + nx) as usize] {
                            return false;
                        }
                    }
                }
                true
            })
            .collect();
        let upstream: Vec<f64> = stable.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect();
        let grads = render_depth_backward(&mesh, &cam, &result, &upstream);

        let loss = |mesh: &TriMesh| -> f64 {
            let r = render_depth(mesh, &cam);
            r.image
                .depth
                .iter()
                .zip(&stable)
                .filter(|(_, &s)| s)
                .map(|(d, _)| d)
                .sum()
        };

        // Probe a handful of vertices in all three coordinates.
        let mut rng = crate::config::substream(3, "fd");
        use rand::Rng;
        let step = 1e-4;
        let mut checked = 0;
        for _ in 0..10 {
            let vi = rng.random_range(0..mesh.vertex_count());
            if grads[vi].norm() < 1e-12 {
                continue; // vertex not visible in stable region
            }
            for axis in 0..3 {
                let mut plus = mesh.clone();
                plus.vertices[vi][axis] += step;
                let mut minus = mesh.clone();
                minus.vertices[vi][axis] -= step;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * step);
                let analytic = grads[vi][axis];
                let err = (fd - analytic).abs() / fd.abs().max(1.0);
                assert!(
                    err < 1e-3,
                    "vertex {vi} axis {axis}: fd {fd} analytic {analytic}"
                );
                checked += 1;
            }
        }
        assert!(checked >= 9, "too few visible probes: {checked}");
    }

    #[test]
    fn gradient_of_all_invalid_image_is_zero() {
        let cam = camera();
        // Mesh entirely behind the camera plane... actually outside the
        // image extent.
        let mesh = TriMesh::new(
            vec![
                Point3::new(500.0, 500.0, -10.0),
                Point3::new(501.0, 500.0, -10.0),
                Point3::new(500.0, 501.0, -10.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let result = render_depth(&mesh, &cam);
        assert!(result.image.valid.iter().all(|&v| !v));
        let upstream = vec![1.0; cam.width * cam.height];
        let grads = render_depth_backward(&mesh, &cam, &result, &upstream);
        assert!(grads.iter().all(|g| g.norm() == 0.0));
    }
}
