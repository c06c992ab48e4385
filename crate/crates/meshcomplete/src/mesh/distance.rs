//! Exact point-to-surface distance and ray casting, BVH-accelerated.
//!
//! The point-to-triangle routine classifies the closest feature (interior,
//! edge, or vertex) and reports barycentric coordinates, which downstream
//! code uses both for frozen-assignment differentiation and for boundary
//! tests. The BVH prunes with box distances but never changes the result:
//! queries are tie-broken by lowest face index, identical to an exhaustive
//! scan.

use super::{MeshError, TriMesh};
use nalgebra::{Point3, Vector3};

/// Closest point on a mesh surface to a query point.
#[derive(Debug, Clone, Copy)]
pub struct SurfaceHit {
    /// Distance in millimeters.
    pub distance: f64,
    pub closest_point: Point3<f64>,
    pub face_index: usize,
    /// Barycentric coordinates of `closest_point` in the face, nonnegative,
    /// summing to one.
    pub barycentric: [f64; 3],
}

/// First intersection of a ray with a mesh surface.
#[derive(Debug, Clone, Copy)]
pub struct RayHit {
    /// Signed parameter along the ray direction (callers pass unit vectors,
    /// making this the distance in millimeters).
    pub t: f64,
    pub point: Point3<f64>,
    pub face_index: usize,
    pub barycentric: [f64; 3],
}

/// Closest point on triangle `(a, b, c)` to `p`, with barycentric
/// coordinates; the standard closest-feature region classification.
pub fn closest_point_on_triangle(
    p: Point3<f64>,
    a: Point3<f64>,
    b: Point3<f64>,
    c: Point3<f64>,
) -> (Point3<f64>, [f64; 3]) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (a, [1.0, 0.0, 0.0]);
    }

    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (b, [0.0, 1.0, 0.0]);
    }

    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [1.0 - v, v, 0.0]);
    }

    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (c, [0.0, 0.0, 1.0]);
    }

    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [1.0 - w, 0.0, w]);
    }

    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [0.0, 1.0 - w, w]);
    }

    let denom = va + vb + vc;
    if !(denom > 0.0) {
        // Degenerate (collinear) triangle; fall back to the nearest vertex.
        return (a, [1.0, 0.0, 0.0]);
    }
    let v = vb / denom;
    let w = vc / denom;
    (a + ab * v + ac * w, [1.0 - v - w, v, w])
}

/// Moller-Trumbore ray/triangle intersection, edges inclusive.
/// Returns `(t, [b0, b1, b2])` for `origin + t * dir` with `t >= 0`.
fn ray_triangle(
    origin: Point3<f64>,
    dir: Vector3<f64>,
    a: Point3<f64>,
    b: Point3<f64>,
    c: Point3<f64>,
) -> Option<(f64, [f64; 3])> {
    let e1 = b - a;
    let e2 = c - a;
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv_det = 1.0 / det;
    let tvec = origin - a;
    let u = tvec.dot(&pvec) * inv_det;
    if !(-1e-12..=1.0 + 1e-12).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv_det;
    if v < -1e-12 || u + v > 1.0 + 1e-12 {
        return None;
    }
    let t = e2.dot(&qvec) * inv_det;
    if t < 0.0 {
        return None;
    }
    Some((t, [1.0 - u - v, u, v]))
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Point3<f64>,
    hi: Point3<f64>,
}

impl Aabb {
    fn empty() -> Self {
        Aabb {
            lo: Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            hi: Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: Point3<f64>) {
        for k in 0..3 {
            self.lo[k] = self.lo[k].min(p[k]);
            self.hi[k] = self.hi[k].max(p[k]);
        }
    }

    fn dist_sq(&self, p: Point3<f64>) -> f64 {
        let mut d = 0.0;
        for k in 0..3 {
            let v = if p[k] < self.lo[k] {
                self.lo[k] - p[k]
            } else if p[k] > self.hi[k] {
                p[k] - self.hi[k]
            } else {
                0.0
            };
            d += v * v;
        }
        d
    }

    /// Slab test; returns entry parameter if the ray touches the box.
    fn ray_entry(&self, origin: Point3<f64>, inv_dir: Vector3<f64>) -> Option<f64> {
        let mut t0 = 0.0_f64;
        let mut t1 = f64::INFINITY;
        for k in 0..3 {
            let (mut near, mut far) = (
                (self.lo[k] - origin[k]) * inv_dir[k],
                (self.hi[k] - origin[k]) * inv_dir[k],
            );
            if near > far {
                std::mem::swap(&mut near, &mut far);
            }
            if near.is_nan() || far.is_nan() {
                // Direction component zero and origin inside the slab.
                if origin[k] < self.lo[k] || origin[k] > self.hi[k] {
                    return None;
                }
                continue;
            }
            t0 = t0.max(near);
            t1 = t1.min(far);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Debug)]
enum BvhNode {
    Leaf {
        aabb: Aabb,
        start: usize,
        count: usize,
    },
    Inner {
        aabb: Aabb,
        left: usize,
        right: usize,
    },
}

/// Bounding-volume hierarchy over a mesh's faces.
///
/// Read-only after construction; queries are safe to run concurrently.
#[derive(Debug)]
pub struct Bvh {
    nodes: Vec<BvhNode>,
    // Face indices permuted so every leaf owns a contiguous run.
    order: Vec<u32>,
    tris: Vec<[Point3<f64>; 3]>,
}

const LEAF_SIZE: usize = 4;

impl Bvh {
    pub fn build(mesh: &TriMesh) -> Result<Bvh, MeshError> {
        if mesh.faces.is_empty() {
            return Err(MeshError::NoFaces);
        }
        let tris: Vec<[Point3<f64>; 3]> = (0..mesh.face_count())
            .map(|f| mesh.face_points(f))
            .collect();
        let centroids: Vec<Point3<f64>> = (0..mesh.face_count())
            .map(|f| mesh.face_centroid(f))
            .collect();
        let mut order: Vec<u32> = (0..mesh.face_count() as u32).collect();
        let mut nodes = Vec::new();
        let len = order.len();
        Self::build_node(&tris, &centroids, &mut order, 0, len, &mut nodes);
        Ok(Bvh { nodes, order, tris })
    }

    fn build_node(
        tris: &[[Point3<f64>; 3]],
        centroids: &[Point3<f64>],
        order: &mut [u32],
        start: usize,
        count: usize,
        nodes: &mut Vec<BvhNode>,
    ) -> usize {
        let mut aabb = Aabb::empty();
        for &f in &order[start..start + count] {
            for p in &tris[f as usize] {
                aabb.grow(*p);
            }
        }
        let index = nodes.len();
        if count <= LEAF_SIZE {
            nodes.push(BvhNode::Leaf { aabb, start, count });
            return index;
        }
        // Split on the longest axis of the centroid bounds at the median,
        // tie-broken by face index so the tree is deterministic.
        let mut cb = Aabb::empty();
        for &f in &order[start..start + count] {
            cb.grow(centroids[f as usize]);
        }
        let extent = cb.hi - cb.lo;
        let axis = if extent.x >= extent.y && extent.x >= extent.z {
            0
        } else if extent.y >= extent.z {
            1
        } else {
            2
        };
        let mid = count / 2;
        order[start..start + count].select_nth_unstable_by(mid, |&a, &b| {
            centroids[a as usize][axis]
                .total_cmp(&centroids[b as usize][axis])
                .then(a.cmp(&b))
        });
        nodes.push(BvhNode::Leaf {
            aabb,
            start: 0,
            count: 0,
        }); // placeholder
        let left = Self::build_node(tris, centroids, order, start, mid, nodes);
        let right = Self::build_node(tris, centroids, order, start + mid, count - mid, nodes);
        nodes[index] = BvhNode::Inner { aabb, left, right };
        index
    }

    /// Exact closest point over all faces; identical (distance and face,
    /// lowest index on ties) to exhaustive search.
    pub fn closest(&self, p: Point3<f64>) -> SurfaceHit {
        let mut best = SurfaceHit {
            distance: f64::INFINITY,
            closest_point: p,
            face_index: usize::MAX,
            barycentric: [0.0; 3],
        };
        let mut best_sq = f64::INFINITY;
        self.closest_rec(0, p, &mut best, &mut best_sq);
        best.distance = best_sq.sqrt();
        best
    }

    fn closest_rec(&self, node: usize, p: Point3<f64>, best: &mut SurfaceHit, best_sq: &mut f64) {
        match &self.nodes[node] {
            BvhNode::Leaf { start, count, .. } => {
                for &f in &self.order[*start..*start + *count] {
                    let [a, b, c] = self.tris[f as usize];
                    let (cp, bary) = closest_point_on_triangle(p, a, b, c);
                    let d_sq = (p - cp).norm_squared();
                    if d_sq < *best_sq || (d_sq == *best_sq && (f as usize) < best.face_index) {
                        *best_sq = d_sq;
                        best.closest_point = cp;
                        best.face_index = f as usize;
                        best.barycentric = bary;
                    }
                }
            }
            BvhNode::Inner { left, right, .. } => {
                let dl = self.node_aabb(*left).dist_sq(p);
                let dr = self.node_aabb(*right).dist_sq(p);
                let (first, second, d_first, d_second) = if dl <= dr {
                    (*left, *right, dl, dr)
                } else {
                    (*right, *left, dr, dl)
                };
                // `<=` keeps boxes at exactly the best distance reachable so
                // the lowest-index tie rule matches exhaustive search.
                if d_first <= *best_sq {
                    self.closest_rec(first, p, best, best_sq);
                }
                if d_second <= *best_sq {
                    self.closest_rec(second, p, best, best_sq);
                }
            }
        }
    }

    fn node_aabb(&self, node: usize) -> &Aabb {
        match &self.nodes[node] {
            BvhNode::Leaf { aabb, .. } => aabb,
            BvhNode::Inner { aabb, .. } => aabb,
        }
    }

    /// First hit of `origin + t * dir`, `t >= 0`; lowest face index on ties.
    pub fn raycast(&self, origin: Point3<f64>, dir: Vector3<f64>) -> Option<RayHit> {
        let inv_dir = Vector3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut best: Option<RayHit> = None;
        self.raycast_rec(0, origin, dir, inv_dir, &mut best);
        best
    }

    fn raycast_rec(
        &self,
        node: usize,
        origin: Point3<f64>,
        dir: Vector3<f64>,
        inv_dir: Vector3<f64>,
        best: &mut Option<RayHit>,
    ) {
        let aabb = self.node_aabb(node);
        match aabb.ray_entry(origin, inv_dir) {
            None => return,
            Some(entry) => {
                if let Some(hit) = best {
                    if entry > hit.t {
                        return;
                    }
                }
            }
        }
        match &self.nodes[node] {
            BvhNode::Leaf { start, count, .. } => {
                for &f in &self.order[*start..*start + *count] {
                    let [a, b, c] = self.tris[f as usize];
                    if let Some((t, bary)) = ray_triangle(origin, dir, a, b, c) {
                        let better = match best {
                            None => true,
                            Some(hit) => t < hit.t || (t == hit.t && (f as usize) < hit.face_index),
                        };
                        if better {
                            *best = Some(RayHit {
                                t,
                                point: origin + dir * t,
                                face_index: f as usize,
                                barycentric: bary,
                            });
                        }
                    }
                }
            }
            BvhNode::Inner { left, right, .. } => {
                self.raycast_rec(*left, origin, dir, inv_dir, best);
                self.raycast_rec(*right, origin, dir, inv_dir, best);
            }
        }
    }
}

/// Convenience one-shot query; builds a throwaway BVH. Prefer holding a
/// [`Bvh`] when querying the same surface repeatedly.
pub fn point_to_surface(p: Point3<f64>, mesh: &TriMesh) -> Result<SurfaceHit, MeshError> {
    Ok(Bvh::build(mesh)?.closest(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::unit_icosphere;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn exhaustive_closest(p: Point3<f64>, mesh: &TriMesh) -> SurfaceHit {
        let mut best_sq = f64::INFINITY;
        let mut best = SurfaceHit {
            distance: f64::INFINITY,
            closest_point: p,
            face_index: usize::MAX,
            barycentric: [0.0; 3],
        };
        for f in 0..mesh.face_count() {
            let [a, b, c] = mesh.face_points(f);
            let (cp, bary) = closest_point_on_triangle(p, a, b, c);
            let d_sq = (p - cp).norm_squared();
            if d_sq < best_sq {
                best_sq = d_sq;
                best = SurfaceHit {
                    distance: d_sq.sqrt(),
                    closest_point: cp,
                    face_index: f,
                    barycentric: bary,
                };
            }
        }
        best
    }

    fn single_triangle() -> TriMesh {
        TriMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn perpendicular_foot_in_interior() {
        let mesh = single_triangle();
        let hit = point_to_surface(Point3::new(0.2, 0.2, 0.5), &mesh).unwrap();
        assert!((hit.distance - 0.5).abs() < 1e-12);
        assert!((hit.closest_point - Point3::new(0.2, 0.2, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn closest_at_vertex() {
        let mesh = single_triangle();
        let hit = point_to_surface(Point3::new(2.0, 0.0, 0.0), &mesh).unwrap();
        assert!((hit.distance - 1.0).abs() < 1e-12);
        assert!((hit.closest_point - Point3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
        assert_eq!(hit.barycentric, [0.0, 1.0, 0.0]);
    }

    #[test]
    fn barycentric_reconstructs_closest_point() {
        let sphere = unit_icosphere(2);
        let bvh = Bvh::build(&sphere).unwrap();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        for _ in 0..200 {
            let p = Point3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let hit = bvh.closest(p);
            let [a, b, c] = sphere.face_points(hit.face_index);
            let rebuilt = a.coords * hit.barycentric[0]
                + b.coords * hit.barycentric[1]
                + c.coords * hit.barycentric[2];
            assert!((rebuilt - hit.closest_point.coords).norm() < 1e-9);
            let sum: f64 = hit.barycentric.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(hit.barycentric.iter().all(|&w| w >= -1e-12));
        }
    }

    #[test]
    fn bvh_matches_exhaustive_on_icosphere() {
        let sphere = unit_icosphere(2);
        let bvh = Bvh::build(&sphere).unwrap();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let p = Point3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let fast = bvh.closest(p);
            let slow = exhaustive_closest(p, &sphere);
            assert!((fast.distance - slow.distance).abs() < 1e-9);
        }
    }

    #[test]
    fn mesh_vertices_are_on_the_surface() {
        let sphere = unit_icosphere(1);
        let bvh = Bvh::build(&sphere).unwrap();
        for v in &sphere.vertices {
            assert!(bvh.closest(*v).distance < 1e-9);
        }
    }

    #[test]
    fn raycast_hits_sphere_from_outside() {
        let sphere = unit_icosphere(3);
        let bvh = Bvh::build(&sphere).unwrap();
        let hit = bvh
            .raycast(Point3::new(0.0, 0.0, 5.0), Vector3::new(0.0, 0.0, -1.0))
            .unwrap();
        // Enters near the north pole; the faceted surface sits slightly
        // inside the unit sphere.
        assert!((hit.t - 4.0).abs() < 0.01);
        assert!(bvh
            .raycast(Point3::new(0.0, 0.0, 5.0), Vector3::new(0.0, 0.0, 1.0))
            .is_none());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn bvh_equals_exhaustive_on_random_meshes(seed in 0u64..1000) {
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            let nv = rng.random_range(3..40usize);
            let vertices: Vec<Point3<f64>> = (0..nv)
                .map(|_| Point3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ))
                .collect();
            let nf = rng.random_range(1..60usize);
            let mut faces = Vec::new();
            for _ in 0..nf {
                let f = [
                    rng.random_range(0..nv) as u32,
                    rng.random_range(0..nv) as u32,
                    rng.random_range(0..nv) as u32,
                ];
                faces.push(f);
            }
            let mut mesh = TriMesh::new(vertices, faces).unwrap();
            mesh.drop_degenerate_faces();
            prop_assume!(!mesh.faces.is_empty());
            let bvh = Bvh::build(&mesh).unwrap();
            for _ in 0..20 {
                let p = Point3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                );
                let fast = bvh.closest(p);
                let slow = exhaustive_closest(p, &mesh);
                prop_assert!((fast.distance - slow.distance).abs() < 1e-9);
            }
        }
    }
}
