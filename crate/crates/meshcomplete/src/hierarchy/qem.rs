//! Quadric-error-metric edge-collapse simplification.
//!
//! Half-edge collapse with optimal point placement (midpoint fallback when
//! the quadric system is near-singular), guarded by the link condition and
//! a face-flip test. Only edges with exactly two incident faces are
//! collapsed, so boundary and non-manifold edges survive untouched.
//! Collapses are ordered by (cost, vertex pair), making the result
//! deterministic.

use super::HierarchyError;
use crate::mesh::{DistKey, TriMesh};
use nalgebra::{Matrix3, Point3, Vector3};
use std::cmp::Reverse;
use std::collections::{BinaryHeap, BTreeSet};

/// Symmetric 4x4 quadric, upper-triangular storage
/// `[a b c d; b e f g; c f h i; d g i j]`.
#[derive(Debug, Clone, Copy, Default)]
struct Quadric {
    data: [f64; 10],
}

impl Quadric {
    fn from_plane(n: Vector3<f64>, d: f64) -> Quadric {
        let (a, b, c) = (n.x, n.y, n.z);
        Quadric {
            data: [
                a * a,
                a * b,
                a * c,
                a * d,
                b * b,
                b * c,
                b * d,
                c * c,
                c * d,
                d * d,
            ],
        }
    }

    fn add(&mut self, other: &Quadric) {
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += y;
        }
    }

    fn evaluate(&self, p: Point3<f64>) -> f64 {
        let q = &self.data;
        let (x, y, z) = (p.x, p.y, p.z);
        q[0] * x * x
            + 2.0 * q[1] * x * y
            + 2.0 * q[2] * x * z
            + 2.0 * q[3] * x
            + q[4] * y * y
            + 2.0 * q[5] * y * z
            + 2.0 * q[6] * y
            + q[7] * z * z
            + 2.0 * q[8] * z
            + q[9]
    }

    /// Minimizer of the quadric, unless the 3x3 system has condition number
    /// above 1e8 (then `None`, caller falls back to the midpoint).
    fn optimal_point(&self) -> Option<Point3<f64>> {
        let q = &self.data;
        let a = Matrix3::new(q[0], q[1], q[2], q[1], q[4], q[5], q[2], q[5], q[7]);
        let eig = a.symmetric_eigenvalues();
        let max = eig.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
        let min = eig.iter().fold(f64::INFINITY, |m, &l| m.min(l.abs()));
        if !(min > 0.0) || max / min > 1e8 {
            return None;
        }
        let b = Vector3::new(-q[3], -q[6], -q[8]);
        a.lu().solve(&b).map(Point3::from)
    }
}

struct CollapseState {
    positions: Vec<Point3<f64>>,
    faces: Vec<[u32; 3]>,
    face_alive: Vec<bool>,
    vertex_alive: Vec<bool>,
    // Incident alive-face ids per vertex (kept tight during collapse).
    incident: Vec<Vec<u32>>,
    quadrics: Vec<Quadric>,
    version: Vec<u32>,
    alive_faces: usize,
}

impl CollapseState {
    fn new(mesh: &TriMesh) -> CollapseState {
        let nv = mesh.vertex_count();
        let mut incident = vec![Vec::new(); nv];
        let mut quadrics = vec![Quadric::default(); nv];
        for (fi, f) in mesh.faces.iter().enumerate() {
            let [a, b, c] = [
                mesh.vertices[f[0] as usize],
                mesh.vertices[f[1] as usize],
                mesh.vertices[f[2] as usize],
            ];
            let cross = (b - a).cross(&(c - a));
            let norm = cross.norm();
            if norm > 1e-12 {
                let n = cross / norm;
                let d = -n.dot(&a.coords);
                let q = Quadric::from_plane(n, d);
                for &v in f {
                    quadrics[v as usize].add(&q);
                }
            }
            for &v in f {
                incident[v as usize].push(fi as u32);
            }
        }
        CollapseState {
            positions: mesh.vertices.clone(),
            faces: mesh.faces.clone(),
            face_alive: vec![true; mesh.face_count()],
            vertex_alive: vec![true; nv],
            incident,
            quadrics,
            version: vec![0; nv],
            alive_faces: mesh.face_count(),
        }
    }

    fn neighbors(&self, v: u32) -> BTreeSet<u32> {
        let mut out = BTreeSet::new();
        for &fi in &self.incident[v as usize] {
            for &w in &self.faces[fi as usize] {
                if w != v {
                    out.insert(w);
                }
            }
        }
        out
    }

    /// Faces containing both endpoints (the wings of the edge).
    fn shared_faces(&self, a: u32, b: u32) -> Vec<u32> {
        self.incident[a as usize]
            .iter()
            .copied()
            .filter(|&fi| self.faces[fi as usize].contains(&b))
            .collect()
    }

    /// Candidate cost and placement for collapsing edge (a, b).
    fn candidate(&self, a: u32, b: u32) -> (f64, Point3<f64>) {
        let mut q = self.quadrics[a as usize];
        q.add(&self.quadrics[b as usize]);
        let midpoint = Point3::from(
            (self.positions[a as usize].coords + self.positions[b as usize].coords) / 2.0,
        );
        let target = q.optimal_point().unwrap_or(midpoint);
        (q.evaluate(target).max(0.0), target)
    }

    /// The link condition plus a normal-flip guard for collapsing b into a.
    fn collapse_is_safe(&self, a: u32, b: u32, target: Point3<f64>) -> bool {
        let shared = self.shared_faces(a, b);
        if shared.len() != 2 {
            return false; // boundary or non-manifold edge
        }
        // Link condition: common neighbors must be exactly the two wing
        // vertices, otherwise the collapse pinches the surface.
        let wings: BTreeSet<u32> = shared
            .iter()
            .flat_map(|&fi| self.faces[fi as usize])
            .filter(|&v| v != a && v != b)
            .collect();
        let common: BTreeSet<u32> = self
            .neighbors(a)
            .intersection(&self.neighbors(b))
            .copied()
            .collect();
        if common != wings {
            return false;
        }
        // Flip guard: surviving faces around either endpoint must not flip
        // or degenerate when the endpoint moves to the target.
        for &v in &[a, b] {
            for &fi in &self.incident[v as usize] {
                if shared.contains(&fi) {
                    continue;
                }
                let f = self.faces[fi as usize];
                let old = [
                    self.positions[f[0] as usize],
                    self.positions[f[1] as usize],
                    self.positions[f[2] as usize],
                ];
                let new: Vec<Point3<f64>> = f
                    .iter()
                    .map(|&w| if w == a || w == b { target } else { self.positions[w as usize] })
                    .collect();
                let n_old = (old[1] - old[0]).cross(&(old[2] - old[0]));
                let n_new = (new[1] - new[0]).cross(&(new[2] - new[0]));
                if n_new.norm_squared() < 1e-20 || n_old.dot(&n_new) <= 0.0 {
                    return false;
                }
            }
        }
        true
    }

    /// Collapses b into a at `target`. Returns the surviving vertex.
    fn collapse(&mut self, a: u32, b: u32, target: Point3<f64>) {
        let shared = self.shared_faces(a, b);
        for &fi in &shared {
            if self.face_alive[fi as usize] {
                self.face_alive[fi as usize] = false;
                self.alive_faces -= 1;
                for &v in &self.faces[fi as usize] {
                    self.incident[v as usize].retain(|&g| g != fi);
                }
            }
        }
        // Rewire b's remaining faces to a.
        let b_faces: Vec<u32> = self.incident[b as usize].drain(..).collect();
        for fi in b_faces {
            for slot in self.faces[fi as usize].iter_mut() {
                if *slot == b {
                    *slot = a;
                }
            }
            self.incident[a as usize].push(fi);
        }
        self.incident[a as usize].sort_unstable();
        self.incident[a as usize].dedup();
        self.positions[a as usize] = target;
        let qb = self.quadrics[b as usize];
        self.quadrics[a as usize].add(&qb);
        self.vertex_alive[b as usize] = false;
        self.version[a as usize] += 1;
        self.version[b as usize] += 1;
        // Neighbor costs change; bump their versions so stale heap entries
        // are discarded.
        for v in self.neighbors(a) {
            self.version[v as usize] += 1;
        }
    }

    fn into_mesh(self) -> TriMesh {
        let mut remap = vec![u32::MAX; self.positions.len()];
        let mut vertices = Vec::new();
        for (i, alive) in self.vertex_alive.iter().enumerate() {
            if *alive {
                remap[i] = vertices.len() as u32;
                vertices.push(self.positions[i]);
            }
        }
        let faces = self
            .faces
            .iter()
            .zip(&self.face_alive)
            .filter(|(_, alive)| **alive)
            .map(|(f, _)| [remap[f[0] as usize], remap[f[1] as usize], remap[f[2] as usize]])
            .collect();
        TriMesh {
            vertices,
            faces,
            labels: None,
        }
    }
}

type HeapEntry = Reverse<(DistKey, u32, u32, u32, u32)>;

fn push_edge(state: &CollapseState, heap: &mut BinaryHeap<HeapEntry>, a: u32, b: u32) {
    let (a, b) = (a.min(b), a.max(b));
    let (cost, _) = state.candidate(a, b);
    heap.push(Reverse((
        DistKey(cost),
        a,
        b,
        state.version[a as usize],
        state.version[b as usize],
    )));
}

/// Simplifies to at most `target_faces` (each collapse removes two faces,
/// so the result lands within one collapse of the target). Fails if the
/// guards block every remaining edge first.
pub fn qem_simplify(mesh: &TriMesh, target_faces: usize) -> Result<TriMesh, HierarchyError> {
    if target_faces < 4 {
        return Err(HierarchyError::TargetTooSmall(target_faces));
    }
    if mesh.face_count() <= target_faces {
        return Ok(mesh.clone());
    }
    let mut state = CollapseState::new(mesh);
    let mut heap: BinaryHeap<HeapEntry> = BinaryHeap::new();
    for &(a, b) in &mesh.edges() {
        push_edge(&state, &mut heap, a, b);
    }

    while state.alive_faces > target_faces {
        let Reverse((_, a, b, va, vb)) = match heap.pop() {
            Some(e) => e,
            None => {
                return Err(HierarchyError::CannotReachTarget {
                    reached: state.alive_faces,
                    target: target_faces,
                })
            }
        };
        if !state.vertex_alive[a as usize]
            || !state.vertex_alive[b as usize]
            || state.version[a as usize] != va
            || state.version[b as usize] != vb
        {
            continue;
        }
        let (_, target) = state.candidate(a, b);
        if !state.collapse_is_safe(a, b, target) {
            continue;
        }
        state.collapse(a, b, target);
        for n in state.neighbors(a) {
            push_edge(&state, &mut heap, a, n);
            // Second-ring edges around moved vertices also changed cost;
            // their version bump already invalidated old entries.
            for n2 in state.neighbors(n) {
                if n2 != a {
                    push_edge(&state, &mut heap, n, n2);
                }
            }
        }
    }

    let mut out = state.into_mesh();
    out.drop_degenerate_faces();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::unit_icosphere;

    #[test]
    fn already_at_target_is_unchanged() {
        let sphere = unit_icosphere(1);
        let out = qem_simplify(&sphere, sphere.face_count()).unwrap();
        assert_eq!(out, sphere);
    }

    #[test]
    fn icosphere_reaches_target_band() {
        let sphere = unit_icosphere(3); // 1280 faces
        assert_eq!(sphere.face_count(), 1280);
        let mut out = qem_simplify(&sphere, 320).unwrap();
        assert!(out.face_count() <= 320, "{}", out.face_count());
        assert!(out.face_count() > 310, "{}", out.face_count());
        assert_eq!(out.drop_degenerate_faces(), 0);
    }

    #[test]
    fn simplified_icosphere_stays_near_the_sphere() {
        let sphere = unit_icosphere(3);
        let out = qem_simplify(&sphere, 320).unwrap();
        let mut max_dev = 0.0f64;
        for v in &out.vertices {
            max_dev = max_dev.max((v.coords.norm() - 1.0).abs());
        }
        assert!(max_dev < 0.05, "max radial deviation {max_dev}");
    }

    #[test]
    fn result_is_deterministic() {
        let sphere = unit_icosphere(2);
        let a = qem_simplify(&sphere, 80).unwrap();
        let b = qem_simplify(&sphere, 80).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn output_stays_edge_manifold_and_closed() {
        let sphere = unit_icosphere(3);
        let out = qem_simplify(&sphere, 320).unwrap();
        for (_, count) in out.edge_face_counts() {
            assert_eq!(count, 2, "closed manifold collapsed wrong");
        }
    }

    #[test]
    fn tiny_target_is_rejected() {
        let sphere = unit_icosphere(1);
        assert!(matches!(
            qem_simplify(&sphere, 3),
            Err(HierarchyError::TargetTooSmall(3))
        ));
    }
}
