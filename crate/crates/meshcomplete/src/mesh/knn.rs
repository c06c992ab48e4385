//! K-nearest-neighbor queries over point sets.
//!
//! A kd-tree with deterministic construction and lowest-index tie-breaking,
//! so results are identical to an exhaustive scan ordered by
//! `(distance, index)`.

use super::{DistKey, MeshError, TriMesh};
use nalgebra::Point3;
use std::collections::BinaryHeap;

#[derive(Debug)]
enum KdNode {
    Leaf {
        start: usize,
        count: usize,
    },
    Inner {
        axis: usize,
        split: f64,
        left: usize,
        right: usize,
    },
}

/// Static kd-tree over a point set.
#[derive(Debug)]
pub struct KdTree {
    points: Vec<Point3<f64>>,
    order: Vec<u32>,
    nodes: Vec<KdNode>,
}

const KD_LEAF: usize = 8;

impl KdTree {
    pub fn build(points: &[Point3<f64>]) -> KdTree {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::new();
        if !points.is_empty() {
            let len = order.len();
            Self::build_node(points, &mut order, 0, len, &mut nodes);
        }
        KdTree {
            points: points.to_vec(),
            order,
            nodes,
        }
    }

    fn build_node(
        points: &[Point3<f64>],
        order: &mut [u32],
        start: usize,
        count: usize,
        nodes: &mut Vec<KdNode>,
    ) -> usize {
        let index = nodes.len();
        if count <= KD_LEAF {
            nodes.push(KdNode::Leaf { start, count });
            return index;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &order[start..start + count] {
            let p = points[i as usize];
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let mut axis = 0;
        for k in 1..3 {
            if hi[k] - lo[k] > hi[axis] - lo[axis] {
                axis = k;
            }
        }
        let mid = count / 2;
        order[start..start + count].select_nth_unstable_by(mid, |&a, &b| {
            points[a as usize][axis]
                .total_cmp(&points[b as usize][axis])
                .then(a.cmp(&b))
        });
        let split = points[order[start + mid] as usize][axis];
        nodes.push(KdNode::Leaf { start: 0, count: 0 }); // placeholder
        let left = Self::build_node(points, order, start, mid, nodes);
        let right = Self::build_node(points, order, start + mid, count - mid, nodes);
        nodes[index] = KdNode::Inner {
            axis,
            split,
            left,
            right,
        };
        index
    }

    /// Indices of the `k` nearest points to `query`, ordered by
    /// `(distance, index)` ascending.
    pub fn knn(&self, query: Point3<f64>, k: usize) -> Vec<u32> {
        assert!(k <= self.points.len(), "k exceeds point count");
        if k == 0 {
            return Vec::new();
        }
        // Max-heap on (distance^2, index); the root is the current worst.
        let mut heap: BinaryHeap<(DistKey, u32)> = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(0, query, k, &mut heap);
        let mut result: Vec<(DistKey, u32)> = heap.into_vec();
        result.sort_unstable();
        result.into_iter().map(|(_, i)| i).collect()
    }

    pub fn nearest(&self, query: Point3<f64>) -> u32 {
        self.knn(query, 1)[0]
    }

    fn knn_rec(
        &self,
        node: usize,
        query: Point3<f64>,
        k: usize,
        heap: &mut BinaryHeap<(DistKey, u32)>,
    ) {
        match &self.nodes[node] {
            KdNode::Leaf { start, count } => {
                for &i in &self.order[*start..*start + *count] {
                    let d_sq = (self.points[i as usize] - query).norm_squared();
                    let cand = (DistKey(d_sq), i);
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            KdNode::Inner {
                axis,
                split,
                left,
                right,
            } => {
                let delta = query[*axis] - split;
                let (near, far) = if delta <= 0.0 {
                    (*left, *right)
                } else {
                    (*right, *left)
                };
                self.knn_rec(near, query, k, heap);
                // Visit the far side unless the splitting plane is strictly
                // farther than the current worst; equality must be visited to
                // honor the lowest-index tie rule.
                let worst = heap.peek().map(|&(DistKey(d), _)| d);
                if heap.len() < k || delta * delta <= worst.unwrap() {
                    self.knn_rec(far, query, k, heap);
                }
            }
        }
    }
}

/// K-nearest mesh vertices for each query point, ties broken by lower index.
pub fn knn_vertices(
    source: &TriMesh,
    queries: &[Point3<f64>],
    k: usize,
) -> Result<Vec<Vec<u32>>, MeshError> {
    knn_points(&source.vertices, queries, k)
}

/// K-nearest points in `source` for each query, ties broken by lower index.
pub fn knn_points(
    source: &[Point3<f64>],
    queries: &[Point3<f64>],
    k: usize,
) -> Result<Vec<Vec<u32>>, MeshError> {
    if k > source.len() {
        return Err(MeshError::KnnTooLarge {
            k,
            vertex_count: source.len(),
        });
    }
    let tree = KdTree::build(source);
    Ok(queries.iter().map(|&q| tree.knn(q, k)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn exhaustive_knn(points: &[Point3<f64>], query: Point3<f64>, k: usize) -> Vec<u32> {
        let mut order: Vec<(f64, u32)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| ((p - query).norm_squared(), i as u32))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        order.into_iter().take(k).map(|(_, i)| i).collect()
    }

    #[test]
    fn query_at_existing_vertex_returns_it() {
        let pts = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ];
        let out = knn_points(&pts, &[pts[1]], 1).unwrap();
        assert_eq!(out[0], vec![1]);
    }

    #[test]
    fn k_equals_count_returns_all_sorted_by_distance() {
        let pts = vec![
            Point3::new(3.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(2.0, 0.0, 0.0),
        ];
        let out = knn_points(&pts, &[Point3::origin()], 3).unwrap();
        assert_eq!(out[0], vec![1, 2, 0]);
    }

    #[test]
    fn k_too_large_is_an_error() {
        let pts = vec![Point3::origin()];
        assert!(knn_points(&pts, &[Point3::origin()], 2).is_err());
    }

    #[test]
    fn matches_exhaustive_scan_on_random_clouds() {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(3);
        let points: Vec<Point3<f64>> = (0..500)
            .map(|_| {
                Point3::new(
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                )
            })
            .collect();
        let tree = KdTree::build(&points);
        for _ in 0..100 {
            let q = Point3::new(
                rng.random_range(-12.0..12.0),
                rng.random_range(-12.0..12.0),
                rng.random_range(-12.0..12.0),
            );
            let k = rng.random_range(1..20usize);
            assert_eq!(tree.knn(q, k), exhaustive_knn(&points, q, k));
        }
    }

    #[test]
    fn ties_break_to_lower_index() {
        // Four points at identical distance from the origin.
        let pts = vec![
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(-1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(0.0, -1.0, 0.0),
        ];
        let out = knn_points(&pts, &[Point3::origin()], 2).unwrap();
        assert_eq!(out[0], vec![0, 1]);
    }
}
