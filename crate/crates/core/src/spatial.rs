//! Static kd-tree for exact nearest-neighbour queries.
//!
//! Ties in distance are always resolved toward the smaller point id, so
//! results are identical to a brute-force scan that keeps the first minimum.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Vector3;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

const LEAF_SIZE: usize = 12;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: u32, end: u32 },
    Split { dim: u8, value: f64, left: u32, right: u32 },
}

/// Immutable nearest-neighbour index over a fixed set of points.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    nodes: Vec<Node>,
    /// Point ids in leaf order.
    ids: Vec<u32>,
    /// Positions in leaf order.
    pts: Vec<Vector3<f64>>,
    /// Positions by original id.
    by_id: Vec<Vector3<f64>>,
}

/// A neighbour hit: original point id and squared distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: usize,
    pub dist_sq: f64,
}

impl Neighbor {
    pub fn dist(&self) -> f64 {
        self.dist_sq.sqrt()
    }
}

impl Eq for Neighbor {}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist_sq
            .total_cmp(&other.dist_sq)
            .then(self.id.cmp(&other.id))
    }
}

impl SpatialIndex {
    pub fn build(cloud: &PointCloud) -> Result<Self> {
        Self::from_positions(&cloud.position_vec())
    }

    pub fn from_positions(points: &[Vector3<f64>]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        assert!(points.len() < u32::MAX as usize, "too many points for index");
        let mut ids: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * points.len() / LEAF_SIZE + 1);
        build_node(points, &mut ids, 0, &mut nodes);
        let pts = ids.iter().map(|&i| points[i as usize]).collect();
        Ok(Self {
            nodes,
            ids,
            pts,
            by_id: points.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Position of point `id` as given at build time.
    pub fn point(&self, id: usize) -> &Vector3<f64> {
        &self.by_id[id]
    }

    /// Closest indexed point to `query`.
    pub fn nearest(&self, query: &Vector3<f64>) -> Neighbor {
        let mut best = Neighbor {
            id: usize::MAX,
            dist_sq: f64::INFINITY,
        };
        self.nearest_rec(0, query, &mut best);
        best
    }

    fn nearest_rec(&self, node: usize, q: &Vector3<f64>, best: &mut Neighbor) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for slot in start as usize..end as usize {
                    let cand = Neighbor {
                        id: self.ids[slot] as usize,
                        dist_sq: (self.pts[slot] - q).norm_squared(),
                    };
                    if cand < *best {
                        *best = cand;
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[dim as usize] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.nearest_rec(near as usize, q, best);
                if diff * diff <= best.dist_sq {
                    self.nearest_rec(far as usize, q, best);
                }
            }
        }
    }

    /// The `k` closest points sorted by (distance, id). Returns fewer than
    /// `k` only when the index holds fewer points.
    pub fn knn(&self, query: &Vector3<f64>, k: usize) -> Vec<Neighbor> {
        if k == 0 {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(0, query, k, &mut heap);
        heap.into_sorted_vec()
    }

    fn knn_rec(&self, node: usize, q: &Vector3<f64>, k: usize, heap: &mut BinaryHeap<Neighbor>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for slot in start as usize..end as usize {
                    let cand = Neighbor {
                        id: self.ids[slot] as usize,
                        dist_sq: (self.pts[slot] - q).norm_squared(),
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[dim as usize] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_rec(near as usize, q, k, heap);
                if heap.len() < k || diff * diff <= heap.peek().unwrap().dist_sq {
                    self.knn_rec(far as usize, q, k, heap);
                }
            }
        }
    }
}

/// Free-function form of [`SpatialIndex::nearest`]: `(point id, distance)`.
pub fn nearest(index: &SpatialIndex, query: &Vector3<f64>) -> (usize, f64) {
    let n = index.nearest(query);
    (n.id, n.dist())
}

fn build_node(points: &[Vector3<f64>], ids: &mut [u32], offset: usize, nodes: &mut Vec<Node>) -> u32 {
    let me = nodes.len() as u32;
    if ids.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: offset as u32,
            end: (offset + ids.len()) as u32,
        });
        return me;
    }
    let (lo, hi) = ids.iter().fold(
        (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY)),
        |(lo, hi), &i| {
            let p = &points[i as usize];
            (lo.inf(p), hi.sup(p))
        },
    );
    let dim = (hi - lo).imax();
    if hi[dim] == lo[dim] {
        // All points coincide.
        nodes.push(Node::Leaf {
            start: offset as u32,
            end: (offset + ids.len()) as u32,
        });
        return me;
    }
    let mid = ids.len() / 2;
    ids.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][dim].total_cmp(&points[b as usize][dim])
    });
    let value = points[ids[mid] as usize][dim];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    let (left_ids, right_ids) = ids.split_at_mut(mid);
    let left = build_node(points, left_ids, offset, nodes);
    let right = build_node(points, right_ids, offset + mid, nodes);
    nodes[me as usize] = Node::Split {
        dim: dim as u8,
        value,
        left,
        right,
    };
    me
}
