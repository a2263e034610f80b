//! Curve skeleton of the wood points by geodesic level sets.
//!
//! The skeleton is built in three passes: a symmetric k-nearest-neighbour
//! graph over the wood points (bridged until connected), shortest-path
//! distances from the lowest point, and per-level connected clusters whose
//! centroids become the skeleton nodes. Each node hangs off the cluster that
//! holds the shortest-path predecessors of its members.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::spatial::SpatialIndex;
use crate::transform::RigidTransform;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkeletonParams {
    /// Neighbours per point in the adjacency graph.
    pub adjacency_k: usize,
    /// Width of a geodesic level in meters.
    pub bin_width: f64,
    /// Clusters smaller than this are folded into their parent node.
    pub min_cluster_points: usize,
}

impl Default for SkeletonParams {
    fn default() -> Self {
        Self {
            adjacency_k: 8,
            bin_width: 0.2,
            min_cluster_points: 3,
        }
    }
}

impl SkeletonParams {
    pub fn validate(&self) -> Result<()> {
        if self.adjacency_k < 3 {
            return Err(Error::param("adjacency_k", "must be at least 3"));
        }
        if !(self.bin_width > 0.0 && self.bin_width.is_finite()) {
            return Err(Error::param("bin_width", "must be positive"));
        }
        if self.min_cluster_points == 0 {
            return Err(Error::param("min_cluster_points", "must be at least 1"));
        }
        Ok(())
    }
}

/// Weighted undirected graph over point ids. Neighbour lists are sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyGraph {
    neighbors: Vec<Vec<(usize, f64)>>,
    /// Edges added to join otherwise disconnected components.
    pub bridges: Vec<(usize, usize)>,
}

impl AdjacencyGraph {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn neighbors(&self, id: usize) -> &[(usize, f64)] {
        &self.neighbors[id]
    }

    /// Each undirected edge once, as `(a, b, weight)` with `a < b`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(a, list)| {
                list.iter()
                    .filter(move |(b, _)| a < *b)
                    .map(move |&(b, w)| (a, b, w))
            })
            .collect()
    }

    fn from_edge_list(n: usize, mut edges: Vec<(usize, usize)>, pts: &[Vector3<f64>]) -> Self {
        edges.sort_unstable();
        edges.dedup();
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in &edges {
            let w = (pts[a] - pts[b]).norm();
            neighbors[a].push((b, w));
            neighbors[b].push((a, w));
        }
        for list in &mut neighbors {
            list.sort_by_key(|&(id, _)| id);
        }
        Self {
            neighbors,
            bridges: Vec::new(),
        }
    }

    fn add_edge(&mut self, a: usize, b: usize, w: f64) {
        for (from, to) in [(a, b), (b, a)] {
            let list = &mut self.neighbors[from];
            let at = list.partition_point(|&(id, _)| id < to);
            list.insert(at, (to, w));
        }
    }

    /// Component label per point; labels are numbered by smallest member id.
    pub fn components(&self) -> Vec<usize> {
        let n = self.len();
        let mut label = vec![usize::MAX; n];
        let mut next = 0;
        let mut stack = Vec::new();
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            label[start] = next;
            stack.push(start);
            while let Some(u) = stack.pop() {
                for &(v, _) in &self.neighbors[u] {
                    if label[v] == usize::MAX {
                        label[v] = next;
                        stack.push(v);
                    }
                }
            }
            next += 1;
        }
        label
    }
}

/// Symmetric kNN graph with Euclidean weights, bridged until connected.
///
/// Disconnected components are joined one at a time by the closest point
/// pair between the component holding point 0 and the rest.
pub fn build_adjacency(wood: &PointCloud, params: &SkeletonParams) -> Result<AdjacencyGraph> {
    let pts = wood.position_vec();
    adjacency_from_positions(&pts, params.adjacency_k)
}

pub(crate) fn adjacency_from_positions(pts: &[Vector3<f64>], k: usize) -> Result<AdjacencyGraph> {
    let n = pts.len();
    if n < 2 {
        return Err(Error::DegenerateGeometry(format!(
            "need at least 2 wood points for a skeleton, got {n}"
        )));
    }
    let index = SpatialIndex::from_positions(pts)?;
    let edges: Vec<(usize, usize)> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            index
                .knn(&pts[i], k + 1)
                .into_iter()
                .filter(move |nb| nb.id != i)
                .take(k)
                .map(move |nb| (i.min(nb.id), i.max(nb.id)))
        })
        .collect();
    let mut graph = AdjacencyGraph::from_edge_list(n, edges, pts);
    bridge_components(&mut graph, pts)?;
    Ok(graph)
}

fn bridge_components(graph: &mut AdjacencyGraph, pts: &[Vector3<f64>]) -> Result<()> {
    let mut label = graph.components();
    let main = label[0];
    loop {
        let (inside, outside): (Vec<usize>, Vec<usize>) =
            (0..pts.len()).partition(|&i| label[i] == main);
        if outside.is_empty() {
            return Ok(());
        }
        let out_pts: Vec<Vector3<f64>> = outside.iter().map(|&i| pts[i]).collect();
        let index = SpatialIndex::from_positions(&out_pts)?;
        let (d2, a, b) = inside
            .par_iter()
            .map(|&i| {
                let nb = index.nearest(&pts[i]);
                (nb.dist_sq, i, outside[nb.id])
            })
            .min_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))))
            .expect("main component is nonempty");
        graph.add_edge(a, b, d2.sqrt());
        graph.bridges.push((a.min(b), a.max(b)));
        let absorbed = label[b];
        for l in label.iter_mut() {
            if *l == absorbed {
                *l = main;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonNode {
    pub position: Vector3<f64>,
    /// Geodesic level of the cluster this node was built from.
    pub bin_index: usize,
    pub member_count: usize,
}

/// Rooted tree of skeleton nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonGraph {
    nodes: Vec<SkeletonNode>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    root: usize,
}

impl SkeletonGraph {
    /// Builds a rooted tree from undirected edges, rejecting cycles and
    /// disconnected input.
    pub fn from_edges(
        nodes: Vec<SkeletonNode>,
        edges: &[(usize, usize)],
        root: usize,
    ) -> Result<Self> {
        let n = nodes.len();
        if root >= n {
            return Err(Error::DegenerateGeometry("root out of range".into()));
        }
        if edges.len() + 1 != n {
            return Err(Error::DegenerateGeometry(format!(
                "a tree on {n} nodes needs {} edges, got {}",
                n - 1,
                edges.len()
            )));
        }
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n || a == b {
                return Err(Error::DegenerateGeometry(format!("bad edge ({a}, {b})")));
            }
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        let mut parent = vec![None; n];
        let mut seen = vec![false; n];
        let mut children = vec![Vec::new(); n];
        let mut queue = std::collections::VecDeque::from([root]);
        seen[root] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    parent[v] = Some(u);
                    children[u].push(v);
                    queue.push_back(v);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::DegenerateGeometry("skeleton is disconnected".into()));
        }
        Ok(Self {
            nodes,
            parent,
            children,
            root,
        })
    }

    fn from_parents(nodes: Vec<SkeletonNode>, parent: Vec<Option<usize>>, root: usize) -> Self {
        let mut children = vec![Vec::new(); nodes.len()];
        for (id, p) in parent.iter().enumerate() {
            if let Some(p) = p {
                children[*p].push(id);
            }
        }
        Self {
            nodes,
            parent,
            children,
            root,
        }
    }

    pub fn nodes(&self) -> &[SkeletonNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root_id(&self) -> usize {
        self.root
    }

    pub fn parent(&self, id: usize) -> Option<usize> {
        self.parent[id]
    }

    pub fn children(&self, id: usize) -> &[usize] {
        &self.children[id]
    }

    pub fn degree(&self, id: usize) -> usize {
        self.children[id].len() + usize::from(self.parent[id].is_some())
    }

    /// Undirected edges as `(parent, child)`, ordered by child id.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.parent
            .iter()
            .enumerate()
            .filter_map(|(c, p)| p.map(|p| (p, c)))
            .collect()
    }

    /// Node ids from the root down to `id`, inclusive.
    pub fn path_from_root(&self, id: usize) -> Vec<usize> {
        let mut path = vec![id];
        let mut cur = id;
        while let Some(p) = self.parent[cur] {
            path.push(p);
            cur = p;
        }
        path.reverse();
        path
    }

    pub fn transformed(&self, t: &RigidTransform) -> SkeletonGraph {
        let mut out = self.clone();
        for n in &mut out.nodes {
            n.position = t.apply(&n.position);
        }
        out
    }
}

#[derive(Clone, Copy, PartialEq)]
struct HeapItem {
    dist: f64,
    id: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed for a min-heap.
        other
            .dist
            .total_cmp(&self.dist)
            .then(other.id.cmp(&self.id))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Geodesic distance and predecessor of every point from `root`.
pub(crate) fn shortest_paths(graph: &AdjacencyGraph, root: usize) -> (Vec<f64>, Vec<Option<usize>>) {
    let n = graph.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut pred = vec![None; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[root] = 0.0;
    heap.push(HeapItem { dist: 0.0, id: root });
    while let Some(HeapItem { dist: d, id: u }) = heap.pop() {
        if done[u] {
            continue;
        }
        done[u] = true;
        for &(v, w) in graph.neighbors(u) {
            let nd = d + w;
            // Equal distances keep the smaller predecessor id.
            let better = nd < dist[v] || (nd == dist[v] && pred[v].is_some_and(|p| u < p));
            if !done[v] && better {
                dist[v] = nd;
                pred[v] = Some(u);
                heap.push(HeapItem { dist: nd, id: v });
            }
        }
    }
    (dist, pred)
}

/// Lowest point by z, smallest id on ties.
fn lowest_point(pts: &[Vector3<f64>]) -> usize {
    let mut best = 0;
    for (i, p) in pts.iter().enumerate().skip(1) {
        if p.z < pts[best].z {
            best = i;
        }
    }
    best
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Smaller id wins so roots are stable.
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.parent[hi] = lo;
        }
    }
}

/// Extracts the rooted skeleton of a wood cloud.
pub fn extract_skeleton(wood: &PointCloud, params: &SkeletonParams) -> Result<SkeletonGraph> {
    params.validate()?;
    let pts = wood.position_vec();
    let graph = adjacency_from_positions(&pts, params.adjacency_k)?;
    Ok(skeleton_from_graph(&pts, &graph, params))
}

pub(crate) fn skeleton_from_graph(
    pts: &[Vector3<f64>],
    graph: &AdjacencyGraph,
    params: &SkeletonParams,
) -> SkeletonGraph {
    let n = pts.len();
    let root = lowest_point(pts);
    let (geo, pred) = shortest_paths(graph, root);
    let bin: Vec<usize> = geo
        .iter()
        .map(|g| (g / params.bin_width).floor() as usize)
        .collect();

    // Connected clusters inside each level.
    let mut uf = UnionFind::new(n);
    for (a, b, _) in graph.edges() {
        if bin[a] == bin[b] {
            uf.union(a, b);
        }
    }
    // Cluster ids ordered by (level, smallest member id).
    let mut reps: Vec<usize> = (0..n).filter(|&i| uf.find(i) == i).collect();
    reps.sort_by_key(|&r| (bin[r], r));
    let mut cluster_of_rep = vec![usize::MAX; n];
    for (c, &r) in reps.iter().enumerate() {
        cluster_of_rep[r] = c;
    }
    let cluster: Vec<usize> = (0..n).map(|i| cluster_of_rep[uf.find(i)]).collect();
    let mut members = vec![Vec::new(); reps.len()];
    for i in 0..n {
        members[cluster[i]].push(i);
    }

    // Parent cluster: the one holding most out-of-cluster predecessors.
    let root_cluster = cluster[root];
    let parent_cluster: Vec<Option<usize>> = (0..reps.len())
        .map(|c| {
            if c == root_cluster {
                return None;
            }
            let mut votes: Vec<usize> = members[c]
                .iter()
                .filter_map(|&i| pred[i])
                .map(|p| cluster[p])
                .filter(|&pc| pc != c)
                .collect();
            votes.sort_unstable();
            let mut best: Option<(usize, usize)> = None;
            for chunk in votes.chunk_by(|a, b| a == b) {
                let cand = (chunk.len(), chunk[0]);
                if best.is_none_or(|(cnt, id)| cand.0 > cnt || (cand.0 == cnt && cand.1 < id)) {
                    best = Some(cand);
                }
            }
            // Every non-root cluster is entered from outside along a
            // predecessor chain that ends at the root.
            Some(best.expect("non-root cluster has an external predecessor").1)
        })
        .collect();

    // Clusters in level order; a parent always precedes its children since
    // predecessors lie on strictly lower levels.
    let mut node_of_cluster = vec![usize::MAX; reps.len()];
    let mut node_members: Vec<Vec<usize>> = Vec::new();
    let mut node_bins = Vec::new();
    let mut node_parent: Vec<Option<usize>> = Vec::new();
    for c in 0..reps.len() {
        let parent_node = parent_cluster[c].map(|pc| node_of_cluster[pc]);
        if let Some(pn) = parent_node {
            debug_assert_ne!(pn, usize::MAX);
            if members[c].len() < params.min_cluster_points {
                node_of_cluster[c] = pn;
                node_members[pn].extend_from_slice(&members[c]);
                continue;
            }
        }
        let id = node_members.len();
        node_of_cluster[c] = id;
        node_members.push(members[c].clone());
        node_bins.push(bin[reps[c]]);
        node_parent.push(parent_node);
    }

    let nodes: Vec<SkeletonNode> = node_members
        .iter()
        .zip(&node_bins)
        .map(|(m, &bin_index)| SkeletonNode {
            position: m.iter().map(|&i| pts[i]).sum::<Vector3<f64>>() / m.len() as f64,
            bin_index,
            member_count: m.len(),
        })
        .collect();
    SkeletonGraph::from_parents(nodes, node_parent, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::Point;

    fn cloud(pts: &[Vector3<f64>]) -> PointCloud {
        PointCloud::new(pts.iter().map(|p| Point::at(*p)).collect(), "").unwrap()
    }

    fn segment(a: Vector3<f64>, b: Vector3<f64>, spacing: f64, skip_first: bool) -> Vec<Vector3<f64>> {
        let n = ((b - a).norm() / spacing).round() as usize;
        (usize::from(skip_first)..=n)
            .map(|i| a + (b - a) * (i as f64 / n as f64))
            .collect()
    }

    fn y_shape() -> Vec<Vector3<f64>> {
        let split = Vector3::new(0.0, 0.0, 2.0);
        let mut pts = segment(Vector3::zeros(), split, 0.02, false);
        pts.extend(segment(split, split + Vector3::new(1.5, 0.0, 1.5), 0.02, true));
        pts.extend(segment(split, split + Vector3::new(-1.5, 0.0, 1.5), 0.02, true));
        pts
    }

    #[test]
    fn two_points_single_edge() {
        let g = build_adjacency(
            &cloud(&[Vector3::zeros(), Vector3::new(0.0, 3.0, 4.0)]),
            &SkeletonParams::default(),
        )
        .unwrap();
        assert_eq!(g.edges(), vec![(0, 1, 5.0)]);
    }

    #[test]
    fn fewer_than_two_points_rejected() {
        let err = build_adjacency(&cloud(&[Vector3::zeros()]), &SkeletonParams::default());
        assert!(matches!(err, Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn chain_with_k2_links_consecutive_points() {
        let pts: Vec<_> = (0..10).map(|i| Vector3::new(0.1 * i as f64, 0.0, 0.0)).collect();
        let g = adjacency_from_positions(&pts, 2).unwrap();
        // Each point's two nearest are its neighbours at 0.1 (or 0.1 and 0.2
        // at the ends), so the consecutive links are all present.
        for i in 0..9 {
            assert!(g.neighbors(i).iter().any(|&(j, _)| j == i + 1), "missing {i}-{}", i + 1);
        }
        for (a, b, _) in g.edges() {
            assert!(b - a <= 2, "unexpected long edge {a}-{b}");
        }
        assert!(g.bridges.is_empty());
    }

    #[test]
    fn separated_clusters_get_one_bridge() {
        let mut pts = Vec::new();
        for i in 0..5 {
            pts.push(Vector3::new(0.1 * i as f64, 0.0, 0.0));
        }
        for i in 0..5 {
            pts.push(Vector3::new(10.0 + 0.1 * i as f64, 0.0, 0.0));
        }
        let g = adjacency_from_positions(&pts, 3).unwrap();
        assert_eq!(g.bridges, vec![(4, 5)]);
        assert!(g.components().iter().all(|&c| c == 0));
        let w = g.neighbors(4).iter().find(|&&(j, _)| j == 5).unwrap().1;
        assert!((w - 9.6).abs() < 1e-12);
    }

    #[test]
    fn vertical_line_gives_path_on_the_line() {
        let pts: Vec<_> = (0..50).map(|i| Vector3::new(0.0, 0.0, 5.0 * i as f64 / 49.0)).collect();
        let params = SkeletonParams {
            bin_width: 0.5,
            ..Default::default()
        };
        let s = extract_skeleton(&cloud(&pts), &params).unwrap();
        assert!((9..=11).contains(&s.len()), "{} nodes", s.len());
        for n in s.nodes() {
            assert!(n.position.x.abs() < 1e-12 && n.position.y.abs() < 1e-12);
        }
        assert!((0..s.len()).all(|i| s.children(i).len() <= 1));
        // Centroid of the first level: points with z < 0.5.
        let first: Vec<f64> = pts.iter().map(|p| p.z).filter(|&z| z < 0.5).collect();
        let mean = first.iter().sum::<f64>() / first.len() as f64;
        assert!((s.nodes()[0].position.z - mean).abs() < 1e-12);
    }

    #[test]
    fn y_shape_has_one_fork() {
        let s = extract_skeleton(&cloud(&y_shape()), &SkeletonParams::default()).unwrap();
        let forks: Vec<usize> = (0..s.len()).filter(|&i| s.degree(i) == 3).collect();
        assert_eq!(forks.len(), 1, "{:?}", s.nodes());
        let fork = s.nodes()[forks[0]].position;
        assert!((fork - Vector3::new(0.0, 0.0, 2.0)).norm() < 0.3, "fork at {fork}");
        assert!((0..s.len()).all(|i| s.degree(i) <= 3));
    }

    #[test]
    fn single_level_gives_single_node() {
        let pts: Vec<_> = (0..6).map(|i| Vector3::new(0.01 * i as f64, 0.0, 0.0)).collect();
        let s = extract_skeleton(&cloud(&pts), &SkeletonParams::default()).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.nodes()[0].member_count, 6);
        assert!(s.edges().is_empty());
    }

    #[test]
    fn tree_invariants_on_y_shape() {
        let pts = y_shape();
        let c = cloud(&pts);
        let s = extract_skeleton(&c, &SkeletonParams::default()).unwrap();
        assert_eq!(s.edges().len(), s.len() - 1);
        assert_eq!(s.nodes()[s.root_id()].bin_index, 0);
        let bounds = c.bounds().unwrap();
        for (i, n) in s.nodes().iter().enumerate() {
            assert!(bounds.contains(&n.position, 1e-12));
            assert!(n.member_count >= 1);
            if let Some(p) = s.parent(i) {
                assert!(s.nodes()[p].bin_index <= n.bin_index);
            }
        }
        assert_eq!(s, extract_skeleton(&c, &SkeletonParams::default()).unwrap());
    }

    #[test]
    fn from_edges_rejects_cycles_and_gaps() {
        let node = |z: f64| SkeletonNode {
            position: Vector3::new(0.0, 0.0, z),
            bin_index: 0,
            member_count: 1,
        };
        let nodes = vec![node(0.0), node(1.0), node(2.0)];
        assert!(SkeletonGraph::from_edges(nodes.clone(), &[(0, 1)], 0).is_err());
        assert!(SkeletonGraph::from_edges(nodes.clone(), &[(0, 1), (0, 1)], 0).is_err());
        let s = SkeletonGraph::from_edges(nodes, &[(1, 0), (2, 1)], 0).unwrap();
        assert_eq!(s.path_from_root(2), vec![0, 1, 2]);
    }

    #[test]
    fn params_validated() {
        let bad = SkeletonParams {
            adjacency_k: 2,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SkeletonParams {
            bin_width: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
