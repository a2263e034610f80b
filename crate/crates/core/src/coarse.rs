//! Coarse alignment from a pair of congruent key-point tetrahedra.
//!
//! Both key point sets are turned into tetrahedra (4-subsets), sorted by
//! volume, largest first. Pairs are scanned in that order and must pass, in
//! turn, a volume-ratio gate, an edge-by-edge length gate on the six sorted
//! edges, and finally a rigid fit over all 24 vertex pairings whose worst
//! vertex distance must stay under `delta`. The first pair to pass fixes the
//! coarse transform.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{DMatrix, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keypoints::KeyPointSet;
use crate::rigid::fit_rigid;
use crate::transform::RigidTransform;

/// All 24 orderings of four vertices, lexicographic.
pub const PERMUTATIONS_4: [[usize; 4]; 24] = [
    [0, 1, 2, 3], [0, 1, 3, 2], [0, 2, 1, 3], [0, 2, 3, 1], [0, 3, 1, 2], [0, 3, 2, 1],
    [1, 0, 2, 3], [1, 0, 3, 2], [1, 2, 0, 3], [1, 2, 3, 0], [1, 3, 0, 2], [1, 3, 2, 0],
    [2, 0, 1, 3], [2, 0, 3, 1], [2, 1, 0, 3], [2, 1, 3, 0], [2, 3, 0, 1], [2, 3, 1, 0],
    [3, 0, 1, 2], [3, 0, 2, 1], [3, 1, 0, 2], [3, 1, 2, 0], [3, 2, 0, 1], [3, 2, 1, 0],
];

/// How the pair scan stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchStrategy {
    /// Accept the first pair, in descending-volume order, that passes every gate.
    #[default]
    FirstAccepted,
    /// Scan every pair and keep the passing one with the smallest RMS residual.
    BestResidual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoarseParams {
    /// Relative edge-length tolerance.
    pub epsilon: f64,
    /// Volume-ratio tolerance.
    pub beta: f64,
    /// Largest allowed vertex distance after the rigid fit, meters.
    pub delta: f64,
    /// Tetrahedra at or below this volume (m³) are discarded.
    pub min_volume: f64,
    /// Largest tetrahedra kept per key point set.
    pub max_candidates: usize,
    pub strategy: MatchStrategy,
}

impl Default for CoarseParams {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            beta: 0.1,
            delta: 0.1,
            min_volume: 1e-4,
            max_candidates: 5000,
            strategy: MatchStrategy::FirstAccepted,
        }
    }
}

impl CoarseParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("epsilon", self.epsilon), ("beta", self.beta), ("delta", self.delta)] {
            if !(v > 0.0 && v <= 0.1) {
                return Err(Error::param(name, format!("{v} is outside (0, 0.1]")));
            }
        }
        if !(self.min_volume >= 0.0 && self.min_volume.is_finite()) {
            return Err(Error::param("min_volume", "must be a nonnegative number"));
        }
        if self.max_candidates == 0 {
            return Err(Error::param("max_candidates", "must be at least 1"));
        }
        Ok(())
    }
}

/// Euclidean distance matrix of the key points.
pub fn pairwise_distances(kps: &KeyPointSet) -> Result<DMatrix<f64>> {
    kps.ensure_enough()?;
    Ok(distance_matrix(&kps.positions()))
}

fn distance_matrix(pts: &[Vector3<f64>]) -> DMatrix<f64> {
    let n = pts.len();
    DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { (pts[i] - pts[j]).norm() })
}

/// `|d1 - d2| / max(d1, d2) < epsilon`.
pub fn edges_match(d1: f64, d2: f64, epsilon: f64) -> Result<bool> {
    if !(d1 > 0.0 && d2 > 0.0) {
        return Err(Error::param("distance", format!("edge lengths must be positive, got {d1}, {d2}")));
    }
    Ok(edge_gate(d1, d2, epsilon))
}

#[inline]
fn edge_gate(d1: f64, d2: f64, epsilon: f64) -> bool {
    (d1 - d2).abs() / d1.max(d2) < epsilon
}

/// `|min/max - 1| < beta`, symmetric in its arguments.
pub fn volumes_match(v1: f64, v2: f64, beta: f64) -> Result<bool> {
    if !(v1 > 0.0 && v2 > 0.0) {
        return Err(Error::param("volume", format!("volumes must be positive, got {v1}, {v2}")));
    }
    Ok(volume_gate(v1, v2, beta))
}

#[inline]
fn volume_gate(v1: f64, v2: f64, beta: f64) -> bool {
    (v1.min(v2) / v1.max(v2) - 1.0).abs() < beta
}

/// Unsigned volume of a tetrahedron.
pub fn tetra_volume(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>, d: &Vector3<f64>) -> f64 {
    (b - a).dot(&(c - a).cross(&(d - a))).abs() / 6.0
}

/// Index pairs of the six edges of a tetrahedron with vertices 0..4.
const EDGES: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TetraCandidate {
    /// Key point indices, ascending.
    pub vertex_ids: [usize; 4],
    pub vertices: [Vector3<f64>; 4],
    /// Edge lengths, longest first.
    pub edge_lengths: [f64; 6],
    pub volume: f64,
}

impl TetraCandidate {
    pub fn new(vertex_ids: [usize; 4], vertices: [Vector3<f64>; 4]) -> Self {
        let mut edge_lengths = EDGES.map(|(i, j)| (vertices[i] - vertices[j]).norm());
        edge_lengths.sort_by(|a, b| b.total_cmp(a));
        let volume = tetra_volume(&vertices[0], &vertices[1], &vertices[2], &vertices[3]);
        Self {
            vertex_ids,
            vertices,
            edge_lengths,
            volume,
        }
    }

    /// Descending volume, then ascending vertex ids.
    fn scan_order(&self, other: &Self) -> Ordering {
        other
            .volume
            .total_cmp(&self.volume)
            .then(self.vertex_ids.cmp(&other.vertex_ids))
    }
}

/// Heap entry keyed so that the heap top is the candidate to evict.
struct Ranked {
    volume: f64,
    ids: [usize; 4],
}

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked {}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        // Worse = smaller volume, then larger ids; worse sorts greater.
        other
            .volume
            .total_cmp(&self.volume)
            .then(self.ids.cmp(&other.ids))
    }
}

/// All tetrahedra above `min_volume`, largest first, capped at `max_candidates`.
pub fn enumerate_tetrahedra(kps: &KeyPointSet, params: &CoarseParams) -> Result<Vec<TetraCandidate>> {
    kps.ensure_enough()?;
    let pts = kps.positions();
    let n = pts.len();
    enumerate_filtered(&pts, &vec![true; n * n], params)
}

/// Enumeration restricted to tetrahedra whose six edges are all flagged in
/// `edge_ok` (row-major `n × n`).
fn enumerate_filtered(
    pts: &[Vector3<f64>],
    edge_ok: &[bool],
    params: &CoarseParams,
) -> Result<Vec<TetraCandidate>> {
    let n = pts.len();
    let ok = |i: usize, j: usize| edge_ok[i * n + j];
    let cap = params.max_candidates;
    let mut heap: BinaryHeap<Ranked> = BinaryHeap::with_capacity(cap + 1);
    let mut any_valid = false;
    for i in 0..n {
        for j in i + 1..n {
            if !ok(i, j) {
                continue;
            }
            for k in j + 1..n {
                if !(ok(i, k) && ok(j, k)) {
                    continue;
                }
                for l in k + 1..n {
                    if !(ok(i, l) && ok(j, l) && ok(k, l)) {
                        continue;
                    }
                    let volume = tetra_volume(&pts[i], &pts[j], &pts[k], &pts[l]);
                    if volume <= params.min_volume {
                        continue;
                    }
                    any_valid = true;
                    let entry = Ranked {
                        volume,
                        ids: [i, j, k, l],
                    };
                    if heap.len() < cap {
                        heap.push(entry);
                    } else if entry < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(entry);
                    }
                }
            }
        }
    }
    if !any_valid {
        return Err(Error::DegenerateGeometry(format!(
            "no tetrahedron above {} m³ among {n} key points",
            params.min_volume
        )));
    }
    let mut out: Vec<TetraCandidate> = heap
        .into_iter()
        .map(|r| TetraCandidate::new(r.ids, r.ids.map(|i| pts[i])))
        .collect();
    out.sort_by(|a, b| a.scan_order(b));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TetraMatch {
    pub candidate_a: TetraCandidate,
    pub candidate_b: TetraCandidate,
    /// Vertex `k` of `candidate_a` corresponds to vertex
    /// `vertex_correspondence[k]` of `candidate_b`.
    pub vertex_correspondence: [usize; 4],
    /// Maps the A tetrahedron onto the B tetrahedron.
    pub transform: RigidTransform,
    /// Largest vertex distance after the fit (the gated quantity), meters.
    pub residual: f64,
    /// RMS vertex distance after the fit, meters.
    pub rms_residual: f64,
}

impl TetraMatch {
    /// Matched key point index pairs `(index in A, index in B)`.
    pub fn keypoint_pairs(&self) -> [(usize, usize); 4] {
        std::array::from_fn(|k| {
            (
                self.candidate_a.vertex_ids[k],
                self.candidate_b.vertex_ids[self.vertex_correspondence[k]],
            )
        })
    }
}

/// True when the pair clears the volume gate and all six sorted edges match.
pub fn passes_shape_gates(a: &TetraCandidate, b: &TetraCandidate, params: &CoarseParams) -> bool {
    volume_gate(a.volume, b.volume, params.beta)
        && a
            .edge_lengths
            .iter()
            .zip(&b.edge_lengths)
            .all(|(&x, &y)| edge_gate(x, y, params.epsilon))
}

/// Best proper fit of `a` onto `b` over all vertex pairings, by RMS.
/// Returns the pairing, fit, and its worst vertex distance.
pub fn best_vertex_pairing(a: &TetraCandidate, b: &TetraCandidate) -> Option<([usize; 4], crate::rigid::RigidFit)> {
    let mut best: Option<([usize; 4], crate::rigid::RigidFit)> = None;
    for perm in PERMUTATIONS_4 {
        let target = perm.map(|p| b.vertices[p]);
        let Ok(fit) = fit_rigid(&a.vertices, &target) else {
            continue;
        };
        if best.as_ref().is_none_or(|(_, f)| fit.rms < f.rms) {
            best = Some((perm, fit));
        }
    }
    best
}

fn try_pair(a: &TetraCandidate, b: &TetraCandidate, params: &CoarseParams) -> Option<TetraMatch> {
    if !passes_shape_gates(a, b, params) {
        return None;
    }
    let (perm, fit) = best_vertex_pairing(a, b)?;
    (fit.max < params.delta).then(|| TetraMatch {
        candidate_a: a.clone(),
        candidate_b: b.clone(),
        vertex_correspondence: perm,
        transform: fit.transform,
        residual: fit.max,
        rms_residual: fit.rms,
    })
}

/// Candidates of a volume-descending list that can pass the volume gate
/// against `volume`.
fn volume_window<'a>(list: &'a [TetraCandidate], volume: f64, beta: f64) -> &'a [TetraCandidate] {
    // min/max > 1 - beta  <=>  other in (v (1 - beta), v / (1 - beta)).
    let hi = volume / (1.0 - beta);
    let lo = volume * (1.0 - beta);
    let start = list.partition_point(|c| c.volume >= hi);
    let end = list.partition_point(|c| c.volume > lo);
    &list[start..end.max(start)]
}

/// Scans candidate pairs (outer list A, inner list B, both largest first).
pub fn match_tetrahedra(
    list_a: &[TetraCandidate],
    list_b: &[TetraCandidate],
    params: &CoarseParams,
) -> Result<TetraMatch> {
    params.validate()?;
    if list_a.is_empty() || list_b.is_empty() {
        return Err(Error::NoMatch);
    }
    let scan_row = |a: &TetraCandidate| -> Vec<TetraMatch> {
        let window = volume_window(list_b, a.volume, params.beta);
        match params.strategy {
            MatchStrategy::FirstAccepted => window
                .iter()
                .find_map(|b| try_pair(a, b, params))
                .into_iter()
                .collect(),
            MatchStrategy::BestResidual => window
                .iter()
                .filter_map(|b| try_pair(a, b, params))
                .min_by(|x, y| x.rms_residual.total_cmp(&y.rms_residual))
                .into_iter()
                .collect(),
        }
    };
    let found = match params.strategy {
        // Parallel over rows, but the first row in scan order wins.
        MatchStrategy::FirstAccepted => list_a
            .par_iter()
            .find_map_first(|a| scan_row(a).pop()),
        MatchStrategy::BestResidual => list_a
            .par_iter()
            .flat_map_iter(scan_row)
            .collect::<Vec<_>>()
            .into_iter()
            .min_by(|x, y| x.rms_residual.total_cmp(&y.rms_residual)),
    };
    found.ok_or(Error::NoMatch)
}

/// Number of candidate pairs that clear the volume and edge gates.
pub fn count_gate_pairs(list_a: &[TetraCandidate], list_b: &[TetraCandidate], params: &CoarseParams) -> usize {
    list_a
        .par_iter()
        .map(|a| {
            volume_window(list_b, a.volume, params.beta)
                .iter()
                .filter(|b| passes_shape_gates(a, b, params))
                .count()
        })
        .sum()
}

/// Flags edges of `own` that have an epsilon-compatible edge in `other`.
fn compatible_edges(own: &DMatrix<f64>, other: &DMatrix<f64>, epsilon: f64) -> Vec<bool> {
    let m = other.nrows();
    let mut other_lengths: Vec<f64> = (0..m)
        .flat_map(|i| (i + 1..m).map(move |j| (i, j)))
        .map(|(i, j)| other[(i, j)])
        .filter(|&d| d > 0.0)
        .collect();
    other_lengths.sort_by(f64::total_cmp);
    let n = own.nrows();
    let mut ok = vec![false; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = own[(i, j)];
            if d <= 0.0 {
                continue;
            }
            // Candidates lie in (d (1 - eps), d / (1 - eps)); check the
            // nearest neighbours on either side of d exactly.
            let at = other_lengths.partition_point(|&x| x < d);
            let hit = [at.checked_sub(1), Some(at)]
                .into_iter()
                .flatten()
                .filter_map(|k| other_lengths.get(k))
                .any(|&x| edge_gate(d, x, epsilon));
            ok[i * n + j] = hit;
            ok[j * n + i] = hit;
        }
    }
    ok
}

/// Diagnostics of a coarse run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CoarseStats {
    pub keypoints_a: usize,
    pub keypoints_b: usize,
    pub candidates_a: usize,
    pub candidates_b: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseResult {
    /// Maps cloud A into the frame of cloud B.
    pub transform: RigidTransform,
    pub tetra_match: TetraMatch,
    pub stats: CoarseStats,
}

/// Candidate tetrahedra of both sets after the edge-compatibility pre-filter.
pub fn filtered_candidates(
    kps_a: &KeyPointSet,
    kps_b: &KeyPointSet,
    params: &CoarseParams,
) -> Result<(Vec<TetraCandidate>, Vec<TetraCandidate>)> {
    params.validate()?;
    let pa = kps_a.positions();
    let pb = kps_b.positions();
    let da = pairwise_distances(kps_a)?;
    let db = pairwise_distances(kps_b)?;
    let ok_a = compatible_edges(&da, &db, params.epsilon);
    let ok_b = compatible_edges(&db, &da, params.epsilon);
    let (ca, cb) = rayon::join(
        || enumerate_filtered(&pa, &ok_a, params),
        || enumerate_filtered(&pb, &ok_b, params),
    );
    Ok((ca?, cb?))
}

/// Coarse transform taking key points A onto key points B.
pub fn coarse_register(
    kps_a: &KeyPointSet,
    kps_b: &KeyPointSet,
    params: &CoarseParams,
) -> Result<CoarseResult> {
    let (ca, cb) = filtered_candidates(kps_a, kps_b, params)?;
    let tetra_match = match_tetrahedra(&ca, &cb, params)?;
    Ok(CoarseResult {
        transform: tetra_match.transform,
        stats: CoarseStats {
            keypoints_a: kps_a.len(),
            keypoints_b: kps_b.len(),
            candidates_a: ca.len(),
            candidates_b: cb.len(),
        },
        tetra_match,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kps(pts: &[Vector3<f64>]) -> KeyPointSet {
        KeyPointSet::from_positions(pts)
    }

    fn random_set(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-scale..scale),
                    rng.random_range(-scale..scale),
                    rng.random_range(0.0..2.0 * scale),
                )
            })
            .collect()
    }

    #[test]
    fn three_four_five() {
        let d = distance_matrix(&[Vector3::zeros(), Vector3::new(3.0, 4.0, 0.0)]);
        assert_eq!(d[(0, 1)], 5.0);
        assert_eq!(d[(1, 0)], 5.0);
        assert_eq!(d[(0, 0)], 0.0);
    }

    #[test]
    fn unit_cube_distance_histogram() {
        let corners: Vec<_> = (0..8)
            .map(|i| Vector3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
            .collect();
        let d = pairwise_distances(&kps(&corners)).unwrap();
        let mut counts = [0; 3];
        for i in 0..8 {
            assert_eq!(d[(i, i)], 0.0);
            for j in i + 1..8 {
                let x = d[(i, j)];
                let k = [1.0, 2f64.sqrt(), 3f64.sqrt()]
                    .iter()
                    .position(|v| (v - x).abs() < 1e-12)
                    .expect("unexpected distance");
                counts[k] += 1;
            }
        }
        assert_eq!(counts, [12, 12, 4]);
    }

    #[test]
    fn too_few_keypoints() {
        let pts = vec![Vector3::zeros(), Vector3::x(), Vector3::y()];
        assert!(matches!(
            pairwise_distances(&kps(&pts)),
            Err(Error::InsufficientKeypoints { found: 3 })
        ));
    }

    #[test]
    fn edge_gate_cases() {
        assert!(edges_match(1.0, 1.0, 1e-9).unwrap());
        assert!(edges_match(1.0, 1.005, 0.01).unwrap());
        assert!(!edges_match(1.0, 1.2, 0.05).unwrap());
        assert!(edges_match(0.0, 1.0, 0.05).is_err());
        assert!(edges_match(1.0, -1.0, 0.05).is_err());
    }

    #[test]
    fn volume_gate_cases() {
        assert!(volumes_match(2.5, 2.5, 1e-9).unwrap());
        assert!(volumes_match(1.05, 1.0, 0.1).unwrap());
        assert!(!volumes_match(1.2, 1.0, 0.1).unwrap());
        assert!(volumes_match(0.0, 1.0, 0.1).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let (a, b) = (rng.random_range(0.01..10.0), rng.random_range(0.01..10.0));
            assert_eq!(volumes_match(a, b, 0.1).unwrap(), volumes_match(b, a, 0.1).unwrap());
        }
    }

    #[test]
    fn unit_corner_tetra() {
        let pts = vec![Vector3::zeros(), Vector3::x(), Vector3::y(), Vector3::z()];
        let list = enumerate_tetrahedra(&kps(&pts), &CoarseParams::default()).unwrap();
        assert_eq!(list.len(), 1);
        assert!((list[0].volume - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(list[0].edge_lengths[0], 2f64.sqrt());
        assert_eq!(list[0].edge_lengths[5], 1.0);
    }

    #[test]
    fn coplanar_points_rejected() {
        let pts = vec![Vector3::zeros(), Vector3::x(), Vector3::y(), Vector3::new(1.0, 1.0, 0.0)];
        assert!(matches!(
            enumerate_tetrahedra(&kps(&pts), &CoarseParams::default()),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn enumeration_order_and_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts = random_set(&mut rng, 10, 2.0);
        let all = enumerate_tetrahedra(&kps(&pts), &CoarseParams::default()).unwrap();
        assert!(all.len() <= 210);
        for w in all.windows(2) {
            assert!(w[0].volume >= w[1].volume);
            assert!(w[0].edge_lengths.windows(2).all(|e| e[0] >= e[1]));
        }
        let capped = enumerate_tetrahedra(
            &kps(&pts),
            &CoarseParams {
                max_candidates: 17,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(capped[..], all[..17]);
    }

    #[test]
    fn volumes_invariant_under_rigid_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let pts = random_set(&mut rng, 7, 3.0);
        let t = RigidTransform::from_axis_angle(Vector3::new(1.0, -2.0, 0.5), 2.2, Vector3::new(5.0, 1.0, -3.0));
        let moved: Vec<_> = pts.iter().map(|p| t.apply(p)).collect();
        let a = enumerate_tetrahedra(&kps(&pts), &CoarseParams::default()).unwrap();
        let b = enumerate_tetrahedra(&kps(&moved), &CoarseParams::default()).unwrap();
        let mut va: Vec<_> = a.iter().map(|c| (c.vertex_ids, c.volume)).collect();
        let mut vb: Vec<_> = b.iter().map(|c| (c.vertex_ids, c.volume)).collect();
        va.sort_by_key(|x| x.0);
        vb.sort_by_key(|x| x.0);
        for (x, y) in va.iter().zip(&vb) {
            assert_eq!(x.0, y.0);
            assert!((x.1 - y.1).abs() < 1e-9);
        }
    }

    #[test]
    fn self_match_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = random_set(&mut rng, 6, 2.0);
        let list = enumerate_tetrahedra(&kps(&pts), &CoarseParams::default()).unwrap();
        let m = match_tetrahedra(&list, &list, &CoarseParams::default()).unwrap();
        assert_eq!(m.candidate_a, list[0]);
        assert_eq!(m.candidate_b, list[0]);
        assert!(m.residual < 1e-12);
        assert!(m.transform.max_abs_diff(&RigidTransform::identity()) < 1e-12);
    }

    #[test]
    fn recovers_known_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pts = random_set(&mut rng, 8, 3.0);
        let t = RigidTransform::from_axis_angle(Vector3::z(), 120f64.to_radians(), Vector3::new(3.0, -2.0, 0.5));
        let moved: Vec<_> = pts.iter().map(|p| t.apply(p)).collect();
        let r = coarse_register(&kps(&pts), &kps(&moved), &CoarseParams::default()).unwrap();
        assert!(r.transform.max_abs_diff(&t) < 1e-6);
        assert!(r.tetra_match.residual < 1e-6);
        for (ia, ib) in r.tetra_match.keypoint_pairs() {
            assert_eq!(ia, ib);
        }
    }

    #[test]
    fn mirrored_tetra_is_rejected() {
        // Clearly chiral tetrahedron of about 3 m scale.
        let pts: Vec<_> = [[0.0, 0.0, 0.0], [1.2, 0.0, 0.0], [0.3, 1.0, 0.0], [0.4, 0.3, 0.9]]
            .iter()
            .map(|p| Vector3::from(*p) * 3.0)
            .collect();
        let mirrored: Vec<_> = pts.iter().map(|p| Vector3::new(-p.x, p.y, p.z)).collect();
        let a = enumerate_tetrahedra(&kps(&pts), &CoarseParams::default()).unwrap();
        let b = enumerate_tetrahedra(&kps(&mirrored), &CoarseParams::default()).unwrap();
        assert!(passes_shape_gates(&a[0], &b[0], &CoarseParams::default()));
        // Brute-force floor over the 24 pairings.
        let floor = PERMUTATIONS_4
            .iter()
            .map(|perm| {
                fit_rigid(&a[0].vertices, &perm.map(|p| b[0].vertices[p])).unwrap().max
            })
            .fold(f64::INFINITY, f64::min);
        assert!(floor > 0.1, "floor {floor}");
        assert!(matches!(
            match_tetrahedra(&a, &b, &CoarseParams::default()),
            Err(Error::NoMatch)
        ));
    }

    #[test]
    fn best_residual_strategy_agrees_on_exact_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let pts = random_set(&mut rng, 7, 3.0);
        let t = RigidTransform::from_axis_angle(Vector3::new(0.2, 0.1, 1.0), -1.0, Vector3::new(1.0, 2.0, 3.0));
        let moved: Vec<_> = pts.iter().map(|p| t.apply(p)).collect();
        let params = CoarseParams {
            strategy: MatchStrategy::BestResidual,
            ..Default::default()
        };
        let r = coarse_register(&kps(&pts), &kps(&moved), &params).unwrap();
        assert!(r.transform.max_abs_diff(&t) < 1e-9);
    }

    #[test]
    fn params_validation() {
        let ok = CoarseParams::default();
        assert!(ok.validate().is_ok());
        for bad in [
            CoarseParams { epsilon: 0.5, ..ok },
            CoarseParams { epsilon: 0.0, ..ok },
            CoarseParams { beta: 0.11, ..ok },
            CoarseParams { delta: -1.0, ..ok },
            CoarseParams { max_candidates: 0, ..ok },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn edge_prefilter_keeps_true_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts = random_set(&mut rng, 9, 2.0);
        let d = distance_matrix(&pts);
        let ok = compatible_edges(&d, &d, 0.01);
        for i in 0..9 {
            for j in 0..9 {
                if i != j {
                    assert!(ok[i * 9 + j]);
                }
            }
        }
        // Against a set with only one edge length, most edges are dropped.
        let other = distance_matrix(&[Vector3::zeros(), Vector3::new(100.0, 0.0, 0.0)]);
        assert!(compatible_edges(&d, &other, 0.01).iter().all(|x| !x));
    }
}
