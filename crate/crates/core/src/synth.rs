//! Seeded synthetic trees and simulated scans with known ground truth.

use std::f64::consts::PI;

use nalgebra::{Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cloud::{Aabb, Label, Point, PointCloud};
use crate::error::{Error, Result};
use crate::transform::{rotation_angle, RigidTransform};

/// Constant intensity given to wood returns.
pub const WOOD_INTENSITY: f64 = 200.0;
/// Constant intensity given to leaf returns.
pub const LEAF_INTENSITY: f64 = 60.0;

/// Inclusive integer range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRange {
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeSpec {
    pub seed: u64,
    /// Trunk length, meters.
    pub trunk_height: f64,
    /// Segment levels including the trunk; 1 is a bare trunk.
    pub branching_depth: usize,
    /// Children per fork, drawn uniformly from the range.
    pub branches_per_node: CountRange,
    /// Mean angle between a child and its parent direction, degrees.
    pub branch_angle_deg: f64,
    pub points_per_meter_wood: f64,
    pub leaf_points_per_tip: usize,
    pub leaf_blob_radius: f64,
}

impl Default for TreeSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            trunk_height: 6.0,
            branching_depth: 4,
            branches_per_node: CountRange { min: 2, max: 4 },
            branch_angle_deg: 35.0,
            points_per_meter_wood: 200.0,
            leaf_points_per_tip: 400,
            leaf_blob_radius: 0.4,
        }
    }
}

impl TreeSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("trunk_height", self.trunk_height),
            ("branch_angle_deg", self.branch_angle_deg),
            ("points_per_meter_wood", self.points_per_meter_wood),
            ("leaf_blob_radius", self.leaf_blob_radius),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be positive, got {v}")));
            }
        }
        if self.branching_depth == 0 {
            return Err(Error::param("branching_depth", "must be at least 1"));
        }
        let r = self.branches_per_node;
        if r.min == 0 || r.min > r.max {
            return Err(Error::param("branches_per_node", format!("invalid range {}..={}", r.min, r.max)));
        }
        Ok(())
    }
}

/// A straight wood segment of the generated tree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: Vector3<f64>,
    pub end: Vector3<f64>,
    pub radius: f64,
    pub level: usize,
}

/// Segment layout of the tree described by `spec`.
pub fn tree_segments(spec: &TreeSpec) -> Result<Vec<Segment>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // Slight trunk lean keeps the trunk near vertical without being exactly so.
    let lean = rng.random_range(0.0..5f64.to_radians());
    let lean_azimuth = rng.random_range(0.0..2.0 * PI);
    let trunk_dir = Vector3::new(lean.sin() * lean_azimuth.cos(), lean.sin() * lean_azimuth.sin(), lean.cos());
    let mut segments = vec![Segment {
        start: Vector3::zeros(),
        end: trunk_dir * spec.trunk_height,
        radius: 0.12,
        level: 0,
    }];
    let mut frontier = vec![0usize];
    for level in 1..spec.branching_depth {
        let mut next = Vec::new();
        for &parent_id in &frontier {
            let parent = segments[parent_id];
            let dir = (parent.end - parent.start).normalize();
            let parent_len = (parent.end - parent.start).norm();
            let count = rng.random_range(spec.branches_per_node.min..=spec.branches_per_node.max);
            let phase = rng.random_range(0.0..2.0 * PI);
            let perp = Unit::new_normalize(any_perpendicular(&dir));
            for c in 0..count {
                let azimuth = phase + 2.0 * PI * c as f64 / count as f64 + rng.random_range(-0.3..0.3);
                let tilt = (spec.branch_angle_deg * rng.random_range(0.8..1.2)).to_radians();
                let axis = UnitQuaternion::from_axis_angle(&Unit::new_normalize(dir), azimuth) * perp;
                let child_dir = UnitQuaternion::from_axis_angle(&axis, tilt) * dir;
                let length = parent_len * rng.random_range(0.5..0.65);
                segments.push(Segment {
                    start: parent.end,
                    end: parent.end + child_dir * length,
                    radius: parent.radius * 0.6,
                    level,
                });
                next.push(segments.len() - 1);
            }
        }
        frontier = next;
    }
    Ok(segments)
}

fn any_perpendicular(v: &Vector3<f64>) -> Vector3<f64> {
    let helper = if v.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    v.cross(&helper)
}

/// Generates a labeled tree: wood on segment surfaces, leaves as Gaussian
/// blobs at the branch tips.
pub fn generate_tree(spec: &TreeSpec) -> Result<PointCloud> {
    let segments = tree_segments(spec)?;
    // Separate stream so the layout does not depend on sampling counts.
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_0f_1ea7);
    let mut points = Vec::new();
    for s in &segments {
        let axis = s.end - s.start;
        let len = axis.norm();
        let dir = axis / len;
        let u = any_perpendicular(&dir).normalize();
        let v = dir.cross(&u);
        let n = (len * spec.points_per_meter_wood).round() as usize;
        for _ in 0..n {
            let t = rng.random_range(0.0..len);
            let theta = rng.random_range(0.0..2.0 * PI);
            let r = s.radius * rng.random_range(0.9..1.1);
            let p = s.start + dir * t + (u * theta.cos() + v * theta.sin()) * r;
            points.push(Point::at(p).with_label(Label::Wood).with_intensity(WOOD_INTENSITY));
        }
    }
    let child_count = |i: usize| segments.iter().filter(|c| c.start == segments[i].end && c.level == segments[i].level + 1).count();
    let sigma = spec.leaf_blob_radius / 2.0;
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    for (i, s) in segments.iter().enumerate() {
        if child_count(i) > 0 {
            continue;
        }
        let dir = (s.end - s.start).normalize();
        // Center the blob just beyond the tip so it hugs the branch end.
        let center = s.end + dir * sigma;
        for _ in 0..spec.leaf_points_per_tip {
            let offset = Vector3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng));
            points.push(Point::at(center + offset).with_label(Label::Leaf).with_intensity(LEAF_INTENSITY));
        }
    }
    PointCloud::new(points, format!("tree-{}", spec.seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanSpec {
    /// Ground-truth motion from the tree frame into the scan frame.
    pub transform: RigidTransform,
    pub noise_sigma: f64,
    /// Share of points removed by a half-space cut, in [0, 1).
    pub occlusion_fraction: f64,
    pub seed: u64,
}

impl Default for ScanSpec {
    fn default() -> Self {
        Self {
            transform: RigidTransform::identity(),
            noise_sigma: 0.0,
            occlusion_fraction: 0.0,
            seed: 0,
        }
    }
}

impl ScanSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::param("noise_sigma", "must be a nonnegative number"));
        }
        if !(0.0..1.0).contains(&self.occlusion_fraction) {
            return Err(Error::param("occlusion_fraction", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Simulates one scan of `tree`: a seeded vertical-plane cut with random
/// azimuth removes exactly `round(fraction · n)` points, the survivors are
/// moved by the ground-truth transform, then perturbed by isotropic noise.
pub fn simulate_scan(tree: &PointCloud, scan: &ScanSpec) -> Result<PointCloud> {
    scan.validate()?;
    tree.ensure_nonempty()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scan.seed);
    let n = tree.len();
    let remove = (scan.occlusion_fraction * n as f64).round() as usize;
    if remove >= n {
        return Err(Error::DegenerateGeometry("occlusion removes every point".into()));
    }
    let azimuth = rng.random_range(0.0..2.0 * PI);
    let normal = Vector3::new(azimuth.cos(), azimuth.sin(), 0.0);
    let mut keep = vec![true; n];
    if remove > 0 {
        // Drop the points farthest along the normal: the side facing away
        // from the simulated scanner.
        let mut order: Vec<(f64, usize)> = tree
            .points()
            .iter()
            .enumerate()
            .map(|(i, p)| (p.position.dot(&normal), i))
            .collect();
        order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, i) in &order[..remove] {
            keep[i] = false;
        }
    }
    let noise = if scan.noise_sigma > 0.0 {
        Some(Normal::new(0.0, scan.noise_sigma).expect("valid sigma"))
    } else {
        None
    };
    let points = tree
        .points()
        .iter()
        .zip(&keep)
        .filter(|(_, k)| **k)
        .map(|(p, _)| {
            let mut q = *p;
            q.position = scan.transform.apply(&p.position);
            if let Some(nd) = &noise {
                q.position += Vector3::new(nd.sample(&mut rng), nd.sample(&mut rng), nd.sample(&mut rng));
            }
            q
        })
        .collect();
    PointCloud::new(points, format!("{}-scan-{}", tree.frame_id, scan.seed))
}

/// Rotation error in degrees and worst bounding-box-corner displacement in
/// meters between an estimated and a true transform.
pub fn ground_truth_error(estimated: &RigidTransform, truth: &RigidTransform, bounds: &Aabb) -> (f64, f64) {
    let rel = estimated.rotation() * truth.rotation().transpose();
    let deg = rotation_angle(&rel).to_degrees();
    let corner = bounds
        .corners()
        .iter()
        .map(|c| (estimated.apply(c) - truth.apply(c)).norm())
        .fold(0.0, f64::max);
    (deg, corner)
}

/// Ground-truth motion drawn the way the test harness draws it: rotation
/// about an axis within `max_tilt_deg` of vertical by up to `max_angle_deg`,
/// translation uniform in a ball of radius `max_translation`.
pub fn random_transform(rng: &mut impl Rng, max_angle_deg: f64, max_tilt_deg: f64, max_translation: f64) -> RigidTransform {
    let tilt = rng.random_range(0.0..=max_tilt_deg.to_radians());
    let az = rng.random_range(0.0..2.0 * PI);
    let axis = Vector3::new(tilt.sin() * az.cos(), tilt.sin() * az.sin(), tilt.cos());
    let angle = rng.random_range(-max_angle_deg..=max_angle_deg).to_radians();
    let t = loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if v.norm_squared() <= 1.0 {
            break v * max_translation;
        }
    };
    RigidTransform::from_axis_angle(axis, angle, t)
}

/// A synthetic registration problem: two scans of the same tree.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPair {
    pub tree: PointCloud,
    pub source: PointCloud,
    pub target: PointCloud,
    /// Maps `source` coordinates onto `target` coordinates.
    pub truth: RigidTransform,
}

/// Pair recipe, loadable from TOML.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairSpec {
    pub tree: TreeSpec,
    /// Motion of the target scan relative to the source scan.
    pub transform: RigidTransform,
    pub noise_sigma: f64,
    pub occlusion_fraction: f64,
    /// Seed of the source scan; the target uses `scan_seed + 1`.
    pub scan_seed: u64,
}

impl Default for PairSpec {
    fn default() -> Self {
        Self {
            tree: TreeSpec::default(),
            transform: RigidTransform::identity(),
            noise_sigma: 0.01,
            occlusion_fraction: 0.2,
            scan_seed: 0,
        }
    }
}

pub fn synthetic_pair(spec: &PairSpec) -> Result<SyntheticPair> {
    let tree = generate_tree(&spec.tree)?;
    let scan = |transform, seed| ScanSpec {
        transform,
        noise_sigma: spec.noise_sigma,
        occlusion_fraction: spec.occlusion_fraction,
        seed,
    };
    let source = simulate_scan(&tree, &scan(RigidTransform::identity(), spec.scan_seed))?;
    let target = simulate_scan(&tree, &scan(spec.transform, spec.scan_seed.wrapping_add(1)))?;
    Ok(SyntheticPair {
        tree,
        source,
        target,
        truth: spec.transform,
    })
}
