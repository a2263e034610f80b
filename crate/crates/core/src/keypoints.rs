//! Branch and end points of the skeleton, limited by depth along each path.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::SkeletonGraph;
use crate::transform::RigidTransform;

/// Positions closer than this are treated as one key point.
pub const DEDUP_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyPointKind {
    Root,
    Branch,
    End,
}

impl KeyPointKind {
    pub fn as_str(self) -> &'static str {
        match self {
            KeyPointKind::Root => "root",
            KeyPointKind::Branch => "branch",
            KeyPointKind::End => "end",
        }
    }
}

/// How many children make a node a branch point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForkRule {
    /// Two or more children.
    #[default]
    AnySplit,
    /// Strictly more than two children.
    Strict,
}

/// What the depth limit counts along a root-to-end path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthCounting {
    /// Classified nodes (root, branch, end) only.
    #[default]
    KeyPoints,
    /// Every skeleton node on the path.
    RawNodes,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeypointParams {
    pub depth_limit: usize,
    pub fork_rule: ForkRule,
    pub depth_counting: DepthCounting,
}

impl Default for KeypointParams {
    fn default() -> Self {
        Self {
            depth_limit: 5,
            fork_rule: ForkRule::AnySplit,
            depth_counting: DepthCounting::KeyPoints,
        }
    }
}

impl KeypointParams {
    pub fn with_depth(depth_limit: usize) -> Self {
        Self {
            depth_limit,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth_limit == 0 {
            return Err(Error::param("depth_limit", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyPoint {
    pub position: Vector3<f64>,
    pub kind: KeyPointKind,
    /// 1-based rank among key points along the shallowest path through it.
    pub path_rank: usize,
    /// Skeleton node this key point sits on.
    pub node_id: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KeyPointSet {
    points: Vec<KeyPoint>,
    pub source: String,
}

impl KeyPointSet {
    pub fn new(points: Vec<KeyPoint>, source: impl Into<String>) -> Self {
        Self {
            points,
            source: source.into(),
        }
    }

    /// Wraps bare positions (tagged as branch points) for callers that bring
    /// their own features.
    pub fn from_positions(positions: &[Vector3<f64>]) -> Self {
        Self::new(
            positions
                .iter()
                .enumerate()
                .map(|(i, &position)| KeyPoint {
                    position,
                    kind: KeyPointKind::Branch,
                    path_rank: 1,
                    node_id: i,
                })
                .collect(),
            "",
        )
    }

    pub fn points(&self) -> &[KeyPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.points.iter().map(|k| k.position).collect()
    }

    pub fn count_kind(&self, kind: KeyPointKind) -> usize {
        self.points.iter().filter(|k| k.kind == kind).count()
    }

    pub fn transformed(&self, t: &RigidTransform) -> KeyPointSet {
        let mut out = self.clone();
        for k in &mut out.points {
            k.position = t.apply(&k.position);
        }
        out
    }

    pub fn ensure_enough(&self) -> Result<()> {
        if self.len() < 4 {
            Err(Error::InsufficientKeypoints { found: self.len() })
        } else {
            Ok(())
        }
    }
}

/// Kind of every skeleton node; `None` for pass-through nodes.
pub fn classify_nodes(skeleton: &SkeletonGraph, rule: ForkRule) -> Vec<Option<KeyPointKind>> {
    let min_children = match rule {
        ForkRule::AnySplit => 2,
        ForkRule::Strict => 3,
    };
    (0..skeleton.len())
        .map(|id| {
            let children = skeleton.children(id).len();
            if id == skeleton.root_id() {
                Some(KeyPointKind::Root)
            } else if children == 0 {
                Some(KeyPointKind::End)
            } else if children >= min_children {
                Some(KeyPointKind::Branch)
            } else {
                None
            }
        })
        .collect()
}

/// Key points without the minimum-size check.
pub fn collect_keypoints(skeleton: &SkeletonGraph, params: &KeypointParams) -> Result<KeyPointSet> {
    params.validate()?;
    let kinds = classify_nodes(skeleton, params.fork_rule);
    let ends: Vec<usize> = (0..skeleton.len())
        .filter(|&id| kinds[id] == Some(KeyPointKind::End))
        .collect();
    let paths: Vec<Vec<usize>> = if ends.is_empty() {
        vec![vec![skeleton.root_id()]]
    } else {
        ends.iter().map(|&e| skeleton.path_from_root(e)).collect()
    };

    let mut rank = vec![usize::MAX; skeleton.len()];
    for path in &paths {
        let window: &[usize] = match params.depth_counting {
            DepthCounting::KeyPoints => path,
            DepthCounting::RawNodes => &path[..path.len().min(params.depth_limit)],
        };
        for (r, id) in window
            .iter()
            .filter(|&&id| kinds[id].is_some())
            .take(params.depth_limit)
            .enumerate()
        {
            rank[*id] = rank[*id].min(r + 1);
        }
    }

    let mut selected: Vec<usize> = (0..skeleton.len()).filter(|&id| rank[id] != usize::MAX).collect();
    selected.sort_by_key(|&id| (skeleton.nodes()[id].bin_index, id));
    let mut points: Vec<KeyPoint> = Vec::with_capacity(selected.len());
    for id in selected {
        let position = skeleton.nodes()[id].position;
        if points
            .iter()
            .any(|k| (k.position - position).norm() < DEDUP_TOLERANCE)
        {
            continue;
        }
        points.push(KeyPoint {
            position,
            kind: kinds[id].expect("selected nodes are classified"),
            path_rank: rank[id],
            node_id: id,
        });
    }
    Ok(KeyPointSet::new(points, ""))
}

/// Depth-limited branch/end points; fails when fewer than four remain.
pub fn extract_keypoints(skeleton: &SkeletonGraph, params: &KeypointParams) -> Result<KeyPointSet> {
    let set = collect_keypoints(skeleton, params)?;
    set.ensure_enough()?;
    Ok(set)
}
