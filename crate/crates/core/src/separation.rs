//! Lightweight wood/leaf labeling for clouds that arrive unlabeled.
//!
//! Points that already carry a label are left alone. Unknown points are
//! wood when their intensity reaches the configured threshold; otherwise a
//! local linearity test on the neighbourhood covariance decides.

use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{Label, Point, PointCloud};
use crate::error::Result;
use crate::spatial::SpatialIndex;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeparationParams {
    /// Intensity at or above which an unknown point is wood. `None` skips the
    /// intensity test entirely.
    pub intensity_threshold: Option<f64>,
    /// Neighbourhood size for the covariance, including the point itself.
    pub neighbors: usize,
    /// Largest-eigenvalue share at or above which a neighbourhood is linear.
    pub linearity_threshold: f64,
}

impl Default for SeparationParams {
    fn default() -> Self {
        Self {
            intensity_threshold: None,
            neighbors: 10,
            linearity_threshold: 0.8,
        }
    }
}

/// Fills in labels for every `Unknown` point.
pub fn separate_wood_leaf_heuristic(
    cloud: &PointCloud,
    params: &SeparationParams,
) -> Result<PointCloud> {
    cloud.ensure_nonempty()?;
    if cloud.points().iter().all(|p| p.label != Label::Unknown) {
        return Ok(cloud.clone());
    }
    let pts = cloud.position_vec();
    let index = SpatialIndex::from_positions(&pts)?;
    let k = params.neighbors.max(1);
    let labeled: Vec<Point> = cloud
        .points()
        .par_iter()
        .map(|p| {
            if p.label != Label::Unknown {
                return *p;
            }
            if let (Some(th), Some(i)) = (params.intensity_threshold, p.intensity) {
                if i >= th {
                    return p.with_label(Label::Wood);
                }
            }
            let hood: Vec<_> = index.knn(&p.position, k).iter().map(|n| pts[n.id]).collect();
            let label = if linearity(&hood) >= params.linearity_threshold {
                Label::Wood
            } else {
                Label::Leaf
            };
            p.with_label(label)
        })
        .collect();
    PointCloud::new(labeled, cloud.frame_id.clone())
}

/// Largest covariance eigenvalue over the eigenvalue sum; 0 for a
/// neighbourhood without spread.
pub fn linearity(points: &[nalgebra::Vector3<f64>]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let n = points.len() as f64;
    let mean = points.iter().sum::<nalgebra::Vector3<f64>>() / n;
    let cov = points
        .iter()
        .map(|p| (p - mean) * (p - mean).transpose())
        .sum::<Matrix3<f64>>()
        / n;
    let ev = cov.symmetric_eigenvalues();
    let sum = ev.sum();
    if sum <= 0.0 {
        return 0.0;
    }
    ev.max() / sum
}
