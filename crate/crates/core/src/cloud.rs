//! Labeled point clouds.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wood/leaf class of a scanned point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Label {
    Wood,
    Leaf,
    #[default]
    Unknown,
}

impl Label {
    /// Numeric code used in the text formats (0 = wood, 1 = leaf).
    pub fn code(self) -> Option<u8> {
        match self {
            Label::Wood => Some(0),
            Label::Leaf => Some(1),
            Label::Unknown => None,
        }
    }

    pub fn from_code(code: i64) -> Option<Label> {
        match code {
            0 => Some(Label::Wood),
            1 => Some(Label::Leaf),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub position: Vector3<f64>,
    pub intensity: Option<f64>,
    pub label: Label,
}

impl Point {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self::at(Vector3::new(x, y, z))
    }

    pub fn at(position: Vector3<f64>) -> Self {
        Self {
            position,
            intensity: None,
            label: Label::Unknown,
        }
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = label;
        self
    }

    pub fn with_intensity(mut self, intensity: f64) -> Self {
        self.intensity = Some(intensity);
        self
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|c| c.is_finite())
            && self.intensity.is_none_or(|i| i.is_finite())
    }
}

/// Ordered sequence of points. Coordinates are always finite.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point>,
    pub frame_id: String,
}

impl PointCloud {
    pub fn new(points: Vec<Point>, frame_id: impl Into<String>) -> Result<Self> {
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            points,
            frame_id: frame_id.into(),
        })
    }

    pub fn from_positions(positions: impl IntoIterator<Item = Vector3<f64>>) -> Result<Self> {
        Self::new(positions.into_iter().map(Point::at).collect(), "")
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    pub fn positions(&self) -> impl ExactSizeIterator<Item = Vector3<f64>> + '_ {
        self.points.iter().map(|p| p.position)
    }

    pub fn position_vec(&self) -> Vec<Vector3<f64>> {
        self.positions().collect()
    }

    pub fn ensure_nonempty(&self) -> Result<()> {
        if self.is_empty() {
            Err(Error::EmptyCloud)
        } else {
            Ok(())
        }
    }

    /// Points carrying `label`, in their original order.
    pub fn with_label(&self, label: Label) -> PointCloud {
        PointCloud {
            points: self
                .points
                .iter()
                .filter(|p| p.label == label)
                .copied()
                .collect(),
            frame_id: self.frame_id.clone(),
        }
    }

    pub fn count_label(&self, label: Label) -> usize {
        self.points.iter().filter(|p| p.label == label).count()
    }

    pub fn centroid(&self) -> Option<Vector3<f64>> {
        if self.is_empty() {
            return None;
        }
        let sum = self
            .positions()
            .fold(Vector3::zeros(), |acc, p| acc + p);
        Some(sum / self.len() as f64)
    }

    pub fn bounds(&self) -> Option<Aabb> {
        Aabb::from_points(self.positions())
    }

    /// Same cloud with every position mapped through `f`.
    pub(crate) fn map_positions(&self, f: impl Fn(&Vector3<f64>) -> Vector3<f64>) -> PointCloud {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| Point {
                    position: f(&p.position),
                    ..*p
                })
                .collect(),
            frame_id: self.frame_id.clone(),
        }
    }
}

impl FromIterator<Point> for PointCloud {
    /// Collects without validation; callers feeding untrusted data should use
    /// [`PointCloud::new`].
    fn from_iter<I: IntoIterator<Item = Point>>(iter: I) -> Self {
        PointCloud {
            points: iter.into_iter().collect(),
            frame_id: String::new(),
        }
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Self { min, max }
    }

    pub fn from_points(points: impl IntoIterator<Item = Vector3<f64>>) -> Option<Aabb> {
        let mut iter = points.into_iter();
        let first = iter.next()?;
        let (min, max) = iter.fold((first, first), |(lo, hi), p| (lo.inf(&p), hi.sup(&p)));
        Some(Aabb { min, max })
    }

    pub fn contains(&self, p: &Vector3<f64>, tol: f64) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] - tol && p[k] <= self.max[k] + tol)
    }

    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let (lo, hi) = (self.min, self.max);
        std::array::from_fn(|i| {
            Vector3::new(
                if i & 1 == 0 { lo.x } else { hi.x },
                if i & 2 == 0 { lo.y } else { hi.y },
                if i & 4 == 0 { lo.z } else { hi.z },
            )
        })
    }
}
