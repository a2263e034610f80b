//! Proper rigid transforms (rotation + translation) and SO(3) helpers.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

/// Tolerance on `RᵀR = I` and `det R = 1` accepted at construction.
pub const ORTHONORMAL_TOL: f64 = 1e-9;

/// `x ↦ R·x + t` with `R` a proper rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    /// Validating constructor. Rejects rotations that are not orthonormal or
    /// have determinant -1 (within [`ORTHONORMAL_TOL`]).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        check_rotation(&rotation)?;
        if translation.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Projects `rotation` onto the nearest proper rotation (polar
    /// decomposition) before constructing. Use for matrices read from
    /// low-precision sources.
    pub fn repaired(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if rotation.iter().chain(translation.iter()).any(|c| !c.is_finite()) {
            return Err(Error::NonFinite);
        }
        let svd = rotation.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut fix = Matrix3::identity();
        if (u * v_t).determinant() < 0.0 {
            fix[(2, 2)] = -1.0;
        }
        Self::new(u * fix * v_t, translation)
    }

    pub(crate) fn from_parts_unchecked(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        debug_assert!(check_rotation(&rotation).is_ok());
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length),
    /// followed by `translation`.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let n = axis.norm();
        let rotation = if n == 0.0 {
            Matrix3::identity()
        } else {
            exp_so3(&(axis * (angle / n)))
        };
        Self {
            rotation,
            translation,
        }
    }

    pub fn rotation_z_deg(deg: f64) -> Self {
        Self::from_axis_angle(Vector3::z(), deg.to_radians(), Vector3::zeros())
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Maps every point of the cloud; labels, intensity and order are kept.
    pub fn apply_cloud(&self, cloud: &PointCloud) -> PointCloud {
        cloud.map_positions(|p| self.apply(p))
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Rotation angle in radians, in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }

    /// Row-major rotation entries.
    pub fn rotation_row_major(&self) -> [f64; 9] {
        std::array::from_fn(|i| self.rotation[(i / 3, i % 3)])
    }

    /// Largest absolute difference between corresponding entries.
    pub fn max_abs_diff(&self, other: &RigidTransform) -> f64 {
        let r = (self.rotation - other.rotation).amax();
        let t = (self.translation - other.translation).amax();
        r.max(t)
    }
}

/// Free-function form of [`RigidTransform::apply_cloud`].
pub fn apply_transform(cloud: &PointCloud, transform: &RigidTransform) -> PointCloud {
    transform.apply_cloud(cloud)
}

pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    a.compose(b)
}

pub fn invert(t: &RigidTransform) -> RigidTransform {
    t.inverse()
}

fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    if r.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite);
    }
    let ortho = (r.transpose() * r - Matrix3::identity()).amax();
    if ortho > ORTHONORMAL_TOL {
        return Err(Error::InvalidRotation(format!(
            "|RᵀR - I| = {ortho:.3e} exceeds {ORTHONORMAL_TOL:e}"
        )));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > ORTHONORMAL_TOL {
        return Err(Error::InvalidRotation(format!("det R = {det}")));
    }
    Ok(())
}

/// Skew-symmetric matrix with `skew(v) * w = v × w`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues formula: rotation vector to matrix.
pub fn exp_so3(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let k = skew(w);
    let (a, b) = if theta2 < 1e-8 {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Right Jacobian of SO(3): `exp(w + dw) ≈ exp(w) · exp(Jr(w) dw)`.
pub fn right_jacobian_so3(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let k = skew(w);
    let (a, b) = if theta2 < 1e-8 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        let theta = theta2.sqrt();
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Matrix3::identity() - k * a + k * k * b
}

/// Angle of a rotation matrix, robust near 0 and π.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let c = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let s = 0.5
        * Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm();
    s.atan2(c)
}

#[derive(Serialize, Deserialize)]
struct TransformRepr {
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl Serialize for RigidTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TransformRepr {
            rotation: self.rotation_row_major(),
            translation: self.translation.into(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = TransformRepr::deserialize(d)?;
        let rotation = Matrix3::from_row_slice(&repr.rotation);
        RigidTransform::new(rotation, repr.translation.into()).map_err(serde::de::Error::custom)
    }
}
