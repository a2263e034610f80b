//! Least-squares proper rigid fit between corresponding point sets (Kabsch).

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::transform::RigidTransform;

/// Result of a correspondence fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidFit {
    pub transform: RigidTransform,
    /// Root-mean-square distance between mapped source and target points.
    pub rms: f64,
    /// Largest distance between a mapped source point and its target.
    pub max: f64,
}

/// Best proper rigid transform mapping `source[i]` onto `target[i]`.
///
/// Reflections are never returned: when the unconstrained optimum is
/// improper the smallest singular direction is flipped.
pub fn estimate_rigid_transform(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
) -> Result<(RigidTransform, f64)> {
    let fit = fit_rigid(source, target)?;
    Ok((fit.transform, fit.rms))
}

pub fn fit_rigid(source: &[Vector3<f64>], target: &[Vector3<f64>]) -> Result<RigidFit> {
    if source.len() != target.len() {
        return Err(Error::LengthMismatch {
            left: source.len(),
            right: target.len(),
        });
    }
    if source.len() < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "need at least 3 correspondences, got {}",
            source.len()
        )));
    }
    let n = source.len() as f64;
    let cs = source.iter().sum::<Vector3<f64>>() / n;
    let ct = target.iter().sum::<Vector3<f64>>() / n;

    let mut cross = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        let ds = s - cs;
        cross += (t - ct) * ds.transpose();
        spread += ds * ds.transpose();
    }
    let eig = spread.symmetric_eigenvalues();
    let mut ev = [eig[0], eig[1], eig[2]];
    ev.sort_by(f64::total_cmp);
    // Collinear (or coincident) sources leave rotation about the line free.
    if ev[2] <= 0.0 || ev[1] <= 1e-12 * ev[2] {
        return Err(Error::DegenerateGeometry(
            "source points are collinear".into(),
        ));
    }
    // Coincident sets: return the exact identity rather than an SVD round-off.
    if source == target {
        return Ok(RigidFit {
            transform: RigidTransform::identity(),
            rms: 0.0,
            max: 0.0,
        });
    }

    let rotation = proper_rotation_from_cross(&cross);
    let translation = ct - rotation * cs;
    let transform = RigidTransform::from_parts_unchecked(rotation, translation);

    let mut sum_sq = 0.0;
    let mut max: f64 = 0.0;
    for (s, t) in source.iter().zip(target) {
        let d = (transform.apply(s) - t).norm();
        sum_sq += d * d;
        max = max.max(d);
    }
    Ok(RigidFit {
        transform,
        rms: (sum_sq / n).sqrt(),
        max,
    })
}

/// Rotation maximizing `tr(Rᵀ H)` for the cross-covariance `H = Σ tᵢ sᵢᵀ`.
fn proper_rotation_from_cross(cross: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = cross.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    // nalgebra does not sort singular values; flip the column paired with
    // the smallest one when the product is improper.
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        let smallest = svd.singular_values.imin();
        d[(smallest, smallest)] = -1.0;
    }
    let r = u * d * v_t;
    // Re-orthonormalize against accumulated rounding.
    let svd = r.svd(true, true);
    svd.u.unwrap() * svd.v_t.unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_transform(rng: &mut ChaCha8Rng) -> RigidTransform {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        RigidTransform::from_axis_angle(
            axis,
            rng.random_range(-3.1..3.1),
            Vector3::new(
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
            ),
        )
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                )
            })
            .collect()
    }

    #[test]
    fn identity_on_equal_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = random_points(&mut rng, 4);
        let (t, rms) = estimate_rigid_transform(&pts, &pts).unwrap();
        assert!(t.max_abs_diff(&RigidTransform::identity()) < 1e-12);
        assert!(rms < 1e-12);
    }

    #[test]
    fn recovers_known_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let truth = random_transform(&mut rng);
            let src = random_points(&mut rng, 4);
            let dst: Vec<_> = src.iter().map(|p| truth.apply(p)).collect();
            let (t, rms) = estimate_rigid_transform(&src, &dst).unwrap();
            assert!(t.max_abs_diff(&truth) < 1e-9, "{t:?} vs {truth:?}");
            assert!(rms < 1e-9);
            assert!((t.rotation().determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn coplanar_triangle_is_enough() {
        let src = vec![Vector3::zeros(), Vector3::x(), Vector3::y()];
        let truth = RigidTransform::rotation_z_deg(40.0);
        let dst: Vec<_> = src.iter().map(|p| truth.apply(p)).collect();
        let (t, _) = estimate_rigid_transform(&src, &dst).unwrap();
        assert!(t.max_abs_diff(&truth) < 1e-12);
    }

    /// Smallest residual over a dense sweep of proper rotations with the
    /// optimal translation; used as an independent check on mirrored input.
    fn brute_force_min_rms(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> f64 {
        let n = src.len() as f64;
        let cs = src.iter().sum::<Vector3<f64>>() / n;
        let ct = dst.iter().sum::<Vector3<f64>>() / n;
        let steps = 36;
        let mut best = f64::INFINITY;
        for i in 0..steps {
            for j in 0..steps {
                for k in 0..steps {
                    let w = Vector3::new(i as f64, j as f64, k as f64) / steps as f64 * 2.0
                        - Vector3::repeat(1.0);
                    if w.norm() > 1.0 {
                        continue;
                    }
                    let r = crate::transform::exp_so3(&(w * std::f64::consts::PI));
                    let ss: f64 = src
                        .iter()
                        .zip(dst)
                        .map(|(s, t)| (r * (s - cs) - (t - ct)).norm_squared())
                        .sum();
                    best = best.min((ss / n).sqrt());
                }
            }
        }
        best
    }

    #[test]
    fn mirrored_target_is_not_fit_by_a_rotation() {
        let src = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
        ];
        let dst: Vec<_> = src.iter().map(|p| Vector3::new(-p.x, p.y, p.z)).collect();
        let (t, rms) = estimate_rigid_transform(&src, &dst).unwrap();
        assert!((t.rotation().determinant() - 1.0).abs() < 1e-12);
        let brute = brute_force_min_rms(&src, &dst);
        // The sweep is coarse, so it can only overestimate the true optimum.
        assert!(rms <= brute + 1e-12);
        assert!(rms > 0.2, "mirror fit rms {rms}");
        assert!(brute - rms < 0.05, "kabsch {rms} far below sweep {brute}");
    }

    #[test]
    fn errors() {
        let line = vec![Vector3::zeros(), Vector3::x(), Vector3::x() * 2.0];
        assert!(matches!(
            estimate_rigid_transform(&line, &line),
            Err(Error::DegenerateGeometry(_))
        ));
        let a = vec![Vector3::zeros(); 3];
        let b = vec![Vector3::zeros(); 4];
        assert!(matches!(
            estimate_rigid_transform(&a, &b),
            Err(Error::LengthMismatch { .. })
        ));
    }
}
