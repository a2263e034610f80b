//! Fine alignment: Levenberg–Marquardt ICP and a closed-form ICP baseline.
//!
//! The LM variant parameterizes the correction applied on top of the
//! initial transform as a rotation vector about the centroid of the
//! initially mapped source plus a translation:
//!
//! ```text
//! y ↦ exp(ω) (y − c) + c + τ,   x = (ω, τ)
//! ```
//!
//! Each iteration linearizes the point-to-point residuals at the current
//! correspondences and solves `(JᵀJ + λ D) Δx = −Jᵀe` with `D = diag(JᵀJ)`.
//! A step is kept only when it lowers the cost; otherwise λ grows and the
//! step is retried.

use nalgebra::{Matrix3, Matrix6, SMatrix, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::rigid::fit_rigid;
use crate::spatial::SpatialIndex;
use crate::transform::{exp_so3, right_jacobian_so3, skew, RigidTransform};

/// Chunk size for parallel reductions; fixed so sums are reproducible.
const REDUCE_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmIcpParams {
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the cost by less than this fraction.
    pub cost_tolerance: f64,
    pub lambda_init: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    /// Correspondences farther than this (meters) are excluded.
    pub max_corr_dist: f64,
    /// Uniform random cap on source points; 0 keeps every point.
    pub subsample: usize,
    /// Rejected steps tolerated per iteration before giving up.
    pub max_retries: usize,
    pub seed: u64,
}

impl Default for LmIcpParams {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            cost_tolerance: 1e-6,
            lambda_init: 1e-3,
            lambda_up: 10.0,
            lambda_down: 0.1,
            max_corr_dist: 1.0,
            subsample: 20_000,
            max_retries: 10,
            seed: 0,
        }
    }
}

impl LmIcpParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::param("max_iterations", "must be positive"));
        }
        for (name, v) in [
            ("cost_tolerance", self.cost_tolerance),
            ("lambda_init", self.lambda_init),
            ("max_corr_dist", self.max_corr_dist),
        ] {
            if !(v > 0.0) {
                return Err(Error::param(name, format!("must be positive, got {v}")));
            }
        }
        if !(self.lambda_up > 1.0) {
            return Err(Error::param("lambda_up", "must exceed 1"));
        }
        if !(self.lambda_down > 0.0 && self.lambda_down < 1.0) {
            return Err(Error::param("lambda_down", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcpResult {
    pub transform: RigidTransform,
    /// Cost at the returned transform, m². Excluded points count as
    /// `max_corr_dist²` each.
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_trace: Vec<f64>,
    /// Retained correspondences at the returned transform.
    pub correspondences: usize,
    /// Source points that took part (after subsampling).
    pub source_points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub source: usize,
    pub target: usize,
    pub dist_sq: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpCost {
    /// Sum of squared distances over retained correspondences, m².
    pub cost: f64,
    pub correspondences: Vec<Correspondence>,
    /// Points whose nearest target lies beyond the cutoff.
    pub excluded: usize,
}

impl IcpCost {
    /// Cost with each excluded point charged `cutoff²`; never increases when
    /// correspondences are re-chosen at a fixed pose.
    pub fn truncated(&self, cutoff: f64) -> f64 {
        if cutoff.is_finite() {
            self.cost + self.excluded as f64 * cutoff * cutoff
        } else {
            self.cost
        }
    }
}

/// Nearest-neighbour correspondences and cost of `transform` applied to
/// `source`, matched against `target`.
pub fn icp_cost(
    source: &[Vector3<f64>],
    target: &SpatialIndex,
    transform: &RigidTransform,
    max_corr_dist: f64,
) -> Result<IcpCost> {
    let moved: Vec<Vector3<f64>> = source.iter().map(|p| transform.apply(p)).collect();
    let cost = associate(&moved, target, max_corr_dist);
    if cost.correspondences.is_empty() {
        return Err(Error::NoOverlap { max_corr_dist });
    }
    Ok(cost)
}

fn associate(moved: &[Vector3<f64>], target: &SpatialIndex, max_corr_dist: f64) -> IcpCost {
    let cutoff_sq = max_corr_dist * max_corr_dist;
    let hits: Vec<Option<Correspondence>> = moved
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let nb = target.nearest(p);
            (nb.dist_sq <= cutoff_sq).then_some(Correspondence {
                source: i,
                target: nb.id,
                dist_sq: nb.dist_sq,
            })
        })
        .collect();
    let excluded = hits.iter().filter(|h| h.is_none()).count();
    let correspondences: Vec<Correspondence> = hits.into_iter().flatten().collect();
    let cost = correspondences.iter().map(|c| c.dist_sq).sum();
    IcpCost {
        cost,
        correspondences,
        excluded,
    }
}

/// Pose of the correction applied after the initial transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalPose {
    /// Rotation vector.
    pub omega: Vector3<f64>,
    pub tau: Vector3<f64>,
    /// Rotation center.
    pub anchor: Vector3<f64>,
}

impl LocalPose {
    pub fn zero(anchor: Vector3<f64>) -> Self {
        Self {
            omega: Vector3::zeros(),
            tau: Vector3::zeros(),
            anchor,
        }
    }

    pub fn params(&self) -> Vector6<f64> {
        Vector6::new(self.omega.x, self.omega.y, self.omega.z, self.tau.x, self.tau.y, self.tau.z)
    }

    pub fn with_params(&self, x: &Vector6<f64>) -> Self {
        Self {
            omega: x.fixed_rows::<3>(0).into(),
            tau: x.fixed_rows::<3>(3).into(),
            anchor: self.anchor,
        }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        exp_so3(&self.omega)
    }

    pub fn apply(&self, y: &Vector3<f64>) -> Vector3<f64> {
        // Written as an offset from `y` so the zero pose is exactly the identity.
        y + (self.rotation() - Matrix3::identity()) * (y - self.anchor) + self.tau
    }

    pub fn to_transform(&self) -> RigidTransform {
        let r = self.rotation();
        RigidTransform::from_parts_unchecked(r, self.anchor + self.tau - r * self.anchor)
    }

    /// 3×6 Jacobian of `apply(y)` with respect to `(ω, τ)`.
    pub fn jacobian(&self, y: &Vector3<f64>) -> SMatrix<f64, 3, 6> {
        let r = self.rotation();
        let d_omega = -r * skew(&(y - self.anchor)) * right_jacobian_so3(&self.omega);
        let mut j = SMatrix::<f64, 3, 6>::zeros();
        j.fixed_view_mut::<3, 3>(0, 0).copy_from(&d_omega);
        j.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
        j
    }
}

/// Residual vector `pose(yᵢ) − q_π(i)` stacked over correspondences.
pub fn residuals(
    pose: &LocalPose,
    source: &[Vector3<f64>],
    target: &SpatialIndex,
    corr: &[Correspondence],
) -> Vec<Vector3<f64>> {
    corr.iter()
        .map(|c| pose.apply(&source[c.source]) - target.point(c.target))
        .collect()
}

/// Solves the damped normal equations for the update of `pose`.
///
/// `source` holds the points already mapped by the initial transform.
pub fn lm_step(
    pose: &LocalPose,
    source: &[Vector3<f64>],
    target: &SpatialIndex,
    corr: &[Correspondence],
    lambda: f64,
) -> Result<Vector6<f64>> {
    let (jtj, jte) = corr
        .par_chunks(REDUCE_CHUNK)
        .map(|chunk| {
            let mut jtj = Matrix6::zeros();
            let mut jte = Vector6::zeros();
            for c in chunk {
                let y = &source[c.source];
                let e = pose.apply(y) - target.point(c.target);
                let j = pose.jacobian(y);
                jtj += j.transpose() * j;
                jte += j.transpose() * e;
            }
            (jtj, jte)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((Matrix6::zeros(), Vector6::zeros()), |(a, b), (c, d)| (a + c, b + d));
    if jte.iter().all(|&v| v == 0.0) {
        return Ok(Vector6::zeros());
    }
    let mut damped = jtj;
    for k in 0..6 {
        damped[(k, k)] += lambda * jtj[(k, k)];
    }
    let chol = damped.cholesky().ok_or(Error::SingularSystem)?;
    let dx = chol.solve(&(-jte));
    if dx.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem);
    }
    Ok(dx)
}

/// Picks at most `cap` indices uniformly at random, in ascending order.
fn subsample_indices(n: usize, cap: usize, seed: u64) -> Vec<usize> {
    if cap == 0 || n <= cap {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, cap).into_vec();
    idx.sort_unstable();
    idx
}

/// Levenberg–Marquardt ICP from `init`. Returns `correction ∘ init`.
pub fn lm_icp(
    source: &PointCloud,
    target: &PointCloud,
    init: &RigidTransform,
    params: &LmIcpParams,
) -> Result<IcpResult> {
    params.validate()?;
    source.ensure_nonempty()?;
    target.ensure_nonempty()?;
    let index = SpatialIndex::build(target)?;
    lm_icp_indexed(&source.position_vec(), &index, init, params)
}

pub fn lm_icp_indexed(
    source: &[Vector3<f64>],
    target: &SpatialIndex,
    init: &RigidTransform,
    params: &LmIcpParams,
) -> Result<IcpResult> {
    let keep = subsample_indices(source.len(), params.subsample, params.seed);
    let moved: Vec<Vector3<f64>> = keep.iter().map(|&i| init.apply(&source[i])).collect();
    if moved.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let anchor = moved.iter().sum::<Vector3<f64>>() / moved.len() as f64;
    let cutoff = params.max_corr_dist;

    let mut pose = LocalPose::zero(anchor);
    let mut current = associate(&moved, target, cutoff);
    if current.correspondences.is_empty() {
        return Err(Error::NoOverlap { max_corr_dist: cutoff });
    }
    let mut cost = current.truncated(cutoff);
    let mut trace = vec![cost];
    let mut lambda = params.lambda_init;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < params.max_iterations {
        if cost == 0.0 {
            converged = true;
            break;
        }
        iterations += 1;
        let mut accepted = false;
        for _ in 0..=params.max_retries {
            let dx = match lm_step(&pose, &moved, target, &current.correspondences, lambda) {
                Ok(dx) => dx,
                Err(Error::SingularSystem) => {
                    lambda = (lambda * params.lambda_up).min(1e16);
                    continue;
                }
                Err(e) => return Err(e),
            };
            let candidate = pose.with_params(&(pose.params() + dx));
            let cand_t = candidate.to_transform();
            let cand_pts: Vec<Vector3<f64>> = moved.iter().map(|p| cand_t.apply(p)).collect();
            let cand_cost = associate(&cand_pts, target, cutoff);
            let new_cost = cand_cost.truncated(cutoff);
            if !cand_cost.correspondences.is_empty() && new_cost < cost {
                let rel = (cost - new_cost) / cost;
                pose = candidate;
                current = cand_cost;
                cost = new_cost;
                trace.push(cost);
                lambda = (lambda * params.lambda_down).max(1e-12);
                accepted = true;
                if rel < params.cost_tolerance {
                    converged = true;
                }
                break;
            }
            lambda = (lambda * params.lambda_up).min(1e16);
        }
        if !accepted {
            // No descent direction left at any damping we tried.
            converged = true;
        }
        if converged {
            break;
        }
    }

    let transform = if pose.params() == Vector6::zeros() {
        *init
    } else {
        pose.to_transform().compose(init)
    };
    Ok(IcpResult {
        transform,
        final_cost: cost,
        iterations,
        converged,
        cost_trace: trace,
        correspondences: current.correspondences.len(),
        source_points: moved.len(),
    })
}

/// Classic point-to-point ICP with a closed-form rigid update per iteration.
pub fn icp_baseline(
    source: &PointCloud,
    target: &PointCloud,
    init: &RigidTransform,
    max_iterations: usize,
    max_corr_dist: f64,
) -> Result<IcpResult> {
    icp_baseline_with_tolerance(source, target, init, max_iterations, max_corr_dist, 1e-6)
}

pub fn icp_baseline_with_tolerance(
    source: &PointCloud,
    target: &PointCloud,
    init: &RigidTransform,
    max_iterations: usize,
    max_corr_dist: f64,
    cost_tolerance: f64,
) -> Result<IcpResult> {
    source.ensure_nonempty()?;
    target.ensure_nonempty()?;
    if !(max_corr_dist > 0.0) {
        return Err(Error::param("max_corr_dist", "must be positive"));
    }
    let index = SpatialIndex::build(target)?;
    let src = source.position_vec();
    let mut transform = *init;
    let mut state = icp_cost(&src, &index, &transform, max_corr_dist)?;
    let mut cost = state.truncated(max_corr_dist);
    let mut trace = vec![cost];
    let mut iterations = 0;
    let mut converged = cost == 0.0;

    while !converged && iterations < max_iterations {
        iterations += 1;
        let from: Vec<Vector3<f64>> = state
            .correspondences
            .iter()
            .map(|c| transform.apply(&src[c.source]))
            .collect();
        let to: Vec<Vector3<f64>> = state
            .correspondences
            .iter()
            .map(|c| *index.point(c.target))
            .collect();
        let step = match fit_rigid(&from, &to) {
            Ok(fit) => fit.transform,
            Err(Error::DegenerateGeometry(_)) => break,
            Err(e) => return Err(e),
        };
        transform = step.compose(&transform);
        state = icp_cost(&src, &index, &transform, max_corr_dist)?;
        let new_cost = state.truncated(max_corr_dist);
        trace.push(new_cost);
        let rel = (cost - new_cost).abs() / cost.max(f64::MIN_POSITIVE);
        cost = new_cost;
        if cost == 0.0 || rel < cost_tolerance {
            converged = true;
        }
    }
    Ok(IcpResult {
        transform,
        final_cost: cost,
        iterations,
        converged,
        cost_trace: trace,
        correspondences: state.correspondences.len(),
        source_points: src.len(),
    })
}
