//! Accuracy metrics and the end-to-end registration pipeline.

use std::time::Instant;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{Label, PointCloud};
use crate::coarse::{coarse_register, CoarseParams, CoarseResult};
use crate::error::{Error, Result, Stage, StageContext};
use crate::fine::{icp_baseline_with_tolerance, lm_icp, IcpResult, LmIcpParams};
use crate::keypoints::{extract_keypoints, KeyPointSet, KeypointParams};
use crate::separation::{separate_wood_leaf_heuristic, SeparationParams};
use crate::skeleton::{extract_skeleton, SkeletonParams};
use crate::spatial::SpatialIndex;
use crate::transform::RigidTransform;

/// Nearest-neighbour distances from every point of `from` into `to`.
fn nn_distances_sq(from: &[Vector3<f64>], to: &SpatialIndex) -> Vec<f64> {
    from.par_iter().map(|p| to.nearest(p).dist_sq).collect()
}

/// Root mean squared distance from each moved point to its nearest
/// reference point.
pub fn rmse(moved: &PointCloud, reference: &PointCloud) -> Result<f64> {
    moved.ensure_nonempty()?;
    let index = SpatialIndex::build(reference)?;
    Ok(rmse_indexed(&moved.position_vec(), &index))
}

pub fn rmse_indexed(moved: &[Vector3<f64>], reference: &SpatialIndex) -> f64 {
    let d = nn_distances_sq(moved, reference);
    (d.iter().sum::<f64>() / d.len() as f64).sqrt()
}

/// Largest distance from a point of `a` to its nearest point of `b`.
pub fn directed_hausdorff(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    a.ensure_nonempty()?;
    let index = SpatialIndex::build(b)?;
    Ok(directed_indexed(&a.position_vec(), &index))
}

fn directed_indexed(from: &[Vector3<f64>], to: &SpatialIndex) -> f64 {
    nn_distances_sq(from, to)
        .into_iter()
        .fold(0.0, f64::max)
        .sqrt()
}

/// Exact symmetric Hausdorff distance.
pub fn hausdorff(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    a.ensure_nonempty()?;
    b.ensure_nonempty()?;
    let pa = a.position_vec();
    let pb = b.position_vec();
    let ia = SpatialIndex::from_positions(&pa)?;
    let ib = SpatialIndex::from_positions(&pb)?;
    Ok(hausdorff_indexed(&pa, &ia, &pb, &ib))
}

pub fn hausdorff_indexed(
    a: &[Vector3<f64>],
    index_a: &SpatialIndex,
    b: &[Vector3<f64>],
    index_b: &SpatialIndex,
) -> f64 {
    let (ab, ba) = rayon::join(|| directed_indexed(a, index_b), || directed_indexed(b, index_a));
    ab.max(ba)
}

/// RMS distance between where `estimated` and `truth` send each point.
/// Only meaningful when the true motion is known.
pub fn ground_truth_rmse(
    points: &PointCloud,
    estimated: &RigidTransform,
    truth: &RigidTransform,
) -> Result<f64> {
    points.ensure_nonempty()?;
    let sq: Vec<f64> = points
        .points()
        .par_iter()
        .map(|p| (estimated.apply(&p.position) - truth.apply(&p.position)).norm_squared())
        .collect();
    Ok((sq.iter().sum::<f64>() / sq.len() as f64).sqrt())
}

/// Registration method run by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Skeleton key points, tetrahedron matching, then LM-ICP on leaves.
    #[default]
    Amrst,
    /// Point-to-point ICP on the full clouds from the identity.
    Icp,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Amrst => "amrst",
            Method::Icp => "icp",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "amrst" => Ok(Method::Amrst),
            "icp" => Ok(Method::Icp),
            other => Err(Error::param("method", format!("unknown method {other:?}; use amrst or icp"))),
        }
    }
}

/// How the reported RMSE values were computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RmseMode {
    /// Moved source point to nearest target point.
    NearestNeighbor,
    /// Estimated versus true position of each source point.
    GroundTruth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineParams {
    pub max_iterations: usize,
    /// Correspondence cutoff, meters; `None` keeps every pair.
    pub max_corr_dist: Option<f64>,
    pub cost_tolerance: f64,
}

impl Default for BaselineParams {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            max_corr_dist: None,
            cost_tolerance: 1e-6,
        }
    }
}

/// Every parameter that influences a pipeline run.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PipelineParams {
    pub method: Method,
    /// Skip fine alignment and report the coarse transform as final.
    pub coarse_only: bool,
    pub separation: SeparationParams,
    pub skeleton: SkeletonParams,
    pub keypoints: KeypointParams,
    pub coarse: CoarseParams,
    pub fine: LmIcpParams,
    pub baseline: BaselineParams,
}

impl PipelineParams {
    pub fn validate(&self) -> Result<()> {
        self.skeleton.validate()?;
        self.keypoints.validate()?;
        self.coarse.validate()?;
        self.fine.validate()?;
        if self.baseline.max_iterations == 0 {
            return Err(Error::param("baseline.max_iterations", "must be positive"));
        }
        if let Some(d) = self.baseline.max_corr_dist {
            if !(d > 0.0) {
                return Err(Error::param("baseline.max_corr_dist", "must be positive"));
            }
        }
        Ok(())
    }
}

/// Seconds per stage, rounded to milliseconds. Per-scan stages are summed
/// over both scans, which may run concurrently.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageSeconds {
    pub separation: f64,
    pub skeleton: f64,
    pub keypoints: f64,
    pub matching: f64,
    pub fine: f64,
    pub evaluation: f64,
}

/// Summary of the accepted tetrahedron pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchSummary {
    pub keypoints_source: usize,
    pub keypoints_target: usize,
    pub candidates_source: usize,
    pub candidates_target: usize,
    /// `(source key point, target key point)` for each matched vertex.
    pub vertex_pairs: [(usize, usize); 4],
    pub volume_source: f64,
    pub volume_target: f64,
    pub max_vertex_residual: f64,
    pub rms_vertex_residual: f64,
}

impl From<&CoarseResult> for MatchSummary {
    fn from(c: &CoarseResult) -> Self {
        Self {
            keypoints_source: c.stats.keypoints_a,
            keypoints_target: c.stats.keypoints_b,
            candidates_source: c.stats.candidates_a,
            candidates_target: c.stats.candidates_b,
            vertex_pairs: c.tetra_match.keypoint_pairs(),
            volume_source: c.tetra_match.candidate_a.volume,
            volume_target: c.tetra_match.candidate_b.volume,
            max_vertex_residual: c.tetra_match.residual,
            rms_vertex_residual: c.tetra_match.rms_residual,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineSummary {
    pub iterations: usize,
    pub converged: bool,
    pub final_cost: f64,
    pub correspondences: usize,
    pub source_points: usize,
    pub cost_trace: Vec<f64>,
}

impl From<&IcpResult> for FineSummary {
    fn from(r: &IcpResult) -> Self {
        Self {
            iterations: r.iterations,
            converged: r.converged,
            final_cost: r.final_cost,
            correspondences: r.correspondences,
            source_points: r.source_points,
            cost_trace: r.cost_trace.clone(),
        }
    }
}

/// Outcome of registering a source scan onto a target scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationReport {
    pub method: Method,
    pub source: String,
    pub target: String,
    pub source_points: usize,
    pub target_points: usize,
    /// Maps the source scan into the target frame after the coarse stage.
    pub coarse_transform: RigidTransform,
    /// Final transform (equal to the coarse one when fine alignment is skipped).
    pub fine_transform: RigidTransform,
    pub rmse_mode: RmseMode,
    pub coarse_rmse: f64,
    pub fine_rmse: f64,
    pub coarse_hausdorff: f64,
    pub fine_hausdorff: f64,
    /// Everything up to and including tetrahedron matching.
    pub coarse_seconds: f64,
    pub fine_seconds: f64,
    pub total_seconds: f64,
    pub stage_seconds: StageSeconds,
    pub params_used: PipelineParams,
    pub match_detail: Option<MatchSummary>,
    pub fine_detail: Option<FineSummary>,
}

impl RegistrationReport {
    /// Same report with every timing field zeroed, for reproducibility checks.
    pub fn without_timings(&self) -> RegistrationReport {
        RegistrationReport {
            coarse_seconds: 0.0,
            fine_seconds: 0.0,
            total_seconds: 0.0,
            stage_seconds: StageSeconds::default(),
            ..self.clone()
        }
    }

    /// Rewrites the RMSE fields as ground-truth errors of the source points.
    pub fn with_ground_truth_rmse(
        mut self,
        source: &PointCloud,
        truth: &RigidTransform,
    ) -> Result<RegistrationReport> {
        self.coarse_rmse = ground_truth_rmse(source, &self.coarse_transform, truth)?;
        self.fine_rmse = ground_truth_rmse(source, &self.fine_transform, truth)?;
        self.rmse_mode = RmseMode::GroundTruth;
        Ok(self)
    }
}

/// One benchmark CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub pair: String,
    pub method: Method,
    pub status: String,
    pub rmse_mode: Option<RmseMode>,
    pub coarse_rmse: Option<f64>,
    pub coarse_hausdorff: Option<f64>,
    pub fine_rmse: Option<f64>,
    pub fine_hausdorff: Option<f64>,
    pub coarse_seconds: Option<f64>,
    pub fine_seconds: Option<f64>,
    pub total_seconds: Option<f64>,
}

impl BenchRow {
    pub fn from_report(pair: impl Into<String>, r: &RegistrationReport) -> Self {
        Self {
            pair: pair.into(),
            method: r.method,
            status: "ok".into(),
            rmse_mode: Some(r.rmse_mode),
            coarse_rmse: Some(r.coarse_rmse),
            coarse_hausdorff: Some(r.coarse_hausdorff),
            fine_rmse: Some(r.fine_rmse),
            fine_hausdorff: Some(r.fine_hausdorff),
            coarse_seconds: Some(r.coarse_seconds),
            fine_seconds: Some(r.fine_seconds),
            total_seconds: Some(r.total_seconds),
        }
    }

    pub fn failed(pair: impl Into<String>, method: Method, error: &Error) -> Self {
        Self {
            pair: pair.into(),
            method,
            status: format!("error: {error}"),
            rmse_mode: None,
            coarse_rmse: None,
            coarse_hausdorff: None,
            fine_rmse: None,
            fine_hausdorff: None,
            coarse_seconds: None,
            fine_seconds: None,
            total_seconds: None,
        }
    }
}

fn millis(seconds: f64) -> f64 {
    (seconds * 1000.0).round() / 1000.0
}

struct Timer(Instant);

impl Timer {
    fn start() -> Self {
        Timer(Instant::now())
    }

    fn lap(&mut self) -> f64 {
        let now = Instant::now();
        let s = (now - self.0).as_secs_f64();
        self.0 = now;
        s
    }
}

/// Key points of one scan: labels, wood skeleton, key point selection.
pub fn scan_keypoints(
    scan: &PointCloud,
    params: &PipelineParams,
) -> Result<(PointCloud, KeyPointSet, [f64; 3])> {
    let mut timer = Timer::start();
    let labeled = separate_wood_leaf_heuristic(scan, &params.separation).stage(Stage::Separation)?;
    let t_sep = timer.lap();
    let skeleton = extract_skeleton(&labeled.with_label(Label::Wood), &params.skeleton).stage(Stage::Skeleton)?;
    let t_skel = timer.lap();
    let kps = extract_keypoints(&skeleton, &params.keypoints).stage(Stage::Keypoints)?;
    let t_kp = timer.lap();
    Ok((labeled, kps, [t_sep, t_skel, t_kp]))
}

/// Registers `source` onto `target` and evaluates the result on the whole
/// clouds with nearest-neighbour RMSE and Hausdorff distance.
pub fn run_pipeline(
    source: &PointCloud,
    target: &PointCloud,
    params: &PipelineParams,
) -> Result<RegistrationReport> {
    params.validate()?;
    source.ensure_nonempty().stage(Stage::Io)?;
    target.ensure_nonempty().stage(Stage::Io)?;
    let started = Instant::now();
    let mut secs = StageSeconds::default();

    let mut coarse_wall = 0.0;
    let (coarse_transform, fine_transform, match_detail, fine_detail) = match params.method {
        Method::Amrst => {
            let mut timer = Timer::start();
            let (a, b) = rayon::join(|| scan_keypoints(source, params), || scan_keypoints(target, params));
            coarse_wall += timer.lap();
            let (labeled_a, kps_a, ta) = a?;
            let (labeled_b, kps_b, tb) = b?;
            secs.separation = ta[0] + tb[0];
            secs.skeleton = ta[1] + tb[1];
            secs.keypoints = ta[2] + tb[2];
            let coarse = coarse_register(&kps_a, &kps_b, &params.coarse).stage(Stage::Coarse)?;
            secs.matching = timer.lap();
            coarse_wall += secs.matching;
            if params.coarse_only {
                (coarse.transform, coarse.transform, Some(MatchSummary::from(&coarse)), None)
            } else {
                let leaves_a = labeled_a.with_label(Label::Leaf);
                let leaves_b = labeled_b.with_label(Label::Leaf);
                let fine = lm_icp(&leaves_a, &leaves_b, &coarse.transform, &params.fine).stage(Stage::Fine)?;
                secs.fine = timer.lap();
                (
                    coarse.transform,
                    fine.transform,
                    Some(MatchSummary::from(&coarse)),
                    Some(FineSummary::from(&fine)),
                )
            }
        }
        Method::Icp => {
            let mut timer = Timer::start();
            let init = RigidTransform::identity();
            let result = icp_baseline_with_tolerance(
                source,
                target,
                &init,
                params.baseline.max_iterations,
                params.baseline.max_corr_dist.unwrap_or(f64::INFINITY),
                params.baseline.cost_tolerance,
            )
            .stage(Stage::Fine)?;
            secs.fine = timer.lap();
            (init, result.transform, None, Some(FineSummary::from(&result)))
        }
    };

    let mut timer = Timer::start();
    let (coarse_rmse, coarse_hausdorff, fine_rmse, fine_hausdorff) =
        evaluate(source, target, &coarse_transform, &fine_transform).stage(Stage::Evaluation)?;
    secs.evaluation = timer.lap();
    let total = started.elapsed().as_secs_f64();

    Ok(RegistrationReport {
        method: params.method,
        source: source.frame_id.clone(),
        target: target.frame_id.clone(),
        source_points: source.len(),
        target_points: target.len(),
        coarse_transform,
        fine_transform,
        rmse_mode: RmseMode::NearestNeighbor,
        coarse_rmse,
        fine_rmse,
        coarse_hausdorff,
        fine_hausdorff,
        coarse_seconds: millis(coarse_wall),
        fine_seconds: millis(secs.fine),
        total_seconds: millis(total),
        stage_seconds: StageSeconds {
            separation: millis(secs.separation),
            skeleton: millis(secs.skeleton),
            keypoints: millis(secs.keypoints),
            matching: millis(secs.matching),
            fine: millis(secs.fine),
            evaluation: millis(secs.evaluation),
        },
        params_used: *params,
        match_detail,
        fine_detail,
    })
}

fn evaluate(
    source: &PointCloud,
    target: &PointCloud,
    coarse: &RigidTransform,
    fine: &RigidTransform,
) -> Result<(f64, f64, f64, f64)> {
    let pt = target.position_vec();
    let it = SpatialIndex::from_positions(&pt)?;
    let metrics = |t: &RigidTransform| -> Result<(f64, f64)> {
        let moved: Vec<Vector3<f64>> = source.positions().map(|p| t.apply(&p)).collect();
        let im = SpatialIndex::from_positions(&moved)?;
        Ok((rmse_indexed(&moved, &it), hausdorff_indexed(&moved, &im, &pt, &it)))
    };
    let (cr, ch) = metrics(coarse)?;
    let (fr, fh) = if fine == coarse { (cr, ch) } else { metrics(fine)? };
    Ok((cr, ch, fr, fh))
}
