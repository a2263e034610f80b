//! Marker-free registration of terrestrial laser scans of single trees.
//!
//! The pipeline labels wood and leaf points, extracts a skeleton from the
//! wood, picks branch and end points of the skeleton as key points, aligns
//! the scans coarsely by matching congruent key point tetrahedra, and
//! refines the result with Levenberg–Marquardt ICP on the leaf points.

pub mod cloud;
pub mod coarse;
pub mod error;
pub mod eval;
pub mod fine;
pub mod io;
pub mod keypoints;
pub mod rigid;
pub mod separation;
pub mod skeleton;
pub mod spatial;
pub mod synth;
pub mod transform;

pub use cloud::{Aabb, Label, Point, PointCloud};
pub use coarse::{coarse_register, CoarseParams, CoarseResult, MatchStrategy, TetraMatch};
pub use error::{Error, Result, Stage};
pub use eval::{hausdorff, rmse, run_pipeline, Method, PipelineParams, RegistrationReport, RmseMode};
pub use fine::{icp_baseline, lm_icp, IcpResult, LmIcpParams};
pub use keypoints::{extract_keypoints, KeyPoint, KeyPointKind, KeyPointSet, KeypointParams};
pub use separation::{separate_wood_leaf_heuristic, SeparationParams};
pub use skeleton::{extract_skeleton, SkeletonGraph, SkeletonParams};
pub use spatial::SpatialIndex;
pub use synth::{generate_tree, simulate_scan, ScanSpec, TreeSpec};
pub use transform::RigidTransform;
