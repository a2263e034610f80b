//! Shared fixtures for the benchmarks.

use treereg_core::eval::PipelineParams;
use treereg_core::synth::{synthetic_pair, PairSpec, SyntheticPair, TreeSpec};
use treereg_core::RigidTransform;

/// Scan pair of a default synthetic tree under a 120° turn about the vertical.
pub fn rotated_pair(seed: u64) -> SyntheticPair {
    synthetic_pair(&PairSpec {
        tree: TreeSpec::with_seed(seed),
        transform: RigidTransform::rotation_z_deg(120.0),
        scan_seed: seed,
        ..PairSpec::default()
    })
    .expect("default spec is valid")
}

/// Parameters that register the default synthetic trees reliably.
pub fn tuned_params() -> PipelineParams {
    let mut p = PipelineParams::default();
    p.skeleton.bin_width = 0.4;
    p.coarse.delta = 0.05;
    p.fine.max_corr_dist = 0.1;
    p
}
