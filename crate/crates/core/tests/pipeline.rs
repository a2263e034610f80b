mod common;

use common::{harness_params, pair_with};
use treereg_core::eval::{run_pipeline, Method, RegistrationReport, RmseMode};
use treereg_core::io::{read_cloud, write_cloud, write_report};
use treereg_core::synth::{synthetic_pair, PairSpec, TreeSpec};
use treereg_core::{Label, RigidTransform};

fn small_tree(seed: u64) -> TreeSpec {
    TreeSpec {
        branching_depth: 3,
        ..TreeSpec::with_seed(seed)
    }
}

#[test]
fn self_registration_is_exact_identity() {
    let pair = pair_with(small_tree(11), RigidTransform::identity(), 11);
    let report = run_pipeline(&pair.source, &pair.source, &harness_params()).unwrap();
    assert_eq!(report.coarse_transform, RigidTransform::identity());
    assert_eq!(report.fine_transform, RigidTransform::identity());
    assert_eq!(report.fine_rmse, 0.0);
    assert_eq!(report.fine_hausdorff, 0.0);
    assert_eq!(report.coarse_hausdorff, 0.0);
}

#[test]
fn coarse_only_reports_coarse_as_final() {
    let pair = pair_with(small_tree(12), common::rotated_120(), 12);
    let mut params = harness_params();
    params.coarse_only = true;
    let report = run_pipeline(&pair.source, &pair.target, &params).unwrap();
    assert_eq!(report.coarse_transform, report.fine_transform);
    assert_eq!(report.coarse_rmse, report.fine_rmse);
    assert!(report.fine_detail.is_none());
    assert!(report.match_detail.is_some());
}

#[test]
fn fine_stage_improves_on_coarse_against_truth() {
    let pair = pair_with(small_tree(13), common::rotated_120(), 13);
    let report = run_pipeline(&pair.source, &pair.target, &harness_params())
        .unwrap()
        .with_ground_truth_rmse(&pair.source, &pair.truth)
        .unwrap();
    assert_eq!(report.rmse_mode, RmseMode::GroundTruth);
    assert!(report.fine_rmse <= report.coarse_rmse, "{} > {}", report.fine_rmse, report.coarse_rmse);
    assert!(report.fine_rmse < 0.03);
    assert!(report.total_seconds + 0.002 >= report.coarse_seconds + report.fine_seconds);
}

#[test]
fn icp_recovers_small_offset() {
    let truth = RigidTransform::from_translation(nalgebra::Vector3::new(0.03, -0.02, 0.01));
    // Unbounded ICP is biased by partial overlap, so both scans see the whole tree.
    let pair = synthetic_pair(&PairSpec {
        tree: small_tree(14),
        transform: truth,
        noise_sigma: common::NOISE_SIGMA,
        occlusion_fraction: 0.0,
        scan_seed: 28,
    })
    .unwrap();
    let mut params = harness_params();
    params.method = Method::Icp;
    let report = run_pipeline(&pair.source, &pair.target, &params)
        .unwrap()
        .with_ground_truth_rmse(&pair.source, &pair.truth)
        .unwrap();
    assert_eq!(report.coarse_transform, RigidTransform::identity());
    assert!(report.match_detail.is_none());
    assert!(report.fine_rmse < 0.01, "{}", report.fine_rmse);
}

#[test]
fn report_round_trips_through_json() {
    let pair = pair_with(small_tree(15), common::rotated_120(), 15);
    let report = run_pipeline(&pair.source, &pair.target, &harness_params()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    write_report(&report, &path).unwrap();
    let back: RegistrationReport = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(back, report);
}

#[test]
fn scans_round_trip_through_both_formats() {
    let pair = pair_with(small_tree(16), common::rotated_120(), 16);
    let dir = tempfile::tempdir().unwrap();
    for name in ["scan.xyz", "scan.ply"] {
        let path = dir.path().join(name);
        write_cloud(&pair.source, &path, None).unwrap();
        let back = read_cloud(&path, None).unwrap();
        assert_eq!(back.len(), pair.source.len());
        for (a, b) in back.points().iter().zip(pair.source.points()) {
            assert_eq!(a.position, b.position);
            assert_eq!(a.intensity, b.intensity);
            assert_eq!(a.label, b.label);
        }
        assert!(back.count_label(Label::Wood) > 0 && back.count_label(Label::Leaf) > 0);
    }
}
