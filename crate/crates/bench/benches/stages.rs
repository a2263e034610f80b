use criterion::{black_box, criterion_group, criterion_main, Criterion};
use treereg_bench::{rotated_pair, tuned_params};
use treereg_core::eval::scan_keypoints;
use treereg_core::{
    coarse_register, extract_skeleton, lm_icp, separate_wood_leaf_heuristic, Label, SpatialIndex,
};

fn spatial(c: &mut Criterion) {
    let pair = rotated_pair(1);
    let index = SpatialIndex::build(&pair.target).unwrap();
    let queries = pair.source.position_vec();
    c.bench_function("kdtree_build", |b| b.iter(|| SpatialIndex::build(black_box(&pair.target))));
    c.bench_function("kdtree_nearest_all", |b| {
        b.iter(|| queries.iter().map(|q| index.nearest(q).dist_sq).sum::<f64>())
    });
}

fn stages(c: &mut Criterion) {
    let pair = rotated_pair(2);
    let params = tuned_params();
    let labeled = separate_wood_leaf_heuristic(&pair.source, &params.separation).unwrap();
    let wood = labeled.with_label(Label::Wood);
    c.bench_function("skeleton", |b| b.iter(|| extract_skeleton(black_box(&wood), &params.skeleton)));

    let (la, ka, _) = scan_keypoints(&pair.source, &params).unwrap();
    let (lb, kb, _) = scan_keypoints(&pair.target, &params).unwrap();
    c.bench_function("coarse_match", |b| b.iter(|| coarse_register(black_box(&ka), &kb, &params.coarse)));

    let coarse = coarse_register(&ka, &kb, &params.coarse).unwrap();
    let leaves_a = la.with_label(Label::Leaf);
    let leaves_b = lb.with_label(Label::Leaf);
    c.bench_function("lm_icp_leaves", |b| {
        b.iter(|| lm_icp(black_box(&leaves_a), &leaves_b, &coarse.transform, &params.fine))
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = spatial, stages
}
criterion_main!(benches);
