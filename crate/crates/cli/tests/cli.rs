use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const SMALL_TREE: &str = r#"
rotation_deg = 120.0
translation = [1.5, -1.0, 0.3]

[tree]
branching_depth = 3
"#;

fn treereg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_treereg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

/// Generates a synthetic pair into `dir` from the small-tree recipe.
fn synth_pair(dir: &Path, seed: u64) -> (PathBuf, PathBuf, PathBuf) {
    let recipe = write(dir, "recipe.toml", SMALL_TREE);
    let out = dir.join(format!("pair{seed}"));
    let o = treereg(&["synth", "--out-dir", s(&out), "--spec", s(&recipe), "--seed", &seed.to_string()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    (out.join("source.xyz"), out.join("target.xyz"), out.join("truth.json"))
}

const TUNED: [&str; 6] = ["--bin-width", "0.4", "--delta", "0.05", "--max-corr-dist", "0.1"];

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn is_identity(t: &Value) -> bool {
    let r: Vec<f64> = t["rotation"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let tr: Vec<f64> = t["translation"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    r == eye && tr == [0.0; 3]
}

#[test]
fn self_registration_is_identity() {
    let dir = TempDir::new().unwrap();
    let (source, _, _) = synth_pair(dir.path(), 4);
    let report = dir.path().join("r.json");
    let mut args = vec!["register", s(&source), s(&source), "--report", s(&report)];
    args.extend(TUNED);
    let o = treereg(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&report);
    assert!(is_identity(&r["fine_transform"]), "{}", r["fine_transform"]);
    assert_eq!(r["fine_rmse"].as_f64(), Some(0.0));
    assert_eq!(r["fine_hausdorff"].as_f64(), Some(0.0));
    assert_eq!(r["rmse_mode"], "nearest_neighbor");
}

#[test]
fn synthetic_pair_with_truth_recovers_motion() {
    let dir = TempDir::new().unwrap();
    let (source, target, truth) = synth_pair(dir.path(), 3);
    let report = dir.path().join("r.json");
    let moved = dir.path().join("moved.xyz");
    let mut args = vec![
        "register",
        s(&source),
        s(&target),
        "--truth",
        s(&truth),
        "--report",
        s(&report),
        "--out",
        s(&moved),
    ];
    args.extend(TUNED);
    let o = treereg(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&report);
    assert_eq!(r["rmse_mode"], "ground_truth");
    let fine = r["fine_rmse"].as_f64().unwrap();
    assert!(fine < 0.03, "fine rmse {fine}");
    for key in ["coarse_seconds", "fine_seconds", "total_seconds"] {
        assert!(r[key].as_f64().unwrap() >= 0.0);
    }
    let total = r["total_seconds"].as_f64().unwrap();
    let parts = r["coarse_seconds"].as_f64().unwrap() + r["fine_seconds"].as_f64().unwrap();
    // Each value is rounded to the millisecond independently.
    assert!(total + 0.002 >= parts, "total {total} < coarse + fine {parts}");
    let lines_in = fs::read_to_string(&source).unwrap().lines().count();
    let lines_out = fs::read_to_string(&moved).unwrap().lines().count();
    assert_eq!(lines_in, lines_out);
}

#[test]
fn report_goes_to_stdout_without_report_flag() {
    let dir = TempDir::new().unwrap();
    let (source, _, _) = synth_pair(dir.path(), 5);
    let mut args = vec!["register", s(&source), s(&source)];
    args.extend(TUNED);
    let o = treereg(&args);
    assert!(o.status.success());
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["method"], "amrst");
}

#[test]
fn invalid_parameter_fails_before_reading_input() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("absent.xyz");
    let o = treereg(&["register", s(&missing), s(&missing), "--epsilon", "0.5"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("epsilon"), "{err}");
    assert!(!err.contains("absent.xyz"), "{err}");
}

#[test]
fn unreadable_input_exits_with_io_code() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("absent.xyz");
    let o = treereg(&["register", s(&missing), s(&missing)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("absent.xyz"));
}

#[test]
fn malformed_input_exits_with_io_code() {
    let dir = TempDir::new().unwrap();
    let bad = write(dir.path(), "bad.xyz", "0 0 0\n1 2\n");
    let o = treereg(&["register", s(&bad), s(&bad)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.xyz:2:"));
}

/// Dense wood samples along a segment, labelled as wood.
fn segment(out: &mut String, a: [f64; 3], b: [f64; 3], n: usize) {
    for i in 0..=n {
        let t = i as f64 / n as f64;
        let p: Vec<f64> = (0..3).map(|k| a[k] + t * (b[k] - a[k])).collect();
        writeln!(out, "{} {} {} 200 0", p[0], p[1], p[2]).unwrap();
    }
}

#[test]
fn y_shaped_tree_has_one_branch_point() {
    let dir = TempDir::new().unwrap();
    let mut text = String::new();
    segment(&mut text, [0.0, 0.0, 0.0], [0.0, 0.0, 3.0], 300);
    segment(&mut text, [0.0, 0.0, 3.0], [1.5, 0.0, 4.5], 212);
    segment(&mut text, [0.0, 0.0, 3.0], [-1.5, 0.0, 4.5], 212);
    let input = write(dir.path(), "y.xyz", &text);
    let out = dir.path().join("kp.txt");
    let o = treereg(&["keypoints", s(&input), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows: Vec<Vec<String>> = fs::read_to_string(&out)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split_whitespace().map(str::to_owned).collect())
        .collect();
    let kinds = |k: &str| rows.iter().filter(|r| r[3] == k).count();
    assert_eq!(kinds("root"), 1);
    assert_eq!(kinds("branch"), 1);
    assert_eq!(kinds("end"), 2);
    let branch = rows.iter().find(|r| r[3] == "branch").unwrap();
    let z: f64 = branch[2].parse().unwrap();
    assert!((z - 3.0).abs() < 0.3, "branch height {z}");
}

#[test]
fn single_bin_cloud_gives_one_node_skeleton() {
    let dir = TempDir::new().unwrap();
    let mut text = String::new();
    for i in 0..5 {
        for j in 0..5 {
            writeln!(text, "{} {} 0 200 0", i as f64 * 0.01, j as f64 * 0.01).unwrap();
        }
    }
    let input = write(dir.path(), "flat.xyz", &text);
    let nodes = dir.path().join("nodes.xyz");
    let edges = dir.path().join("edges.txt");
    let o = treereg(&["skeleton", s(&input), "--nodes", s(&nodes), "--edges", s(&edges)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let node_lines: Vec<String> = fs::read_to_string(&nodes).unwrap().lines().map(str::to_owned).collect();
    assert_eq!(node_lines.len(), 1);
    let c: Vec<f64> = node_lines[0].split_whitespace().map(|t| t.parse().unwrap()).collect();
    assert!((c[0] - 0.02).abs() < 1e-12 && (c[1] - 0.02).abs() < 1e-12 && c[2] == 0.0);
    assert!(fs::read_to_string(&edges).unwrap().trim().is_empty());
}

#[test]
fn bench_writes_one_row_per_pair_and_method() {
    let dir = TempDir::new().unwrap();
    let mut manifest = String::from("# three synthetic pairs\n");
    for seed in 1..=3 {
        let name = format!("pair{seed}.toml");
        write(dir.path(), &name, &format!("scan_seed = {seed}\n{SMALL_TREE}\nseed = {seed}\n"));
        writeln!(manifest, "synth:{name}").unwrap();
    }
    let manifest = write(dir.path(), "pairs.txt", &manifest);
    let csv_path = dir.path().join("bench.csv");
    let mut args = vec!["bench", s(&manifest), "--out", s(&csv_path)];
    args.extend(TUNED);
    let o = treereg(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut reader = csv::Reader::from_path(&csv_path).unwrap();
    let headers = reader.headers().unwrap().clone();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 6);
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let methods: Vec<&str> = rows.iter().map(|r| &r[col("method")]).collect();
    assert_eq!(methods, ["amrst", "icp", "amrst", "icp", "amrst", "icp"]);
    for r in &rows {
        assert_eq!(&r[col("rmse_mode")], "ground_truth");
    }
}

#[test]
fn bench_reports_missing_pair_as_failed_row() {
    let dir = TempDir::new().unwrap();
    let manifest = write(dir.path(), "pairs.txt", "missing_a.xyz missing_b.xyz\n");
    let o = treereg(&["bench", s(&manifest)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut reader = csv::Reader::from_reader(o.stdout.as_slice());
    let status = reader.headers().unwrap().iter().position(|h| h == "status").unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| &r[status] != "ok"));
}

fn strip_timings(mut v: Value) -> Value {
    let obj = v.as_object_mut().unwrap();
    for key in ["coarse_seconds", "fine_seconds", "total_seconds", "stage_seconds"] {
        obj.remove(key);
    }
    v
}

#[test]
fn repeated_runs_are_identical_apart_from_timings() {
    let dir = TempDir::new().unwrap();
    let (source, target, _) = synth_pair(dir.path(), 6);
    let run = |name: &str| {
        let report = dir.path().join(name);
        let mut args = vec!["register", s(&source), s(&target), "--report", s(&report)];
        args.extend(TUNED);
        assert!(treereg(&args).status.success());
        strip_timings(read_json(&report))
    };
    assert_eq!(run("a.json"), run("b.json"));
}
