use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;
use treereg_core::eval::{run_pipeline, BenchRow, Method, PipelineParams, RegistrationReport};
use treereg_core::io::{read_cloud, report_json, write_cloud, write_keypoints, write_report, write_skeleton, CloudFileFormat};
use treereg_core::keypoints::extract_keypoints;
use treereg_core::separation::separate_wood_leaf_heuristic;
use treereg_core::skeleton::extract_skeleton;
use treereg_core::synth::synthetic_pair;
use treereg_core::{Error, Label, PointCloud, RigidTransform, Stage};

use crate::args::{BenchArgs, FormatArg, KeypointsArgs, RegisterArgs, SkeletonArgs, SynthArgs};
use crate::recipe::PairRecipe;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },
    #[error("cannot write {path}: {message}")]
    Output { path: PathBuf, message: String },
}

impl CliError {
    /// Process exit code: one per pipeline stage, plus input and output.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) => match e.stage() {
                Some(Stage::Io) => 3,
                Some(Stage::Separation) => 4,
                Some(Stage::Skeleton) => 5,
                Some(Stage::Keypoints) => 6,
                Some(Stage::Coarse) => 7,
                Some(Stage::Fine) => 8,
                Some(Stage::Evaluation) => 9,
                None => match e {
                    Error::InvalidParameter { .. } => 2,
                    Error::Io { .. } | Error::Parse { .. } | Error::UnsupportedFormat(_) => 3,
                    Error::Serialize(_) => 10,
                    _ => 1,
                },
            },
            CliError::Input { .. } => 3,
            CliError::Output { .. } => 10,
        }
    }

    /// Suggested next step for the user.
    pub fn hint(&self) -> Option<&'static str> {
        let CliError::Core(e) = self else { return None };
        Some(match (e.stage(), e.root()) {
            (_, Error::InvalidParameter { .. }) => "check the flag ranges in `treereg help`",
            (_, Error::InsufficientKeypoints { .. }) => {
                "the skeleton has too few branch and end points; try a different --bin-width or a larger --depth"
            }
            (_, Error::NoMatch) => "no congruent key point tetrahedra; loosen --epsilon/--beta/--delta (each at most 0.1)",
            (_, Error::NoOverlap { .. }) => {
                "the coarse transform leaves no leaf points within --max-corr-dist; inspect the coarse stage with --coarse-only"
            }
            (_, Error::EmptyCloud) => "a required point subset is empty; check the wood/leaf labels of the input",
            (Some(Stage::Io), _) | (None, _) => "check that the input files exist and are XYZ or ASCII PLY",
            _ => return None,
        })
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn load(path: &Path, format: Option<FormatArg>) -> CliResult<PointCloud> {
    Ok(read_cloud(path, format.map(CloudFileFormat::from)).map_err(|e| Error::Stage {
        stage: Stage::Io,
        source: Box::new(e),
    })?)
}

fn read_truth(path: &Path) -> CliResult<RigidTransform> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Input {
        path: path.into(),
        message: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Input {
        path: path.into(),
        message: format!("not a transform: {e}"),
    })
}

pub fn register(args: &RegisterArgs) -> CliResult<()> {
    let params = args.pipeline.params(args.method)?;
    let truth = args.truth.as_deref().map(read_truth).transpose()?;
    let source = load(&args.source, args.format)?;
    let target = load(&args.target, args.format)?;
    let mut report = run_pipeline(&source, &target, &params)?;
    if let Some(t) = &truth {
        report = report.with_ground_truth_rmse(&source, t)?;
    }
    if let Some(out) = &args.out {
        write_cloud(&report.fine_transform.apply_cloud(&source), out, None)?;
    }
    emit_report(&report, args.report.as_deref())
}

fn emit_report(report: &RegistrationReport, path: Option<&Path>) -> CliResult<()> {
    match path {
        Some(p) => write_report(report, p)?,
        None => println!("{}", report_json(report)?),
    }
    Ok(())
}

fn wood_of(cloud: &PointCloud, params: &PipelineParams) -> CliResult<PointCloud> {
    let labeled = separate_wood_leaf_heuristic(cloud, &params.separation).map_err(|e| Error::Stage {
        stage: Stage::Separation,
        source: Box::new(e),
    })?;
    Ok(labeled.with_label(Label::Wood))
}

fn in_stage<T>(stage: Stage, r: treereg_core::Result<T>) -> CliResult<T> {
    r.map_err(|e| {
        CliError::Core(Error::Stage {
            stage,
            source: Box::new(e),
        })
    })
}

pub fn skeleton(args: &SkeletonArgs) -> CliResult<()> {
    let params = args.skeleton.params()?;
    let cloud = load(&args.input, args.format)?;
    let wood = wood_of(&cloud, &params)?;
    let skel = in_stage(Stage::Skeleton, extract_skeleton(&wood, &params.skeleton))?;
    write_skeleton(&skel, &args.nodes, &args.edges)?;
    Ok(())
}

pub fn keypoints(args: &KeypointsArgs) -> CliResult<()> {
    let params = args.skeleton.params()?;
    let cloud = load(&args.input, args.format)?;
    let wood = wood_of(&cloud, &params)?;
    let skel = in_stage(Stage::Skeleton, extract_skeleton(&wood, &params.skeleton))?;
    let kps = in_stage(Stage::Keypoints, extract_keypoints(&skel, &params.keypoints))?;
    write_keypoints(&kps, &args.out)?;
    Ok(())
}

fn read_recipe(path: &Path) -> CliResult<PairRecipe> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Input {
        path: path.into(),
        message: e.to_string(),
    })?;
    toml::from_str(&text).map_err(|e| CliError::Input {
        path: path.into(),
        message: e.to_string(),
    })
}

pub fn synth(args: &SynthArgs) -> CliResult<()> {
    let mut recipe = match &args.spec {
        Some(p) => read_recipe(p)?,
        None => PairRecipe::default(),
    };
    if let Some(seed) = args.seed {
        recipe = recipe.with_seed(seed);
    }
    let pair = synthetic_pair(&recipe.to_spec()?)?;
    fs::create_dir_all(&args.out_dir).map_err(|e| CliError::Output {
        path: args.out_dir.clone(),
        message: e.to_string(),
    })?;
    write_cloud(&pair.source, args.out_dir.join("source.xyz"), None)?;
    write_cloud(&pair.target, args.out_dir.join("target.xyz"), None)?;
    let truth_path = args.out_dir.join("truth.json");
    let json = serde_json::to_string_pretty(&pair.truth).map_err(|e| Error::Serialize(e.to_string()))?;
    fs::write(&truth_path, json + "\n").map_err(|e| CliError::Output {
        path: truth_path,
        message: e.to_string(),
    })?;
    Ok(())
}

/// One manifest entry, resolved.
#[derive(Debug, Clone, PartialEq)]
pub enum PairSource {
    Files(PathBuf, PathBuf),
    Synth(PathBuf),
}

impl PairSource {
    pub fn label(&self) -> String {
        match self {
            PairSource::Files(a, b) => format!("{} {}", a.display(), b.display()),
            PairSource::Synth(p) => format!("synth:{}", p.display()),
        }
    }
}

/// Parses a manifest; relative paths resolve against `base`.
pub fn parse_manifest(text: &str, base: &Path, path: &Path) -> CliResult<Vec<PairSource>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(spec) = line.strip_prefix("synth:") {
            out.push(PairSource::Synth(base.join(spec.trim())));
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            [a, b] => out.push(PairSource::Files(base.join(a), base.join(b))),
            _ => {
                return Err(CliError::Input {
                    path: path.into(),
                    message: format!("line {}: expected `source target` or `synth:<spec>`", n + 1),
                })
            }
        }
    }
    Ok(out)
}

fn load_pair(entry: &PairSource) -> CliResult<(PointCloud, PointCloud, Option<RigidTransform>)> {
    match entry {
        PairSource::Files(a, b) => Ok((load(a, None)?, load(b, None)?, None)),
        PairSource::Synth(spec) => {
            let pair = synthetic_pair(&read_recipe(spec)?.to_spec()?)?;
            Ok((pair.source, pair.target, Some(pair.truth)))
        }
    }
}

fn bench_one(
    source: &PointCloud,
    target: &PointCloud,
    truth: Option<&RigidTransform>,
    params: &PipelineParams,
) -> treereg_core::Result<RegistrationReport> {
    let report = run_pipeline(source, target, params)?;
    match truth {
        Some(t) => report.with_ground_truth_rmse(source, t),
        None => Ok(report),
    }
}

pub fn bench(args: &BenchArgs) -> CliResult<()> {
    let base = args.pipeline.params(crate::args::MethodArg::Amrst)?;
    let text = fs::read_to_string(&args.manifest).map_err(|e| CliError::Input {
        path: args.manifest.clone(),
        message: e.to_string(),
    })?;
    let dir = args.manifest.parent().unwrap_or(Path::new("."));
    let entries = parse_manifest(&text, dir, &args.manifest)?;

    let mut rows = Vec::new();
    for entry in &entries {
        let label = entry.label();
        let loaded = load_pair(entry);
        for method in [Method::Amrst, Method::Icp] {
            let params = PipelineParams { method, ..base };
            let row = match &loaded {
                Ok((s, t, truth)) => match bench_one(s, t, truth.as_ref(), &params) {
                    Ok(r) => BenchRow::from_report(&label, &r),
                    Err(e) => BenchRow::failed(&label, method, &e),
                },
                Err(CliError::Core(e)) => BenchRow::failed(&label, method, e),
                Err(e) => BenchRow::failed(&label, method, &Error::UnsupportedFormat(e.to_string())),
            };
            rows.push(row);
        }
    }

    let write = |w: Box<dyn std::io::Write>| -> Result<(), csv::Error> {
        let mut csv = csv::Writer::from_writer(w);
        for row in &rows {
            csv.serialize(row)?;
        }
        csv.flush()?;
        Ok(())
    };
    let (target, result) = match &args.out {
        Some(p) => {
            let file = fs::File::create(p).map_err(|e| CliError::Output {
                path: p.clone(),
                message: e.to_string(),
            })?;
            (p.clone(), write(Box::new(file)))
        }
        None => (PathBuf::from("<stdout>"), write(Box::new(std::io::stdout()))),
    };
    result.map_err(|e| CliError::Output {
        path: target,
        message: e.to_string(),
    })
}
