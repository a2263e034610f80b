use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use treereg_core::coarse::MatchStrategy;
use treereg_core::eval::{Method, PipelineParams};
use treereg_core::io::CloudFileFormat;

#[derive(Debug, Parser)]
#[command(name = "treereg", version, about = "Marker-free registration of single-tree laser scans")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Register a source scan onto a target scan.
    Register(RegisterArgs),
    /// Extract the wood skeleton of a scan.
    Skeleton(SkeletonArgs),
    /// Extract skeleton key points of a scan.
    Keypoints(KeypointsArgs),
    /// Run AMRST and baseline ICP over a manifest of scan pairs.
    Bench(BenchArgs),
    /// Generate a synthetic tree and two simulated scans of it.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Xyz,
    Ply,
}

impl From<FormatArg> for CloudFileFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Xyz => CloudFileFormat::XyzAscii,
            FormatArg::Ply => CloudFileFormat::PlyAscii,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Amrst,
    Icp,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    First,
    Best,
}

/// Skeleton and label options shared by every command that builds a skeleton.
#[derive(Debug, Clone, Args)]
pub struct SkeletonFlags {
    /// Geodesic bin width, meters.
    #[arg(long)]
    pub bin_width: Option<f64>,
    /// Neighbours per point in the adjacency graph.
    #[arg(long)]
    pub adjacency_k: Option<usize>,
    /// Clusters smaller than this merge into their parent node.
    #[arg(long)]
    pub min_cluster_points: Option<usize>,
    /// Intensity at or above which unlabeled points count as wood.
    #[arg(long)]
    pub intensity_threshold: Option<f64>,
    /// Key points kept per root-to-end path.
    #[arg(long)]
    pub depth: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct PipelineFlags {
    #[command(flatten)]
    pub skeleton: SkeletonFlags,
    /// Relative edge-length tolerance, in (0, 0.1].
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Volume-ratio tolerance, in (0, 0.1].
    #[arg(long)]
    pub beta: Option<f64>,
    /// Largest vertex distance after the tetrahedron fit, in (0, 0.1] meters.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Tetrahedron pair selection.
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
    /// Fine-stage correspondence cutoff, meters.
    #[arg(long)]
    pub max_corr_dist: Option<f64>,
    /// Fine-stage iteration cap.
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Fine-stage point cap (0 keeps every point).
    #[arg(long)]
    pub subsample: Option<usize>,
    /// Seed for subsampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Stop after the coarse stage.
    #[arg(long)]
    pub coarse_only: bool,
}

impl SkeletonFlags {
    pub fn apply(&self, p: &mut PipelineParams) {
        if let Some(v) = self.bin_width {
            p.skeleton.bin_width = v;
        }
        if let Some(v) = self.adjacency_k {
            p.skeleton.adjacency_k = v;
        }
        if let Some(v) = self.min_cluster_points {
            p.skeleton.min_cluster_points = v;
        }
        if self.intensity_threshold.is_some() {
            p.separation.intensity_threshold = self.intensity_threshold;
        }
        if let Some(v) = self.depth {
            p.keypoints.depth_limit = v;
        }
    }

    /// Parameters for the skeleton-only commands, validated.
    pub fn params(&self) -> treereg_core::Result<PipelineParams> {
        let mut p = PipelineParams::default();
        self.apply(&mut p);
        p.skeleton.validate()?;
        p.keypoints.validate()?;
        Ok(p)
    }
}

impl PipelineFlags {
    /// Full parameter set, validated before any input is read.
    pub fn params(&self, method: MethodArg) -> treereg_core::Result<PipelineParams> {
        let mut p = PipelineParams::default();
        self.skeleton.apply(&mut p);
        p.method = match method {
            MethodArg::Amrst => Method::Amrst,
            MethodArg::Icp => Method::Icp,
        };
        p.coarse_only = self.coarse_only;
        if let Some(v) = self.epsilon {
            p.coarse.epsilon = v;
        }
        if let Some(v) = self.beta {
            p.coarse.beta = v;
        }
        if let Some(v) = self.delta {
            p.coarse.delta = v;
        }
        if let Some(s) = self.strategy {
            p.coarse.strategy = match s {
                StrategyArg::First => MatchStrategy::FirstAccepted,
                StrategyArg::Best => MatchStrategy::BestResidual,
            };
        }
        if let Some(v) = self.max_corr_dist {
            p.fine.max_corr_dist = v;
        }
        if let Some(v) = self.max_iterations {
            p.fine.max_iterations = v;
        }
        if let Some(v) = self.subsample {
            p.fine.subsample = v;
        }
        p.fine.seed = self.seed;
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    pub source: PathBuf,
    pub target: PathBuf,
    /// Report destination (JSON); printed to standard output when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Write the source cloud moved into the target frame here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Known source-to-target transform (JSON); switches RMSE to ground-truth mode.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "amrst")]
    pub method: MethodArg,
    /// Input format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
}

#[derive(Debug, Args)]
pub struct SkeletonArgs {
    pub input: PathBuf,
    /// Node positions, one `x y z` line per node.
    #[arg(long)]
    pub nodes: PathBuf,
    /// Edge list, one `parent child` line per edge.
    #[arg(long)]
    pub edges: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[command(flatten)]
    pub skeleton: SkeletonFlags,
}

#[derive(Debug, Args)]
pub struct KeypointsArgs {
    pub input: PathBuf,
    /// Key point file, one `x y z kind path_rank` line per key point.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[command(flatten)]
    pub skeleton: SkeletonFlags,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// One pair per line: `source target` or `synth:<spec.toml>`.
    pub manifest: PathBuf,
    /// CSV destination; printed to standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory receiving source.xyz, target.xyz and truth.json.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Pair recipe (TOML); defaults apply to missing keys.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Overrides the tree and scan seeds of the recipe.
    #[arg(long)]
    pub seed: Option<u64>,
}
