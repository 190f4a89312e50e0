use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

const LONG_VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    "\nprofile: ",
    env!("LLGS_BUILD_PROFILE"),
    "\ntarget: ",
    env!("LLGS_BUILD_TARGET"),
);

/// Low-light Gaussian splatting: synthesize, initialize, train, render and score.
#[derive(Debug, Parser)]
#[command(name = "llgs", version, long_version = LONG_VERSION)]
pub struct Cli {
    /// Worker threads (1 is the reference path).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    /// Seed for every random draw of the subcommand.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic low-light bundle with ground truth.
    Synth {
        /// Scene description; the built-in scene when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Voxelize a point cloud into anchors and prune them.
    Init {
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Voxel size.
        #[arg(long, default_value_t = 1.0)]
        r: f64,
        #[arg(long, default_value_t = 1.0)]
        tau0: f64,
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[arg(long, default_value_t = 3)]
        rounds: usize,
    },
    /// Warm up and optimize a scene as described by a run file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Render one map of a trained scene.
    Render {
        #[arg(long)]
        scene: PathBuf,
        /// Camera JSON; mutually exclusive with --dataset.
        #[arg(long, conflicts_with = "dataset", required_unless_present = "dataset")]
        camera: Option<PathBuf>,
        /// Render every view of a dataset directory into --out.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test, requires = "dataset")]
        split: SplitArg,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Training-view embedding slot, needed by the residual map.
        #[arg(long)]
        view_index: Option<usize>,
        /// Output PNG, or directory with --dataset.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write every component map for one camera into a directory.
    Decompose {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long)]
        view_index: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against references of the same file name.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Fit prediction luminance to the reference before scoring.
        #[arg(long)]
        align: bool,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Low,
    Enhanced,
    Reflectance,
    Illumination,
    Residual,
    Depth,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}
