//! `owp`: command-line front end for owp-core.
//!
//! Exit codes: 0 success, 1 internal error, 2 bad input or usage.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "owp", version, about = "Open-world proposal toolkit")]
struct Cli {
    /// Worker threads for per-image work (default: logical cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Assign ground truth to pyramid locations and write the targets as a dense-map file.
    Assign(AssignArgs),
    /// Objectness sample counts and positive/negative balance for one image.
    SampleStats(SampleStatsArgs),
    /// Run the proposal pipeline over dense prediction maps.
    Score(ScoreArgs),
    /// Evaluate proposals against ground truth under an open-world split.
    Eval(EvalArgs),
    /// Generate synthetic prediction maps (and optionally annotations).
    Synth(SynthArgs),
    /// Histogram and skewness of proposal scores.
    Hist(HistArgs),
    /// Count background locations excluded by unknown-object masking.
    MaskStats(MaskStatsArgs),
}

#[derive(Args, Debug)]
pub(crate) struct AssignArgs {
    /// COCO-style annotation file.
    #[arg(long)]
    pub(crate) annotations: PathBuf,
    /// JSON configuration file.
    #[arg(long)]
    pub(crate) config: Option<PathBuf>,
    #[arg(long)]
    pub(crate) image_id: u64,
    /// Output dense-map file.
    #[arg(long)]
    pub(crate) out: PathBuf,
    /// Center-sampling radius in strides (config: center_radius).
    #[arg(long)]
    pub(crate) center_radius: Option<f64>,
}

#[derive(Args, Debug)]
pub(crate) struct SampleStatsArgs {
    #[arg(long)]
    pub(crate) annotations: PathBuf,
    #[arg(long)]
    pub(crate) config: Option<PathBuf>,
    #[arg(long)]
    pub(crate) image_id: u64,
    /// Dense prediction maps; required for the iou branch.
    #[arg(long)]
    pub(crate) preds: Option<PathBuf>,
    /// fcos_default, cs_is or all (config: sampling_mode).
    #[arg(long)]
    pub(crate) mode: Option<String>,
    /// iou or centerness targets.
    #[arg(long, default_value = "iou")]
    pub(crate) branch: String,
    /// Targets above this count as positives (config: positive_cut).
    #[arg(long)]
    pub(crate) positive_cut: Option<f64>,
    /// IoU sampling threshold (config: iou_sampling_threshold).
    #[arg(long)]
    pub(crate) iou_sampling_threshold: Option<f64>,
    #[arg(long)]
    pub(crate) center_radius: Option<f64>,
}

#[derive(Args, Debug)]
pub(crate) struct ScoreArgs {
    /// A dense-map file or a directory of `<image_id>.owpd` files.
    #[arg(long)]
    pub(crate) preds: PathBuf,
    #[arg(long)]
    pub(crate) config: Option<PathBuf>,
    /// centerness, iou, geomean, logits-centerness or logits-iou (config: scoring_mode).
    #[arg(long)]
    pub(crate) mode: Option<String>,
    /// Output proposal JSON.
    #[arg(long)]
    pub(crate) out: PathBuf,
    /// Annotation file supplying image sizes and class-channel category ids.
    #[arg(long)]
    pub(crate) annotations: Option<PathBuf>,
    /// Image id for a single file whose name is not `<id>.owpd`.
    #[arg(long)]
    pub(crate) image_id: Option<u64>,
    #[arg(long)]
    pub(crate) pre_nms_k: Option<usize>,
    #[arg(long)]
    pub(crate) pre_nms_threshold: Option<f64>,
    #[arg(long)]
    pub(crate) nms_iou: Option<f64>,
    #[arg(long)]
    pub(crate) post_nms_n: Option<usize>,
    #[arg(long)]
    pub(crate) post_nms_threshold: Option<f64>,
    /// Force class-agnostic (true) or per-class (false) NMS.
    #[arg(long)]
    pub(crate) class_agnostic_nms: Option<bool>,
}

#[derive(Args, Debug)]
pub(crate) struct EvalArgs {
    /// Ground-truth annotation file.
    #[arg(long)]
    pub(crate) gt: PathBuf,
    #[arg(long)]
    pub(crate) proposals: PathBuf,
    /// coco-voc, lvis, or file:PATH with {"seen": [...], "novel": [...]}.
    #[arg(long)]
    pub(crate) split: String,
    /// novel-recall or base-precision.
    #[arg(long, default_value = "novel-recall")]
    pub(crate) task: String,
    /// Proposal budgets for AR@N; repeatable (config: ar_n).
    #[arg(long = "ar-n")]
    pub(crate) ar_n: Vec<usize>,
    #[arg(long)]
    pub(crate) config: Option<PathBuf>,
    /// Detections per image for AP (config: max_dets).
    #[arg(long)]
    pub(crate) max_dets: Option<usize>,
    /// Machine-readable summary path (default: `<proposals>.eval.json`).
    #[arg(long)]
    pub(crate) summary: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub(crate) struct SynthArgs {
    /// Existing annotation file to synthesize predictions for.
    #[arg(long, conflicts_with = "random", required_unless_present = "random")]
    pub(crate) annotations: Option<PathBuf>,
    /// Generate N random images instead.
    #[arg(long)]
    pub(crate) random: Option<usize>,
    /// Regression noise sigma (config: noise.regression_sigma).
    #[arg(long)]
    pub(crate) noise: Option<f64>,
    /// Objectness noise (config: noise.objectness_noise).
    #[arg(long)]
    pub(crate) objectness_noise: Option<f64>,
    /// Seed (config: noise.seed).
    #[arg(long)]
    pub(crate) seed: Option<u64>,
    #[arg(long)]
    pub(crate) config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub(crate) out: PathBuf,
}

#[derive(Args, Debug)]
pub(crate) struct HistArgs {
    #[arg(long)]
    pub(crate) proposals: PathBuf,
    /// Bin count (config: bins).
    #[arg(long)]
    pub(crate) bins: Option<usize>,
    #[arg(long)]
    pub(crate) config: Option<PathBuf>,
    /// Also write the table as CSV.
    #[arg(long)]
    pub(crate) out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub(crate) struct MaskStatsArgs {
    /// A dense-map file or a directory of `<image_id>.owpd` files.
    #[arg(long)]
    pub(crate) preds: PathBuf,
    #[arg(long)]
    pub(crate) annotations: PathBuf,
    /// Required when --preds is a single file not named `<id>.owpd`.
    #[arg(long)]
    pub(crate) image_id: Option<u64>,
    /// Objectness threshold (config: unknown_mask_threshold).
    #[arg(long)]
    pub(crate) threshold: Option<f64>,
    /// pixel or area (config: mask_variant).
    #[arg(long)]
    pub(crate) variant: Option<String>,
    /// iou, centerness or geomean (config: mask_objectness).
    #[arg(long)]
    pub(crate) source: Option<String>,
    /// NMS IoU over area-mask trigger boxes (config: area_mask_nms).
    #[arg(long)]
    pub(crate) trigger_nms: Option<f64>,
    #[arg(long)]
    pub(crate) config: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    let jobs = cli.jobs;
    let result = match cli.command {
        Command::Assign(a) => commands::assign(a),
        Command::SampleStats(a) => commands::sample_stats(a),
        Command::Score(a) => commands::score(a, jobs),
        Command::Eval(a) => commands::eval(a),
        Command::Synth(a) => commands::synth(a, jobs),
        Command::Hist(a) => commands::hist(a),
        Command::MaskStats(a) => commands::mask_stats(a, jobs),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
