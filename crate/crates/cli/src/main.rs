//! Operator surface for the keyframe pipeline: synthesize data, train,
//! extract, sweep, summarize, evaluate, classify, and plot.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
//! failure.

mod commands;
mod config;
mod plot;
mod util;

use clap::error::ErrorKind as ClapErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

#[derive(Debug)]
pub struct CliError {
    pub class: ErrorClass,
    pub message: String,
}

impl CliError {
    pub fn usage(message: String) -> CliError {
        CliError {
            class: ErrorClass::Usage,
            message,
        }
    }

    pub fn data(message: String) -> CliError {
        CliError {
            class: ErrorClass::Data,
            message,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class {
            ErrorClass::Usage => 1,
            ErrorClass::Data => 2,
            ErrorClass::Numeric => 3,
        }
    }
}

impl From<okfem_core::Error> for CliError {
    fn from(e: okfem_core::Error) -> CliError {
        use okfem_core::Error::*;
        let class = match &e {
            Divergence { .. } | NonFinite(_) => ErrorClass::Numeric,
            InvalidConfig(_) | InvalidInput(_) => ErrorClass::Usage,
            _ => ErrorClass::Data,
        };
        CliError {
            class,
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AggregationArg {
    Mean,
    Max,
}

/// Flags shared by every subcommand; values from `--config` fill the gaps.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonFlags {
    /// Seed for every random choice this command makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Flat JSON config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads for per-video processing.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    /// Summary duration budget as a fraction of the video (default 0.15).
    #[arg(long, global = true)]
    pub budget: Option<f64>,

    /// Multi-reference F-score aggregation (default mean).
    #[arg(long, global = true, value_enum)]
    pub aggregation: Option<AggregationArg>,

    /// Selection-accuracy weight in the loss (default 0.6).
    #[arg(long, global = true)]
    pub alpha: Option<f32>,

    /// Score-reward weight in the loss (default 0.42).
    #[arg(long, global = true)]
    pub beta: Option<f32>,

    /// Straight-through gate temperature (default 1.0).
    #[arg(long, global = true)]
    pub tau: Option<f32>,

    /// Score-bounding scale in the loss (default 1.0).
    #[arg(long, global = true)]
    pub sigma: Option<f32>,

    /// Iteration cap for the iterative classifier (default 10).
    #[arg(long, global = true)]
    pub max_iter: Option<usize>,
}

#[derive(Debug, Parser)]
#[command(
    name = "okfem",
    about = "Online keyframe extraction, key-shot summarization, and keyframe classification",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,

    #[command(flatten)]
    pub common: CommonFlags,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Generate synthetic videos with planted content changes.
    Synth {
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Number of videos.
        #[arg(long, default_value_t = 10)]
        videos: usize,
        /// Frames per video.
        #[arg(long)]
        frames: Option<usize>,
        /// Planted abrupt changes per video.
        #[arg(long)]
        events: Option<usize>,
        /// Additive noise level.
        #[arg(long)]
        noise: Option<f32>,
        /// Frame shape as C,H,W.
        #[arg(long)]
        shape: Option<String>,
    },

    /// Train the extraction model on a dataset directory.
    Train {
        /// Dataset directory (from `synth` or with the same layout).
        #[arg(long)]
        data: PathBuf,
        /// Where to write the trained model JSON.
        #[arg(long)]
        out: PathBuf,
        /// Where to write per-epoch metrics JSON.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Training epochs.
        #[arg(long)]
        epochs: Option<usize>,
        /// Initial learning rate.
        #[arg(long)]
        learning_rate: Option<f32>,
    },

    /// Stream videos through a trained model and write keyframe records.
    Extract {
        /// Trained model JSON.
        #[arg(long)]
        model: PathBuf,
        /// Dataset directory, single video directory, or a frames .fts file.
        #[arg(long)]
        input: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Treat inputs as precomputed receptive-field maps ([F,H,W] .fts).
        #[arg(long)]
        precomputed: bool,
        /// Replace gating with random sampling, e.g. `random:0.30`.
        #[arg(long)]
        sample: Option<String>,
        /// With --sample: exclude gate-selected keyframes from the pool.
        #[arg(long)]
        exclude_keyframes: bool,
    },

    /// Train one model per (alpha, beta) grid point and tabulate F-scores.
    Sweep {
        /// Training dataset directory.
        #[arg(long)]
        train_data: PathBuf,
        /// Held-out dataset directory for F-score evaluation.
        #[arg(long)]
        eval_data: PathBuf,
        /// Grid as `a:b,a:b,...`; defaults to the built-in ten pairs.
        #[arg(long)]
        grid: Option<String>,
        /// Output prefix; writes PREFIX.tsv and PREFIX.json.
        #[arg(long, default_value = "sweep")]
        out: PathBuf,
        /// Training epochs per grid point.
        #[arg(long)]
        epochs: Option<usize>,
        /// Initial learning rate.
        #[arg(long)]
        learning_rate: Option<f32>,
    },

    /// Convert keyframes (or importance scores) to a budgeted summary.
    Summarize {
        /// Per-frame features .fts ([F,D]) for temporal segmentation.
        #[arg(long)]
        features: PathBuf,
        /// keyframes.json from `extract` (greedy keyframe-density path).
        #[arg(long)]
        keyframes: Option<PathBuf>,
        /// annotations.json with importance_scores (knapsack path).
        #[arg(long)]
        importance: Option<PathBuf>,
        /// Force the selection method.
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        /// Output summary JSON.
        #[arg(long)]
        out: PathBuf,
        /// Upper bound on segments for temporal segmentation.
        #[arg(long)]
        max_segments: Option<usize>,
        /// Segment-count penalty strength.
        #[arg(long)]
        penalty: Option<f64>,
    },

    /// F-score of a predicted summary against references.
    EvalSummary {
        /// Predicted summary JSON.
        #[arg(long)]
        pred: PathBuf,
        /// Reference: a summary JSON or an annotations JSON.
        #[arg(long)]
        reference: PathBuf,
    },

    /// Train the semantic-vector plugin classifier on extracted keyframes.
    TrainClassifier {
        /// Extraction output directory (with class labels in annotations).
        #[arg(long)]
        data: PathBuf,
        /// Word-vector table (one `label v1..v300` line per class).
        #[arg(long)]
        w2v: PathBuf,
        /// Where to write the classifier JSON.
        #[arg(long)]
        out: PathBuf,
        /// Where to write the convergence log JSON.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Training epochs.
        #[arg(long)]
        epochs: Option<usize>,
        /// Initial learning rate.
        #[arg(long)]
        learning_rate: Option<f32>,
    },

    /// Classify one extracted video with the iterative test strategy.
    Classify {
        /// Classifier JSON from `train-classifier`.
        #[arg(long)]
        model: PathBuf,
        /// Extraction output directory of one video (or a dataset).
        #[arg(long)]
        input: PathBuf,
        /// Word-vector table.
        #[arg(long)]
        w2v: PathBuf,
        /// Optional output JSON path (predictions also print to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },

    /// Render summary timelines (and optionally a score curve) as SVG.
    Plot {
        /// Comma-separated summary JSON paths.
        #[arg(long)]
        summaries: String,
        /// Comma-separated labels matching --summaries.
        #[arg(long)]
        labels: Option<String>,
        /// Reference summary or annotations JSON (drawn last).
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Score source: keyframes.json or annotations.json.
        #[arg(long)]
        scores: Option<PathBuf>,
        /// keyframes.json whose indices become tick marks.
        #[arg(long)]
        keyframes: Option<PathBuf>,
        /// Output SVG path.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Greedy,
    Knapsack,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file_cfg = match &cli.common.config {
        Some(path) => Some(config::FileConfig::load(path)?),
        None => None,
    };
    let cfg = config::RunConfig::resolve(file_cfg, &cli.common)?;
    match cli.cmd {
        Cmd::Synth {
            out,
            videos,
            frames,
            events,
            noise,
            shape,
        } => commands::cmd_synth(&cfg, &out, videos, frames, events, noise, shape.as_deref()),
        Cmd::Train {
            data,
            out,
            metrics,
            epochs,
            learning_rate,
        } => commands::cmd_train(&cfg, &data, &out, metrics.as_deref(), epochs, learning_rate),
        Cmd::Extract {
            model,
            input,
            out,
            precomputed,
            sample,
            exclude_keyframes,
        } => commands::cmd_extract(
            &cfg,
            &model,
            &input,
            &out,
            precomputed,
            sample.as_deref(),
            exclude_keyframes,
        ),
        Cmd::Sweep {
            train_data,
            eval_data,
            grid,
            out,
            epochs,
            learning_rate,
        } => commands::cmd_sweep(
            &cfg,
            &train_data,
            &eval_data,
            grid.as_deref(),
            &out,
            epochs,
            learning_rate,
        ),
        Cmd::Summarize {
            features,
            keyframes,
            importance,
            method,
            out,
            max_segments,
            penalty,
        } => commands::cmd_summarize(
            &cfg,
            &features,
            keyframes.as_deref(),
            importance.as_deref(),
            method,
            &out,
            max_segments,
            penalty,
        ),
        Cmd::EvalSummary { pred, reference } => commands::cmd_eval_summary(&cfg, &pred, &reference),
        Cmd::TrainClassifier {
            data,
            w2v,
            out,
            log,
            epochs,
            learning_rate,
        } => commands::cmd_train_classifier(
            &cfg,
            &data,
            &w2v,
            &out,
            log.as_deref(),
            epochs,
            learning_rate,
        ),
        Cmd::Classify {
            model,
            input,
            w2v,
            out,
        } => commands::cmd_classify(&cfg, &model, &input, &w2v, out.as_deref()),
        Cmd::Plot {
            summaries,
            labels,
            reference,
            scores,
            keyframes,
            out,
        } => commands::cmd_plot(
            &summaries,
            labels.as_deref(),
            reference.as_deref(),
            scores.as_deref(),
            keyframes.as_deref(),
            &out,
        ),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ClapErrorKind::DisplayHelp | ClapErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {}", e.message);
        std::process::exit(e.exit_code());
    }
}
