mod commands;
mod config;
mod logging;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::LevelFilter;
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "seegnet", version, about = "sEEG response-time decoding pipeline")]
struct Cli {
    /// Log verbosity for the JSON event stream on stderr.
    #[arg(long, global = true, default_value = "info", value_parser = parse_level)]
    log_level: LevelFilter,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Run seed; overrides every seed in the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON or TOML settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ModelFlags {
    /// Remove a component: at, pe, as or rh. Repeatable.
    #[arg(long = "ablate", value_parser = ["at", "pe", "as", "rh"])]
    pub ablate: Vec<String>,
    /// Joint attention over all electrode-time tokens.
    #[arg(long)]
    pub variant_2d: bool,
    /// Spatial positional encoding.
    #[arg(long, value_parser = ["rbf", "fourier_mni", "sinusoidal_index", "none"])]
    pub pe: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic raw cohort bundle.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        subjects: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
        /// Electrode count range, `MIN-MAX` or a single number.
        #[arg(long)]
        electrodes: Option<String>,
        #[arg(long)]
        burst_snr: Option<f64>,
        #[arg(long)]
        responsive_fraction: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Select responsive electrodes and write decoding epochs.
    Preprocess {
        #[command(flatten)]
        common: Common,
        /// Raw bundle.
        #[arg(long = "in", alias = "data")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// FDR level.
        #[arg(long)]
        alpha: Option<f64>,
        /// Bootstrap iterations.
        #[arg(long)]
        n_iter: Option<usize>,
        /// Bipolar re-referencing of adjacent contacts.
        #[arg(long)]
        bipolar: bool,
    },
    /// Train a fresh model.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        /// single or multi.
        #[arg(long, default_value = "multi")]
        mode: String,
        /// Subject for single-subject mode (required when the data has several).
        #[arg(long)]
        subject: Option<String>,
        /// Processed bundle.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Repeat with split seeds 0..N and summarize test scores.
        #[arg(long)]
        splits: Option<usize>,
    },
    /// Continue training a checkpoint on one subject.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        subject: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Add a head for a new subject: head-only phase, then full training.
    Transfer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        subject: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Leave-one-subject-out pretraining and transfer.
    Loo {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Held-out subjects (comma-separated); all when omitted.
        #[arg(long, value_delimiter = ',')]
        subjects: Vec<String>,
    },
    /// Score a checkpoint, or fit and score a baseline per subject.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, required_unless_present = "baseline")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// train, val or test.
        #[arg(long, default_value = "test")]
        label: String,
        /// wiener, ridge, lasso, mlp or cnn_mlp.
        #[arg(long, conflicts_with = "checkpoint")]
        baseline: Option<String>,
        /// Also time single-trial inference (makes the report non-reproducible).
        #[arg(long)]
        latency: bool,
    },
    /// Train every ablation variant with identical settings.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Variants (comma-separated): full, at, pe, as, rh, 2d.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
    },
    /// Predict response times for processed trials.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Processed bundle holding the trials.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        subject: String,
        /// Trial indices (comma-separated); all when omitted.
        #[arg(long, value_delimiter = ',')]
        trials: Vec<usize>,
    },
    /// Single-trial inference latency.
    Latency {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelFlags,
        /// Time this checkpoint instead of a freshly initialized model.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Present electrodes (default: all slots).
        #[arg(long)]
        electrodes: Option<usize>,
        #[arg(long, default_value_t = 10)]
        n_warm: usize,
        #[arg(long, default_value_t = 100)]
        n_meas: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_level(s: &str) -> Result<LevelFilter, String> {
    s.parse()
        .map_err(|_| format!("unknown log level {s:?} (off, error, warn, info, debug, trace)"))
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    e.chain()
        .find_map(|c| c.downcast_ref::<seegnet::Error>())
        .map_or("cli", seegnet::Error::kind)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.render().to_string();
            let message = text
                .lines()
                .next()
                .unwrap_or("usage error")
                .trim_start_matches("error: ");
            eprintln!("{}", json!({ "error": { "kind": "usage", "message": message } }));
            eprintln!("{text}");
            return ExitCode::from(2);
        }
    };
    logging::init(cli.log_level);
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!(
                "{}",
                json!({ "error": { "kind": error_kind(&e), "message": e.to_string(), "chain": chain } })
            );
            ExitCode::from(1)
        }
    }
}
