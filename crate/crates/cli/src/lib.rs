//! Command-line pipeline: corpus synthesis, EGG marking, training,
//! detection and evaluation.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use gci_core::targets::TargetKind;

mod commands;
pub mod config;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] gci_core::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_validation() => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "fcn-gci", version, about = "Glottal closure instant detection toolkit", args_override_self = true)]
pub struct Cli {
    /// Read `key = value` flag defaults from FILE; command-line flags win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads for file-level parallelism.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true, default_value = "info")]
    pub log_level: log::LevelFilter,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a synthetic corpus with GCI truth and target curves.
    Synth(SynthArgs),
    /// Mark GCIs on the EGG channel of recordings.
    ExtractEgg(ExtractEggArgs),
    /// Train a model on a corpus manifest.
    Train(TrainArgs),
    /// Detect GCIs in speech files with a trained model.
    Detect(DetectArgs),
    /// Compare detected marks against reference marks.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Base utterances; each is rendered at three Rd shifts.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Train, validation and test fractions.
    #[arg(long, default_value = "0.6,0.2,0.2", value_parser = parse_ratios)]
    pub ratios: [f64; 3],
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub min_duration: f64,
    #[arg(long, default_value_t = 3.0)]
    pub max_duration: f64,
    /// Overwrite an existing corpus.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct ExtractEggArgs {
    /// Multi-channel WAV files holding speech and EGG.
    #[arg(long = "in", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    /// Zero-based index of the EGG channel.
    #[arg(long, default_value_t = 1)]
    pub channel: usize,
    #[arg(long, default_value_t = 30.0)]
    pub hp: f64,
    #[arg(long, default_value_t = 500.0)]
    pub lp: f64,
    #[arg(long, default_value_t = 5)]
    pub order: usize,
    /// Peak threshold relative to the strongest dEGG closure peak.
    #[arg(long, default_value_t = 0.2)]
    pub threshold: f64,
    /// Output directory; defaults to each input's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ArchChoice {
    Small,
    Full,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub target: TargetKind,
    /// Weight file to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "full")]
    pub arch: ArchChoice,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Consecutive outputs predicted per training window.
    #[arg(long)]
    pub outputs_per_segment: Option<usize>,
    #[arg(long)]
    pub epoch_batches: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_patience: Option<usize>,
    #[arg(long)]
    pub lr_min: Option<f64>,
    #[arg(long)]
    pub early_stop: Option<usize>,
    #[arg(long)]
    pub val_windows: Option<usize>,
    /// Per-epoch JSON lines; defaults to `<out>.history.jsonl`.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct DetectArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "in", required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub target: TargetKind,
    /// Output directory; defaults to each input's directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the 16 kHz network curve as `<name>.curve.csv`.
    #[arg(long)]
    pub dump_curve: bool,
    /// Zero-based speech channel.
    #[arg(long, default_value_t = 0)]
    pub channel: usize,
    #[arg(long, default_value_t = 0.5)]
    pub tri_threshold: f64,
    #[arg(long, default_value_t = 0.2)]
    pub gf_threshold: f64,
    #[arg(long, default_value_t = 0.002)]
    pub min_distance: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeChoice {
    Voiced,
    All,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct EvaluateArgs {
    /// Directory of reference `*.gci.txt` files.
    #[arg(long)]
    pub ref_dir: PathBuf,
    /// Directory holding a detection file of the same name for each reference.
    #[arg(long)]
    pub det_dir: PathBuf,
    #[arg(long, value_enum, default_value = "voiced")]
    pub mode: ModeChoice,
    /// JSON report path.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn parse_ratios(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|v: Vec<f64>| format!("expected three comma-separated ratios, got {}", v.len()))
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match config::expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_timestamp(None)
        .try_init();
    match commands::dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
