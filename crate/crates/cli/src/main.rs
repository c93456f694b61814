//! Command-line front end.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use maskomaly::ErrorClass;

mod commands;
mod settings;

#[derive(Debug, Parser)]
#[command(
    name = "maskomaly",
    version,
    about = "Anomaly segmentation from mask-based segmenter outputs"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. They override the `--config` file.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Run configuration file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub t_mask: Option<f64>,
    #[arg(long, global = true)]
    pub t_border: Option<f64>,
    #[arg(long, global = true)]
    pub eps_border: Option<f64>,
    #[arg(long, global = true)]
    pub t_iou: Option<f64>,
    #[arg(long, global = true)]
    pub t_query: Option<f64>,
    #[arg(long, global = true)]
    pub eps_query: Option<f64>,
    #[arg(long, global = true)]
    pub t_ground: Option<f64>,
    #[arg(long, global = true)]
    pub mdm_grid: Option<usize>,
    /// Detection-margin quality floors, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub mdm_margin: Vec<f64>,
    #[arg(long, global = true)]
    pub no_accept: bool,
    #[arg(long, global = true)]
    pub no_reject: bool,
    #[arg(long, global = true)]
    pub no_borders: bool,
    #[arg(long, global = true)]
    pub no_init: bool,
    #[arg(long, global = true, value_enum)]
    pub metric_mode: Option<ModeArg>,
    /// Histogram bins for binned metrics and exported curves.
    #[arg(long, global = true)]
    pub bins: Option<usize>,
    /// Average metrics per image instead of pooling pixels.
    #[arg(long, global = true)]
    pub per_image: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Exact,
    Binned,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a heatmap for every bundle.
    Score(commands::ScoreArgs),
    /// Find anomalous and ground queries on validation data.
    Mine(commands::MineArgs),
    /// Compute AP, FPR95, AuROC and detection margins.
    Eval(commands::EvalArgs),
    /// Evaluate the baseline and every stage combination.
    Ablate(commands::AblateArgs),
    /// Evaluate with the top-n anomalous queries for n = 1, 2, ...
    Sweep(commands::SweepArgs),
    /// Generate a synthetic dataset with planted queries.
    Synth(commands::SynthArgs),
    /// Time the scoring path.
    Bench(commands::BenchArgs),
}

/// Bad or missing flags discovered after parsing.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct Usage(pub String);

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        return 2;
    }
    match err.downcast_ref::<maskomaly::Error>().map(|e| e.class()) {
        Some(ErrorClass::Io) => 3,
        Some(ErrorClass::Format) => 4,
        Some(ErrorClass::Validation) => 5,
        Some(ErrorClass::Metric) => 6,
        Some(ErrorClass::Config) => 7,
        None => 1,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let settings = settings::Settings::load(&cli.common)?;
    if let Some(n) = settings.config.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Usage(format!("cannot start {n} threads: {e}")))?;
    }
    match cli.command {
        Command::Score(a) => commands::score(&settings, a),
        Command::Mine(a) => commands::mine(&settings, a),
        Command::Eval(a) => commands::eval(&settings, a),
        Command::Ablate(a) => commands::ablate(&settings, a),
        Command::Sweep(a) => commands::sweep(&settings, a),
        Command::Synth(a) => commands::synth(&settings, a),
        Command::Bench(a) => commands::bench(&settings, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
