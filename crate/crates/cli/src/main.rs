//! `drivesel` command-line driver.

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;

/// Bad flags, config keys or config values. Exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub anyhow::Error);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(
    name = "drivesel",
    version,
    about = "Planning-oriented active data selection for driving clips"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// TOML config with [world], [active], [toy] and [eval] tables.
    #[arg(long, global = true, env = "DRIVESEL_CONFIG")]
    pub config: Option<PathBuf>,

    /// Override one config key, e.g. `--set active.gamma=0.8`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic pool, its hidden truth and a held-out set.
    Gen(GenArgs),
    /// Choose the initial labeled set.
    Init(InitArgs),
    /// Score unlabeled clips from a predictions file.
    Score(ScoreArgs),
    /// Append the top-scoring clips to a selection as a new round.
    Select(SelectArgs),
    /// Run the whole selection loop and evaluate the result.
    Run(RunArgs),
    /// Combine run manifests and selections into comparison tables.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_parser = seed_parser())]
    pub seed: Option<u64>,
    /// Held-out clip count; 0 skips the held-out files.
    #[arg(long)]
    pub heldout: Option<usize>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    EgoDiversity,
    Random,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CriterionArg {
    Mixture,
    DeOnly,
    ScOnly,
    AuOnly,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub n0: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub tau_c: Option<usize>,
    #[arg(long, value_parser = seed_parser())]
    pub seed: Option<u64>,
    #[arg(long, default_value = "selection.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoringArgs {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub eps_a: Option<f64>,
    #[arg(long)]
    pub delta_d: Option<f64>,
    #[arg(long, value_enum)]
    pub criterion: Option<CriterionArg>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub pool: PathBuf,
    /// Current selection; without it every clip counts as unlabeled.
    #[arg(long)]
    pub selection: Option<PathBuf>,
    #[arg(long)]
    pub predictions: PathBuf,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    #[arg(long, default_value = "scores.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub selection: PathBuf,
    #[arg(long)]
    pub n_itr: usize,
    /// Defaults to rewriting `--selection` in place.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Baseline {
    Random,
}

#[derive(Debug, Clone, Copy, Default, ValueEnum)]
pub enum ProviderArg {
    /// Built-in toy planner trained on revealed truth.
    #[default]
    Toy,
    /// Replay `predictions_round_<k>.jsonl` from `--predictions-dir`.
    Files,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub pool: PathBuf,
    /// Truth for the pool; required by the toy provider.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Held-out pool to evaluate the final labeled set on.
    #[arg(long, requires = "heldout_truth")]
    pub heldout: Option<PathBuf>,
    #[arg(long)]
    pub heldout_truth: Option<PathBuf>,
    /// Run a comparator instead of active selection.
    #[arg(long, value_enum)]
    pub baseline: Option<Baseline>,
    #[arg(long, value_enum, default_value = "toy")]
    pub provider: ProviderArg,
    #[arg(long)]
    pub predictions_dir: Option<PathBuf>,
    /// Write every round's predictions here as `predictions_round_<k>.jsonl`.
    #[arg(long)]
    pub dump_predictions: Option<PathBuf>,
    #[arg(long)]
    pub init_mode: Option<ModeArg>,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    #[arg(long, value_parser = seed_parser())]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run manifest, optionally named: `NAME=PATH`. Repeatable.
    #[arg(long = "manifest", value_name = "[NAME=]PATH")]
    pub manifests: Vec<String>,
    /// Selection file of a single-criterion run: `NAME=PATH`. Repeatable.
    #[arg(long = "criterion-selection", value_name = "NAME=PATH")]
    pub selections: Vec<String>,
    #[arg(long, default_value = "report")]
    pub out_dir: PathBuf,
}

/// Seeds travel through TOML, whose integers are signed 64-bit.
fn seed_parser() -> clap::builder::RangedU64ValueParser<u64> {
    clap::value_parser!(u64).range(0..=i64::MAX as u64)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => commands::gen(&cli.global, a),
        Command::Init(a) => commands::init(&cli.global, a),
        Command::Score(a) => commands::score(&cli.global, a),
        Command::Select(a) => commands::select(&cli.global, a),
        Command::Run(a) => commands::run(&cli.global, a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(u) = e.downcast_ref::<UsageError>() {
                eprintln!("error: {u}");
                ExitCode::from(2)
            } else {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        }
    }
}
