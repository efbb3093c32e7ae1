use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lmebn::infer::{Engine, DEFAULT_LW_SAMPLES};
use lmebn::Strategy;

use crate::table::DEFAULT_GROUP_COLUMN;

/// Gaussian Bayesian networks for grouped data: complete pooling (gbn),
/// no pooling (cgbn) and partial pooling with mixed-effects regressions (lme).
#[derive(Debug, Parser)]
#[command(name = "lmebn", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write generating networks, training and evaluation data for a grid.
    Generate(GenerateArgs),
    /// Learn structure and parameters from a data CSV.
    Learn(LearnArgs),
    /// Score a learned model against a generating one; appends to a results CSV.
    Evaluate(EvaluateArgs),
    /// Run the full grid: generate, learn with every strategy, evaluate.
    Experiment(ExperimentArgs),
    /// Leave-one-node-out predictions and group classification.
    Predict(PredictArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Gbn,
    Cgbn,
    Lme,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Gbn => Strategy::Gbn,
            StrategyArg::Cgbn => Strategy::Cgbn,
            StrategyArg::Lme => Strategy::Lme,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EngineArg {
    Exact,
    Lw,
}

#[derive(Debug, Clone, Args)]
pub struct EngineOpts {
    /// Inference engine for predictions.
    #[arg(long, value_enum, default_value = "exact")]
    pub engine: EngineArg,
    /// Samples per query for likelihood weighting.
    #[arg(long, default_value_t = DEFAULT_LW_SAMPLES)]
    pub lw_samples: usize,
}

impl EngineOpts {
    pub fn engine(&self) -> Engine {
        match self.engine {
            EngineArg::Exact => Engine::Exact,
            EngineArg::Lw => Engine::LikelihoodWeighting {
                samples: self.lw_samples,
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the configured master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, default_value = DEFAULT_GROUP_COLUMN)]
    pub group_col: String,
    /// Store wall-clock time in the manifest.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct LearnArgs {
    /// Training data CSV.
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub strategy: StrategyArg,
    /// Model JSON to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = DEFAULT_GROUP_COLUMN)]
    pub group_col: String,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Generating model JSON.
    #[arg(long)]
    pub truth: PathBuf,
    /// Learned model JSON.
    #[arg(long)]
    pub model: PathBuf,
    /// Evaluation data CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Results CSV; created with a header if missing, appended otherwise.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = crate::config::DEFAULT_MC_SAMPLES)]
    pub mc_samples: usize,
    #[arg(long, default_value = DEFAULT_GROUP_COLUMN)]
    pub group_col: String,
    #[command(flatten)]
    pub engine: EngineOpts,
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for results.csv and manifest.json; stdout if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replicates run concurrently on at most this many threads.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Restrict to some strategies (repeatable).
    #[arg(long, value_enum)]
    pub strategy: Vec<StrategyArg>,
    #[command(flatten)]
    pub engine: EngineOpts,
    /// Record per-row runtimes (output is then not reproducible byte for byte).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Predictions CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Ignore the observed group when predicting variables.
    #[arg(long)]
    pub unknown_f: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = DEFAULT_GROUP_COLUMN)]
    pub group_col: String,
    #[command(flatten)]
    pub engine: EngineOpts,
}
