//! Command-line front end for `nash-match`: instance files, solving, lottery
//! rounding, benchmark tables and self-checks.

pub mod bench;
pub mod commands;
pub mod format;
pub mod verify;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nash_match::assignment::AssignmentError;
use nash_match::ccp::CcpError;
use nash_match::gen::{GenError, ModelKind};
use nash_match::model::ModelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("malformed input: {0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ccp(#[from] CcpError),
    #[error(transparent)]
    Assignment(#[from] AssignmentError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Format(_) | CliError::Json(_) => 2,
            CliError::Gen(GenError::InvalidSpec(_)) => 2,
            CliError::Model(ModelError::Unsupported(_) | ModelError::InvalidInstance(_) | ModelError::Dimension(_)) => 2,
            CliError::Ccp(CcpError::Model(ModelError::Unsupported(_)) | CcpError::Config(_)) => 2,
            _ => 1,
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "nash-match", version, about = "Nash-bargaining matching markets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a random market and write it as JSON.
    Generate(GenerateArgs),
    /// Solve a market file and print the result as JSON.
    Solve(SolveArgs),
    /// Decompose a solved allocation into a lottery over matchings.
    Round(RoundArgs),
    /// Run a grid of random markets and write one CSV row per run.
    Bench(BenchArgs),
    /// Run the built-in property checks.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Algo {
    Ccp,
    Fw,
}

impl Algo {
    pub fn as_str(self) -> &'static str {
        match self {
            Algo::Ccp => "ccp",
            Algo::Fw => "fw",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Axioms,
    Oracle,
    Cuts,
    All,
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: GenError| e.to_string())
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_parser = parse_model)]
    pub model: ModelKind,
    #[arg(long)]
    pub n: usize,
    /// Utility density; required for the linear families.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Segments (1sad) or hyperplanes (1nad); default 5.
    #[arg(long = "K")]
    pub k: Option<usize>,
    #[arg(long, conflicts_with = "nonbinary")]
    pub binary: bool,
    #[arg(long)]
    pub nonbinary: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; standard output if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Limits {
    #[arg(long, default_value_t = 1e-7)]
    pub gap: f64,
    #[arg(long, default_value_t = 1000)]
    pub max_iter: usize,
    /// Seconds.
    #[arg(long, default_value_t = 3600.0)]
    pub time_limit: f64,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = Algo::Ccp)]
    pub algo: Algo,
    #[command(flatten)]
    pub limits: Limits,
    /// Write per-iteration records here as JSON lines.
    #[arg(long)]
    pub diag: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RoundArgs {
    /// A solve result.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// The solved market, to check expected utilities of the lottery.
    #[arg(long)]
    pub instance: Option<PathBuf>,
    #[arg(long)]
    pub sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_parser = parse_model)]
    pub model: ModelKind,
    /// Both engines where supported if absent.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub algos: Vec<Algo>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub sizes: Vec<usize>,
    /// Densities; ignored by 1sad and 1nad.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub rhos: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Parallel workers, further capped by NASH_MATCH_THREADS.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long = "K")]
    pub k: Option<usize>,
    #[arg(long, conflicts_with = "nonbinary")]
    pub binary: bool,
    #[arg(long)]
    pub nonbinary: bool,
    #[command(flatten)]
    pub limits: Limits,
    /// Output file; standard output if absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = Suite::All)]
    pub suite: Suite,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Runs one command and returns the process exit code.
pub fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Solve(a) => commands::solve(&a),
        Command::Round(a) => commands::round(&a),
        Command::Bench(a) => bench::run(&a),
        Command::Verify(a) => verify::run(&a),
    }
}
