//! `das`: coarse filtering, tournament attribution and evaluation from the
//! command line. Every command writes its artifacts into a fresh run
//! directory named by timestamp and config hash.

mod commands;
mod config;
mod rundir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::ClientKind;
use das_core::DasError;

#[derive(Parser, Debug)]
#[command(
    name = "das",
    version,
    about = "Authorship de-anonymization: embedding prefilter plus judged tournament"
)]
pub struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Root for per-run output directories.
    #[arg(long, global = true)]
    pub runs_dir: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic labeled corpus.
    Synth(SynthArgs),
    /// Write ground-truth labels (query id, same-author ids, pool size) for queries.
    Labels(LabelsArgs),
    /// Select the top-K candidates for a query by embedding similarity.
    Filter(FilterArgs),
    /// Rank a filtered pool with the tournament.
    Attribute(AttributeArgs),
    /// Score attribution results against labels.
    Evaluate(EvaluateArgs),
    /// Sample labeled queries and run the whole pipeline over them.
    Benchmark(BenchmarkArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub authors: usize,
    #[arg(long)]
    pub docs_per_author: usize,
    /// Share of words drawn from each author's signature vocabulary.
    #[arg(long, default_value_t = 0.3)]
    pub signal: f64,
    #[arg(long, default_value_t = 120)]
    pub words: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct LabelsArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Query ids; defaults to every document with a same-author match.
    #[arg(long = "query")]
    pub queries: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FilterArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub query: String,
    /// Coarse pool size.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub top_k: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    /// One grouping and scoring pass per trial, no elimination.
    Pe,
}

#[derive(Args, Debug, Default)]
pub struct TsaArgs {
    #[arg(long)]
    pub trials: Option<u32>,
    #[arg(long)]
    pub group_size: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub final_k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Concurrent group verdicts per round (0: all cores).
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long, value_enum)]
    pub ablation: Option<Ablation>,
}

#[derive(Args, Debug, Default)]
pub struct JudgeArgs {
    #[arg(long, value_enum)]
    pub client: Option<ClientKind>,
    /// Probability that an oracle verdict is random.
    #[arg(long)]
    pub oracle_noise: Option<f64>,
    #[arg(long)]
    pub oracle_seed: Option<u64>,
    /// Prompt guidance: reviews, emails or blogs.
    #[arg(long)]
    pub domain: Option<String>,
    /// Prompt template file with {target_text}, {candidates} and {instructions}.
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Chat model name for the http client.
    #[arg(long)]
    pub model: Option<String>,
    /// Chat completions endpoint for the http client.
    #[arg(long)]
    pub endpoint: Option<String>,
}

#[derive(Args, Debug)]
pub struct AttributeArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Pool file written by `filter`.
    #[arg(long)]
    pub pool: PathBuf,
    /// Must match the pool's query when given.
    #[arg(long)]
    pub query: Option<String>,
    /// Continue an interrupted run in its directory, reusing logged verdicts.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub tsa: TsaArgs,
    #[command(flatten)]
    pub judge: JudgeArgs,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Directory searched recursively for result.json files.
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    /// Comma-separated cutoffs.
    #[arg(long, value_delimiter = ',')]
    pub k_list: Option<Vec<usize>>,
    #[arg(long, default_value = "DAS")]
    pub system: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SettingArg {
    /// Whole corpus as the candidate universe.
    Wild,
    /// Same-author documents plus a fixed number of distractor authors.
    OneToMany,
}

#[derive(Args, Debug)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub queries: usize,
    #[arg(long, value_enum, default_value_t = SettingArg::Wild)]
    pub setting: SettingArg,
    #[arg(long, default_value_t = 5)]
    pub distractors: usize,
    #[arg(long, default_value_t = 0)]
    pub sample_seed: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub top_k: Option<u64>,
    /// Skip the embedding stage and judge the whole candidate universe.
    #[arg(long)]
    pub no_filter: bool,
    #[arg(long, value_delimiter = ',')]
    pub k_list: Option<Vec<usize>>,
    #[command(flatten)]
    pub tsa: TsaArgs,
    #[command(flatten)]
    pub judge: JudgeArgs,
}

/// Outcome classes mapped to exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(anyhow::Error),
    Provider(anyhow::Error),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Provider(_) => 3,
        }
    }
}

impl From<DasError> for Failure {
    fn from(e: DasError) -> Self {
        match e {
            DasError::Config(_) | DasError::GroupSize { .. } | DasError::Domain(_) => {
                Failure::Usage(e.to_string())
            }
            e if e.is_provider() => Failure::Provider(e.into()),
            e => Failure::Data(e.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast::<DasError>() {
            Ok(das) => das.into(),
            Err(e) => Failure::Data(e),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            match &failure {
                Failure::Usage(msg) => eprintln!("error: {msg}"),
                Failure::Data(e) => eprintln!("error: {e:#}"),
                Failure::Provider(e) => eprintln!("provider error: {e:#}"),
            }
            ExitCode::from(failure.exit_code())
        }
    }
}
