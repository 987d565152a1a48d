//! `pairscale` — one executable for the whole pipeline:
//! ingest → breakdown → sample → compare → scale, with the word-frequency
//! baseline (`wordfish`), label agreement (`eval`), and a seeded synthetic
//! data generator (`simulate`) alongside.
//!
//! Stages communicate only through files named in the run configuration, so
//! any stage's input can be swapped (real LLM verdicts, simulated verdicts,
//! raw-text comparisons) without touching the others. Exit codes: 0 success,
//! 1 pipeline failure (the underlying error verbatim), 2 configuration or
//! input validation failure (the message names the offending field).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or inputs; exit 2.
    Validation(String),
    /// A stage failed while running; exit 1.
    Pipeline(String),
}

/// Shorthand for wrapping a module error verbatim.
pub fn pipeline(e: impl std::fmt::Display) -> CliError {
    CliError::Pipeline(e.to_string())
}

#[derive(Parser)]
#[command(
    name = "pairscale",
    version,
    about = "Scale short texts on a concept via judged pairwise comparisons"
)]
struct Cli {
    /// Run configuration file (TOML).
    #[arg(short, long, global = true, default_value = "pairscale.toml")]
    config: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a corpus file and write the canonical copy to the
    /// configured corpus path.
    Ingest {
        /// JSON Lines file of {id, text, labels?} records.
        input: PathBuf,
    },
    /// Build a concept breakdown for every corpus item (resumable).
    Breakdown,
    /// Draw the seeded per-item matchup sample.
    Sample,
    /// Judge sampled matchups into verdicts plus a manual-review queue
    /// (resumable; reruns with a warm cache are byte-identical).
    Compare {
        /// Compare raw item texts instead of breakdowns.
        #[arg(long)]
        raw_text: bool,
        /// Merge human-completed queue entries (records with an added
        /// "outcome" field) into the verdicts file, then exit.
        #[arg(long, value_name = "FILE")]
        merge_manual: Option<PathBuf>,
    },
    /// Fit the paired-comparison model; write per-item scores with
    /// quasi-standard errors and confidence intervals.
    Scale {
        /// Verdicts file (default: <output_dir>/verdicts.jsonl).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Scores file (default: <output_dir>/scores.jsonl).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Fit the word-frequency baseline scaler on the corpus texts.
    Wordfish {
        /// Keep terms appearing at least this many times overall.
        #[arg(long, default_value_t = 4)]
        min_total: usize,
        /// ... across at least this many documents.
        #[arg(long, default_value_t = 4)]
        min_docs: usize,
        /// Item id pinned to the low end of the scale (default: first doc).
        #[arg(long, value_name = "ID")]
        anchor_low: Option<String>,
        /// Item id pinned to the high end (default: last doc).
        #[arg(long, value_name = "ID")]
        anchor_high: Option<String>,
        /// Scores file (default: <output_dir>/wordfish.jsonl).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare a score file against the corpus label counts.
    Eval {
        /// Score file (default: <output_dir>/scores.jsonl). Any JSON Lines
        /// file with item_id and score_unit fields works.
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Label count at or above which an item counts as gold-positive.
        #[arg(long, default_value_t = 2.0)]
        gold_threshold: f64,
    },
    /// Generate a synthetic corpus and per-budget verdict files from a
    /// seeded judge with known true scores.
    Simulate {
        /// Number of synthetic items.
        #[arg(long, default_value_t = 100)]
        n: usize,
        /// Matchups per item; one verdict file per budget, nested.
        #[arg(long, value_delimiter = ',', default_value = "20")]
        budgets: Vec<usize>,
        /// Tie margin τ.
        #[arg(long, default_value_t = 0.2)]
        tau: f64,
        #[arg(long, value_enum, default_value_t = NoiseArg::Logistic)]
        noise: NoiseArg,
        /// Seed for true scores and judgments.
        #[arg(long, default_value_t = 17)]
        seed: u64,
        /// Draw true scores from two clusters this far apart instead of a
        /// standard normal.
        #[arg(long, value_name = "SEPARATION")]
        bimodal: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NoiseArg {
    Deterministic,
    Logistic,
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Pipeline(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = config::RunConfig::load(&cli.config)?;
    match cli.command {
        Command::Ingest { input } => commands::ingest(&config, &input),
        Command::Breakdown => commands::breakdown(&config),
        Command::Sample => commands::sample(&config),
        Command::Compare { raw_text, merge_manual } => {
            commands::compare(&config, raw_text, merge_manual.as_deref())
        }
        Command::Scale { input, output } => {
            commands::scale(&config, input.as_deref(), output.as_deref())
        }
        Command::Wordfish { min_total, min_docs, anchor_low, anchor_high, output } => {
            commands::wordfish(
                &config,
                min_total,
                min_docs,
                anchor_low.as_deref(),
                anchor_high.as_deref(),
                output.as_deref(),
            )
        }
        Command::Eval { scores, gold_threshold } => {
            commands::eval(&config, scores.as_deref(), gold_threshold)
        }
        Command::Simulate { n, budgets, tau, noise, seed, bimodal } => {
            let noise = match noise {
                NoiseArg::Deterministic => pairscale::simjudge::Noise::Deterministic,
                NoiseArg::Logistic => pairscale::simjudge::Noise::Logistic,
            };
            commands::simulate(&config, n, &budgets, tau, noise, seed, bimodal)
        }
    }
}
