//! `cof`: build a synthetic corpus, train the encoder, embed papers, rank
//! reviewers, run the ablations, evaluate rankings and run the probes.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cof_core::CofError;

/// Errors in how the tool was invoked, as opposed to bad input data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "cof", version, about = "Chained-factor paper-reviewer matching")]
pub struct Cli {
    /// Run configuration file (`section.key = value` lines).
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one configuration key; may be repeated.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic corpus, search log, reviewers and judgments.
    BuildCorpus {
        /// Output directory.
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Pre-train the encoder on the corpus and search log.
    Train {
        /// Per-epoch loss CSV; defaults to loss.csv next to the checkpoint.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Embed every paper of a corpus file under one factor.
    Embed {
        /// semantic, topic, citation or none (factor-agnostic).
        #[arg(long)]
        factor: String,
        /// Corpus file; defaults to paths.corpus.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank reviewers for every submission with one variant.
    Match {
        /// Defaults to chain.variant.
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Weights trained without instructions, used by no_instruction.
        #[arg(long)]
        agnostic_checkpoint: Option<PathBuf>,
    },
    /// Rank reviewers with all seven ablation variants.
    Ablate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        agnostic_checkpoint: Option<PathBuf>,
    },
    /// Score rankings against judgments; several files are treated as runs.
    Eval {
        #[arg(long, required = true)]
        rankings: Vec<PathBuf>,
        /// Only evaluate this variant.
        #[arg(long)]
        variant: Option<String>,
        /// Metric CSV of the single evaluated variant and run.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean-rank probes of the trained encoder on the submissions.
    Probe {
        /// semantic, topic or citation; all three by default.
        #[arg(long)]
        kind: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// 1 for invocation and configuration errors, 2 for data errors.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<CofError>() {
            return if e.is_usage() { 1 } else { 2 };
        }
    }
    2
}

/// The error and its causes, skipping causes already quoted by the one above.
fn message(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", message(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
