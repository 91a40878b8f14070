//! `birm` — one binary wiring the whole pipeline: generate tasks, sample
//! solutions, annotate step labels, train supervision variants, evaluate with
//! Best-of-N or beam search, re-rank externally scored dumps, and summarize
//! curves.
//!
//! Every subcommand writes its artifacts into a run directory (`--out-dir`)
//! together with `config.toml`, the fully resolved configuration; re-running
//! from that echo reproduces the run bit for bit. Flags mirror config-file
//! keys one-to-one: `--config file.toml` supplies defaults from the section
//! named after the subcommand, explicit flags override, and built-in defaults
//! fill the rest.
//!
//! Exit codes: 0 success, 2 usage (bad flags), 3 missing input file,
//! 4 schema or validation failure, 1 anything else. Failures print a single
//! machine-parsable line: `error: kind=<kind> msg="..."`.

mod commands;
mod config;

use clap::{Parser, Subcommand};

use commands::*;

#[derive(Parser)]
#[command(name = "birm", version, about = "Process-supervision search pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a batch of synthetic tasks.
    GenTasks(GenTasksArgs),
    /// Sample solutions per task and build a trajectory corpus.
    Sample(SampleArgs),
    /// Annotate step labels (oracle rewards plus value labels).
    Annotate(AnnotateArgs),
    /// Train a supervision variant (orm | prm | vm | birm).
    Train(TrainArgs),
    /// Best-of-N accuracy curve for one scorer.
    EvalBon(EvalBonArgs),
    /// Beam-search accuracy grid over total sampling sizes.
    EvalBeam(EvalBeamArgs),
    /// Re-rank externally scored solution dumps.
    RerankOffline(RerankOfflineArgs),
    /// Summarize a BoN curve CSV (milestones, smoothing, decline).
    Report(ReportArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenTasks(args) => run_gen_tasks(args),
        Command::Sample(args) => run_sample(args),
        Command::Annotate(args) => run_annotate(args),
        Command::Train(args) => run_train(args),
        Command::EvalBon(args) => run_eval_bon(args),
        Command::EvalBeam(args) => run_eval_beam(args),
        Command::RerankOffline(args) => run_rerank_offline(args),
        Command::Report(args) => run_report(args),
    };
    if let Err(err) = result {
        let (code, kind) = classify(&err);
        eprintln!("error: kind={kind} msg={:?}", err.to_string());
        std::process::exit(code);
    }
}

/// Map failures onto the documented exit codes.
fn classify(err: &anyhow::Error) -> (i32, &'static str) {
    if let Some(core) = err.downcast_ref::<birm_core::Error>() {
        return match core {
            birm_core::Error::Io { source, .. }
                if source.kind() == std::io::ErrorKind::NotFound =>
            {
                (3, "missing-input")
            }
            birm_core::Error::Io { .. } => (1, "io"),
            birm_core::Error::Jsonl { .. }
            | birm_core::Error::Validation(_)
            | birm_core::Error::Missing { .. } => (4, "schema"),
            birm_core::Error::Contract(_) | birm_core::Error::Index(_) => (4, "schema"),
            birm_core::Error::Empty(_) => (4, "schema"),
            birm_core::Error::Remote { .. } => (1, "remote"),
        };
    }
    if let Some(io) = err.downcast_ref::<std::io::Error>() {
        if io.kind() == std::io::ErrorKind::NotFound {
            return (3, "missing-input");
        }
        return (1, "io");
    }
    (1, "other")
}
