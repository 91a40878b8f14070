//! Subcommand implementations.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;

use birm_core::annotate::{annotate_corpus, AnnotationConfig, LabelMode};
use birm_core::bench::{
    moving_average, run_beam_grid, run_bon_curve, scaling_decline, write_beam_csv, write_bon_csv,
    ExperimentReport, ReportSummary,
};
use birm_core::corpus::{
    build_manifest, ingest_scored, read_jsonl, write_jsonl, CorpusManifest, LabeledRecord, Split,
    TrajectoryRecord,
};
use birm_core::env::{check_answer, sample_tasks, SyntheticPolicy, Task, TaskBatchParams};
use birm_core::rng::lane;
use birm_core::scoring::{
    parse_beta_sweep, score_offline, Aggregation, ModelScorer, OracleScorer, ScoreMode,
    ScoringConfig, StepScorer,
};
use birm_core::search::sample_candidates;
use birm_core::supervisor::{
    load_checkpoint, save_checkpoint, train_variant, FeatureConfig, ModelKind, TrainConfig,
};

use crate::config::{echo_config, out_path, FileSection};

fn init_workers(workers: Option<usize>) {
    if let Some(n) = workers {
        // Ignore the error if a pool already exists (repeated calls in-process).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn read_tasks(path: &Path) -> Result<Vec<Task>> {
    let tasks: Vec<Task> = read_jsonl(path)?;
    if tasks.is_empty() {
        anyhow::bail!(birm_core::Error::Empty(format!(
            "task file {}",
            path.display()
        )));
    }
    Ok(tasks)
}

fn parse_fracs(spec: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = spec
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("bad split fractions {spec:?}"))?;
    anyhow::ensure!(parts.len() == 3, "split needs three fractions, got {spec:?}");
    Ok([parts[0], parts[1], parts[2]])
}

fn parse_k_grid(spec: &str) -> Result<Vec<usize>> {
    spec.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .with_context(|| format!("bad K value {s:?}"))
        })
        .collect()
}

/// Evaluation seeds derived from the master seed.
fn eval_seeds(master: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| master.wrapping_add(i)).collect()
}

// ---------------------------------------------------------------------------
// gen-tasks
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct GenTasksArgs {
    /// Config file with a [gen-tasks] section of defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory for tasks.jsonl and the echoed config.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    modulus: Option<u64>,
    #[arg(long)]
    min_steps: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    min_eps: Option<f64>,
    #[arg(long)]
    max_eps: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Serialize)]
struct GenTasksConfig {
    count: usize,
    modulus: u64,
    min_steps: usize,
    max_steps: usize,
    min_eps: f64,
    max_eps: f64,
    seed: u64,
}

pub fn run_gen_tasks(args: GenTasksArgs) -> Result<()> {
    let file = FileSection::load(args.config.as_deref(), "gen-tasks")?;
    let defaults = TaskBatchParams::default();
    let resolved = GenTasksConfig {
        count: file.resolve(args.count, "count", 500)?,
        modulus: file.resolve(args.modulus, "modulus", defaults.modulus)?,
        min_steps: file.resolve(args.min_steps, "min_steps", defaults.min_steps)?,
        max_steps: file.resolve(args.max_steps, "max_steps", defaults.max_steps)?,
        min_eps: file.resolve(args.min_eps, "min_eps", defaults.min_eps)?,
        max_eps: file.resolve(args.max_eps, "max_eps", defaults.max_eps)?,
        seed: file.resolve(args.seed, "seed", 0)?,
    };
    echo_config(&args.out_dir, "gen-tasks", &resolved)?;

    let params = TaskBatchParams {
        modulus: resolved.modulus,
        min_steps: resolved.min_steps,
        max_steps: resolved.max_steps,
        min_eps: resolved.min_eps,
        max_eps: resolved.max_eps,
    };
    let tasks = sample_tasks(resolved.count, &params, resolved.seed)?;
    let path = out_path(&args.out_dir, "tasks.jsonl");
    let n = write_jsonl(&tasks, &path)?;
    eprintln!("gen-tasks: wrote {n} tasks to {}", path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct SampleArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// tasks.jsonl produced by gen-tasks.
    #[arg(long)]
    tasks: Option<PathBuf>,
    /// Solutions sampled per query.
    #[arg(long)]
    per_task: Option<usize>,
    /// Query-level split fractions "train,dev,test".
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Serialize)]
struct SampleConfig {
    tasks: PathBuf,
    per_task: usize,
    split: String,
    seed: u64,
}

pub fn run_sample(args: SampleArgs) -> Result<()> {
    use rayon::prelude::*;
    init_workers(args.workers);
    let file = FileSection::load(args.config.as_deref(), "sample")?;
    let resolved = SampleConfig {
        tasks: file.resolve_required(args.tasks, "tasks")?,
        per_task: file.resolve(args.per_task, "per_task", 15)?,
        split: file.resolve(args.split, "split", "1,0,0".into())?,
        seed: file.resolve(args.seed, "seed", 0)?,
    };
    echo_config(&args.out_dir, "sample", &resolved)?;

    let tasks = read_tasks(&resolved.tasks)?;
    let fracs = parse_fracs(&resolved.split)?;
    let manifest = build_manifest(tasks.len(), resolved.per_task, fracs, resolved.seed)?;

    let per_task: Vec<Vec<TrajectoryRecord>> = tasks
        .par_iter()
        .enumerate()
        .map(|(ti, task)| {
            let pool = sample_candidates(
                task,
                &SyntheticPolicy,
                resolved.per_task,
                lane(&[resolved.seed, ti as u64]),
            )?;
            let view = serde_json::to_value(task.view())
                .map_err(|e| birm_core::Error::Validation(format!("encode view: {e}")))?;
            Ok(pool
                .into_iter()
                .map(|traj| {
                    let correct = check_answer(task, traj.final_answer);
                    TrajectoryRecord::from_trajectory(&traj, view.clone(), correct)
                })
                .collect())
        })
        .collect::<birm_core::Result<_>>()?;
    let records: Vec<TrajectoryRecord> = per_task.into_iter().flatten().collect();

    let records_path = out_path(&args.out_dir, "records.jsonl");
    write_jsonl(&records, &records_path)?;
    let manifest_path = out_path(&args.out_dir, "manifest.json");
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).context("encode manifest")?,
    )
    .map_err(|e| birm_core::Error::io(&manifest_path, e))?;
    eprintln!(
        "sample: wrote {} records ({} per task) to {}",
        records.len(),
        resolved.per_task,
        records_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// annotate
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct AnnotateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// records.jsonl produced by sample.
    #[arg(long)]
    records: Option<PathBuf>,
    /// tasks.jsonl with the oracle tasks the records reference.
    #[arg(long)]
    tasks: Option<PathBuf>,
    /// mc_soft | mc_hard | outcome | er_prm
    #[arg(long)]
    mode: Option<String>,
    /// Rollouts per intermediate step.
    #[arg(long)]
    rollouts: Option<usize>,
    /// Entropy-regularization strength (er_prm only).
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Serialize)]
struct AnnotateConfig {
    records: PathBuf,
    tasks: PathBuf,
    mode: String,
    rollouts: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    eta: Option<f64>,
    seed: u64,
}

pub fn run_annotate(args: AnnotateArgs) -> Result<()> {
    init_workers(args.workers);
    let file = FileSection::load(args.config.as_deref(), "annotate")?;
    let resolved = AnnotateConfig {
        records: file.resolve_required(args.records, "records")?,
        tasks: file.resolve_required(args.tasks, "tasks")?,
        mode: file.resolve(args.mode, "mode", "mc_soft".into())?,
        rollouts: file.resolve(args.rollouts, "rollouts", 8)?,
        eta: file.resolve_optional(args.eta, "eta")?,
        seed: file.resolve(args.seed, "seed", 0)?,
    };
    echo_config(&args.out_dir, "annotate", &resolved)?;

    let records: Vec<TrajectoryRecord> = read_jsonl(&resolved.records)?;
    let tasks = read_tasks(&resolved.tasks)?;
    let map: HashMap<String, Task> = tasks.into_iter().map(|t| (t.id.clone(), t)).collect();
    let config = AnnotationConfig {
        rollouts_per_step: resolved.rollouts,
        mode: resolved.mode.parse::<LabelMode>()?,
        eta: resolved.eta,
        master_seed: resolved.seed,
    };
    let labeled = annotate_corpus(&records, &map, &config)?;
    let path = out_path(&args.out_dir, "labeled.jsonl");
    write_jsonl(&labeled, &path)?;
    eprintln!("annotate: wrote {} labeled records to {}", labeled.len(), path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// labeled.jsonl produced by annotate.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// orm | prm | vm | birm
    #[arg(long)]
    kind: Option<String>,
    /// Loss mixing coefficient c for the value term.
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Step-index cap of the featurizer.
    #[arg(long)]
    m_max: Option<usize>,
    /// manifest.json from sample; records of other splits are dropped.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// train | dev | test (with --manifest).
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Serialize)]
struct TrainCliConfig {
    corpus: PathBuf,
    kind: String,
    c: f64,
    learning_rate: f64,
    epochs: usize,
    batch_size: usize,
    hidden: usize,
    m_max: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    manifest: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    split: Option<String>,
    seed: u64,
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "dev" => Ok(Split::Dev),
        "test" => Ok(Split::Test),
        other => anyhow::bail!("unknown split {other:?}"),
    }
}

pub fn run_train(args: TrainArgs) -> Result<()> {
    let file = FileSection::load(args.config.as_deref(), "train")?;
    let defaults = TrainConfig::default();
    let resolved = TrainCliConfig {
        corpus: file.resolve_required(args.corpus, "corpus")?,
        kind: file.resolve(args.kind, "kind", "birm".into())?,
        c: file.resolve(args.c, "c", defaults.c)?,
        learning_rate: file.resolve(args.learning_rate, "learning_rate", defaults.learning_rate)?,
        epochs: file.resolve(args.epochs, "epochs", defaults.epochs)?,
        batch_size: file.resolve(args.batch_size, "batch_size", defaults.batch_size)?,
        hidden: file.resolve(args.hidden, "hidden", defaults.hidden_dim)?,
        m_max: file.resolve(args.m_max, "m_max", FeatureConfig::default().max_steps)?,
        manifest: file.resolve_optional(args.manifest, "manifest")?,
        split: file.resolve_optional(args.split, "split")?,
        seed: file.resolve(args.seed, "seed", defaults.seed)?,
    };
    echo_config(&args.out_dir, "train", &resolved)?;

    let mut records: Vec<LabeledRecord> = read_jsonl(&resolved.corpus)?;
    if let Some(manifest_path) = &resolved.manifest {
        let manifest: CorpusManifest = serde_json::from_str(
            &std::fs::read_to_string(manifest_path)
                .map_err(|e| birm_core::Error::io(manifest_path, e))?,
        )
        .context("decode manifest")?;
        let split = parse_split(resolved.split.as_deref().unwrap_or("train"))?;
        // sample writes records grouped by query in task order, so record i
        // belongs to query i / responses_per_query.
        records = records
            .into_iter()
            .enumerate()
            .filter(|(i, _)| {
                manifest.split_of(i / manifest.responses_per_query) == split
            })
            .map(|(_, r)| r)
            .collect();
    }
    anyhow::ensure!(!records.is_empty(), "no records left to train on");

    // The featurizer's modulus comes from the corpus itself.
    let view: birm_core::env::TaskView =
        serde_json::from_value(records[0].record.question.clone())
            .context("first record's question payload is not a task view")?;
    let features = FeatureConfig {
        max_steps: resolved.m_max,
        modulus: view.modulus,
    };
    let kind = resolved.kind.parse::<ModelKind>()?;
    let train_config = TrainConfig {
        c: resolved.c,
        learning_rate: resolved.learning_rate,
        epochs: resolved.epochs,
        batch_size: resolved.batch_size,
        seed: resolved.seed,
        hidden_dim: resolved.hidden,
    };
    let (model, history) = train_variant(&records, kind, &features, &train_config)?;

    let model_path = out_path(&args.out_dir, "model.json");
    save_checkpoint(&model_path, &model, &features, &train_config)?;
    let history_path = out_path(&args.out_dir, "history.csv");
    let mut writer = csv::Writer::from_path(&history_path)
        .map_err(|e| birm_core::Error::Validation(format!("csv: {e}")))?;
    writer
        .write_record(["epoch", "prm", "vm", "birm"])
        .context("csv header")?;
    for row in &history {
        writer
            .write_record([
                row.epoch.to_string(),
                format!("{:.9}", row.prm),
                format!("{:.9}", row.vm),
                format!("{:.9}", row.birm),
            ])
            .context("csv row")?;
    }
    writer.flush().context("flush history")?;
    eprintln!(
        "train: {} on {} records, final losses prm={:.4} vm={:.4} birm={:.4} -> {}",
        resolved.kind,
        records.len(),
        history.last().unwrap().prm,
        history.last().unwrap().vm,
        history.last().unwrap().birm,
        model_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// eval-bon / eval-beam
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct EvalBonArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    tasks: Option<PathBuf>,
    /// model | oracle
    #[arg(long)]
    scorer: Option<String>,
    /// Checkpoint path (scorer = model).
    #[arg(long)]
    model: Option<PathBuf>,
    /// orm | prm | vm | birm
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    beta: Option<f64>,
    /// prod | min | max | avg
    #[arg(long)]
    agg: Option<String>,
    #[arg(long)]
    n_max: Option<usize>,
    /// Number of evaluation seeds.
    #[arg(long)]
    seeds: Option<usize>,
    /// Zero-mean noise applied to both heads before ranking.
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Method name used in the CSV.
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Serialize)]
struct EvalBonConfig {
    tasks: PathBuf,
    scorer: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<PathBuf>,
    mode: String,
    beta: f64,
    agg: String,
    n_max: usize,
    seeds: usize,
    noise_sigma: f64,
    name: String,
    seed: u64,
}

fn build_scorer(
    scorer: &str,
    model_path: Option<&Path>,
    tasks: &[Task],
    config: ScoringConfig,
) -> Result<Box<dyn StepScorer>> {
    match scorer {
        "oracle" => Ok(Box::new(OracleScorer::new(tasks.to_vec(), config))),
        "model" => {
            let path = model_path.ok_or_else(|| {
                anyhow::anyhow!("scorer \"model\" requires --model <checkpoint>")
            })?;
            let checkpoint = load_checkpoint(path)?;
            Ok(Box::new(ModelScorer {
                model: checkpoint.model,
                features: checkpoint.features,
                config,
            }))
        }
        other => anyhow::bail!(birm_core::Error::Validation(format!(
            "unknown scorer {other:?} (model | oracle)"
        ))),
    }
}

pub fn run_eval_bon(args: EvalBonArgs) -> Result<()> {
    init_workers(args.workers);
    let file = FileSection::load(args.config.as_deref(), "eval-bon")?;
    let scorer_kind: String = file.resolve(args.scorer, "scorer", "model".into())?;
    let default_mode = if scorer_kind == "oracle" { "vm" } else { "birm" };
    let resolved = EvalBonConfig {
        tasks: file.resolve_required(args.tasks, "tasks")?,
        model: file.resolve_optional(args.model, "model")?,
        mode: file.resolve(args.mode, "mode", default_mode.into())?,
        beta: file.resolve(args.beta, "beta", 1.0)?,
        agg: file.resolve(args.agg, "agg", "prod".into())?,
        n_max: file.resolve(args.n_max, "n_max", 512)?,
        seeds: file.resolve(args.seeds, "seeds", 5)?,
        noise_sigma: file.resolve(args.noise_sigma, "noise_sigma", 0.0)?,
        name: file.resolve(args.name, "name", scorer_kind.clone())?,
        scorer: scorer_kind,
        seed: file.resolve(args.seed, "seed", 0)?,
    };
    echo_config(&args.out_dir, "eval-bon", &resolved)?;

    let tasks = read_tasks(&resolved.tasks)?;
    let scoring = ScoringConfig {
        mode: resolved.mode.parse::<ScoreMode>()?,
        aggregation: resolved.agg.parse::<Aggregation>()?,
        beta: resolved.beta,
    };
    let scorer = build_scorer(
        &resolved.scorer,
        resolved.model.as_deref(),
        &tasks,
        scoring.clone(),
    )?;
    let seeds = eval_seeds(resolved.seed, resolved.seeds);
    let curve = run_bon_curve(
        &tasks,
        &SyntheticPolicy,
        scorer.as_ref(),
        resolved.n_max,
        &seeds,
        resolved.noise_sigma,
    )?;

    let accuracies = curve.accuracies();
    let smoothed = moving_average(&accuracies, 10);
    let report = ExperimentReport {
        method: resolved.name.clone(),
        config: serde_json::json!({
            "scoring": scoring,
            "n_max": resolved.n_max,
            "seeds": seeds,
            "noise_sigma": resolved.noise_sigma,
            "n_tasks": tasks.len(),
        }),
        curve,
        summary: ReportSummary {
            milestones: vec![
                (resolved.n_max / 4, accuracies[(resolved.n_max / 4).max(1) - 1]),
                (resolved.n_max / 2, accuracies[(resolved.n_max / 2).max(1) - 1]),
                (resolved.n_max, accuracies[resolved.n_max - 1]),
            ],
            decline: scaling_decline(&smoothed),
        },
    };
    let path = out_path(&args.out_dir, "bon.csv");
    write_bon_csv(&path, std::slice::from_ref(&report))?;
    eprintln!(
        "eval-bon: {} acc@{}={:.4} decline={:.4} -> {}",
        report.method,
        resolved.n_max,
        accuracies[resolved.n_max - 1],
        report.summary.decline,
        path.display()
    );
    Ok(())
}

#[derive(Args)]
pub struct EvalBeamArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    tasks: Option<PathBuf>,
    /// model | oracle
    #[arg(long)]
    scorer: Option<String>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    agg: Option<String>,
    /// Comma-separated total sampling sizes, e.g. "4,8,20,100".
    #[arg(long)]
    k_grid: Option<String>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Serialize)]
struct EvalBeamConfig {
    tasks: PathBuf,
    scorer: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<PathBuf>,
    mode: String,
    beta: f64,
    agg: String,
    k_grid: String,
    seeds: usize,
    name: String,
    seed: u64,
}

pub fn run_eval_beam(args: EvalBeamArgs) -> Result<()> {
    init_workers(args.workers);
    let file = FileSection::load(args.config.as_deref(), "eval-beam")?;
    let scorer_kind: String = file.resolve(args.scorer, "scorer", "model".into())?;
    let default_mode = if scorer_kind == "oracle" { "vm" } else { "birm" };
    let resolved = EvalBeamConfig {
        tasks: file.resolve_required(args.tasks, "tasks")?,
        model: file.resolve_optional(args.model, "model")?,
        mode: file.resolve(args.mode, "mode", default_mode.into())?,
        beta: file.resolve(args.beta, "beta", 1.0)?,
        agg: file.resolve(args.agg, "agg", "prod".into())?,
        k_grid: file.resolve(args.k_grid, "k_grid", "4,8,20,100".into())?,
        seeds: file.resolve(args.seeds, "seeds", 3)?,
        name: file.resolve(args.name, "name", scorer_kind.clone())?,
        scorer: scorer_kind,
        seed: file.resolve(args.seed, "seed", 0)?,
    };
    echo_config(&args.out_dir, "eval-beam", &resolved)?;

    let tasks = read_tasks(&resolved.tasks)?;
    let scoring = ScoringConfig {
        mode: resolved.mode.parse::<ScoreMode>()?,
        aggregation: resolved.agg.parse::<Aggregation>()?,
        beta: resolved.beta,
    };
    let scorer = build_scorer(
        &resolved.scorer,
        resolved.model.as_deref(),
        &tasks,
        scoring,
    )?;
    let k_grid = parse_k_grid(&resolved.k_grid)?;
    let seeds = eval_seeds(resolved.seed, resolved.seeds);
    let grid = run_beam_grid(&tasks, &SyntheticPolicy, scorer.as_ref(), &k_grid, &seeds)?;

    let path = out_path(&args.out_dir, "beam.csv");
    write_beam_csv(&path, &resolved.name, &seeds, &grid)?;
    for (k, best) in &grid.best_over_b {
        eprintln!("eval-beam: K={k} best-over-b accuracy {best:.4}");
    }
    eprintln!("eval-beam: -> {}", path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// rerank-offline
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct RerankOfflineArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// JSONL of externally scored candidates (ScoredRecord schema).
    #[arg(long)]
    scored: Option<PathBuf>,
    #[arg(long)]
    mode: Option<String>,
    /// Single beta ("3.0") or sweep ("0:4:0.5").
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    agg: Option<String>,
}

#[derive(Serialize)]
struct RerankConfig {
    scored: PathBuf,
    mode: String,
    beta: String,
    agg: String,
}

pub fn run_rerank_offline(args: RerankOfflineArgs) -> Result<()> {
    let file = FileSection::load(args.config.as_deref(), "rerank-offline")?;
    let resolved = RerankConfig {
        scored: file.resolve_required(args.scored, "scored")?,
        mode: file.resolve(args.mode, "mode", "birm".into())?,
        beta: file.resolve(args.beta, "beta", "1.0".into())?,
        agg: file.resolve(args.agg, "agg", "prod".into())?,
    };
    echo_config(&args.out_dir, "rerank-offline", &resolved)?;

    let groups = ingest_scored(&resolved.scored)?;
    let betas = parse_beta_sweep(&resolved.beta)?;
    let mode = resolved.mode.parse::<ScoreMode>()?;
    let agg = resolved.agg.parse::<Aggregation>()?;

    let path = out_path(&args.out_dir, "rerank.csv");
    let mut writer = csv::Writer::from_path(&path)
        .map_err(|e| birm_core::Error::Validation(format!("csv: {e}")))?;
    writer
        .write_record([
            "task_id",
            "beta",
            "winner_index",
            "winner_answer",
            "winner_correct",
            "winner_score",
        ])
        .context("csv header")?;
    for group in &groups {
        for &beta in &betas {
            let config = ScoringConfig {
                mode,
                aggregation: agg,
                beta,
            };
            let mut best: Option<(usize, f64)> = None;
            for (i, record) in group.records.iter().enumerate() {
                let f = score_offline(record, &config)?.f;
                if best.map(|(_, bf)| f > bf).unwrap_or(true) {
                    best = Some((i, f));
                }
            }
            let (idx, score) = best.ok_or_else(|| {
                anyhow::anyhow!(birm_core::Error::Empty(format!(
                    "scored group {}",
                    group.task_id
                )))
            })?;
            let winner = &group.records[idx];
            writer
                .write_record([
                    group.task_id.clone(),
                    format!("{beta}"),
                    idx.to_string(),
                    winner
                        .record
                        .final_answer
                        .map(|a| a.to_string())
                        .unwrap_or_default(),
                    winner.record.answer_correct.to_string(),
                    format!("{score:.6}"),
                ])
                .context("csv row")?;
        }
    }
    writer.flush().context("flush rerank csv")?;
    eprintln!(
        "rerank-offline: {} groups x {} betas -> {}",
        groups.len(),
        betas.len(),
        path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct ReportArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// bon.csv produced by eval-bon.
    #[arg(long)]
    curve: Option<PathBuf>,
    /// Moving-average window.
    #[arg(long)]
    window: Option<usize>,
}

#[derive(Serialize)]
struct ReportConfig {
    curve: PathBuf,
    window: usize,
}

pub fn run_report(args: ReportArgs) -> Result<()> {
    let file = FileSection::load(args.config.as_deref(), "report")?;
    let resolved = ReportConfig {
        curve: file.resolve_required(args.curve, "curve")?,
        window: file.resolve(args.window, "window", 10)?,
    };
    echo_config(&args.out_dir, "report", &resolved)?;

    // Aggregate rows only: method -> (n, accuracy) sorted by n.
    let mut reader = csv::Reader::from_path(&resolved.curve)
        .map_err(|e| birm_core::Error::io(&resolved.curve, std::io::Error::other(e)))?;
    let headers = reader.headers().context("csv headers")?.clone();
    let idx = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow::anyhow!("curve csv lacks column {name:?}"))
    };
    let (m_i, k_i, n_i, s_i, a_i) = (
        idx("method")?,
        idx("kind")?,
        idx("n")?,
        idx("seed")?,
        idx("accuracy")?,
    );
    let mut curves: HashMap<String, Vec<(usize, f64)>> = HashMap::new();
    for row in reader.records() {
        let row = row.context("csv row")?;
        if &row[k_i] != "bon" || !row[s_i].is_empty() {
            continue;
        }
        let n: usize = row[n_i].parse().context("n column")?;
        let acc: f64 = row[a_i].parse().context("accuracy column")?;
        curves.entry(row[m_i].to_string()).or_default().push((n, acc));
    }
    anyhow::ensure!(!curves.is_empty(), "no aggregate bon rows in curve csv");

    let path = out_path(&args.out_dir, "report.csv");
    let mut writer = csv::Writer::from_path(&path)
        .map_err(|e| birm_core::Error::Validation(format!("csv: {e}")))?;
    writer
        .write_record([
            "method",
            "n_max",
            "acc_at_quarter",
            "acc_at_half",
            "acc_at_max",
            "decline",
        ])
        .context("csv header")?;
    let mut methods: Vec<&String> = curves.keys().collect();
    methods.sort();
    for method in methods {
        let mut points = curves[method].clone();
        points.sort_by_key(|(n, _)| *n);
        let accuracies: Vec<f64> = points.iter().map(|(_, a)| *a).collect();
        let smoothed = moving_average(&accuracies, resolved.window);
        let n_max = points.last().unwrap().0;
        let at = |n: usize| accuracies[n.max(1) - 1];
        writer
            .write_record([
                method.clone(),
                n_max.to_string(),
                format!("{:.6}", at(n_max / 4)),
                format!("{:.6}", at(n_max / 2)),
                format!("{:.6}", at(n_max)),
                format!("{:.6}", scaling_decline(&smoothed)),
            ])
            .context("csv row")?;
    }
    writer.flush().context("flush report csv")?;
    eprintln!("report: -> {}", path.display());
    Ok(())
}
