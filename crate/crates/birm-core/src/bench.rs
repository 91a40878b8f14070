//! Experiment harness: Best-of-N curves, beam grids, method comparisons, and
//! the scaling-decline analysis.
//!
//! Candidate pools are shared: for eval seed `s` and task index `i`, the pool
//! is always sampled on `lane([s, i])`, so every method ranks exactly the
//! same candidates and the scorer is the only varying factor. Accuracy curves
//! are prefix-consistent by the same rule: the first `N` candidates of an
//! `N_max` pool equal an independent run with `N_max = N`.
//!
//! The noisy-verifier mode perturbs both heads' per-step outputs with
//! zero-mean Gaussian noise before ranking, then clamps back into `[0, 1]`.
//! Noise draws depend only on (seed, task, candidate, step), never on the
//! method, so "the same noise on both heads" holds across compared methods.
//!
//! CSV schema (stable, one file per experiment):
//! `method,kind,n,b,seed,accuracy,stderr,smoothed`
//!
//! * `kind` is `bon` or `beam`; `n` holds N for BoN rows and the total
//!   sampling size K for beam rows.
//! * per-seed rows carry a seed and leave `stderr`/`smoothed` empty;
//!   aggregate rows leave `seed` empty and carry the seed-averaged accuracy,
//!   its standard error, and (for BoN) the window-10 moving average.
//! * beam aggregate rows with `b = best` report the best accuracy over all
//!   beam sizes for that K.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{check_answer, GeneratorPolicy, Task};
use crate::error::{Error, Result};
use crate::rng;
use crate::scoring::{combined_score, StepScorer, StepScores};
use crate::search::{beam_search, sample_candidates, SearchConfig};

const NOISE_SALT: u64 = 0x6e6f_6973_65;

/// One point of an accuracy-vs-N curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: usize,
    pub accuracy: f64,
    pub stderr: f64,
    pub seeds: usize,
}

/// A Best-of-N accuracy curve with its per-seed breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct BonCurve {
    pub seeds: Vec<u64>,
    /// `per_seed[s][n-1]` = accuracy of Best-of-n under seed `s`.
    pub per_seed: Vec<Vec<f64>>,
    pub points: Vec<CurvePoint>,
}

impl BonCurve {
    pub fn accuracies(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.accuracy).collect()
    }
}

/// Summary scalars of one method's curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    /// Accuracy at N_max/4, N_max/2 and N_max (where defined).
    pub milestones: Vec<(usize, f64)>,
    /// Scaling decline of the window-10 smoothed curve.
    pub decline: f64,
}

/// A method's full evaluation record; the config snapshot carries everything
/// needed to rerun it bit-identically.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub method: String,
    pub config: serde_json::Value,
    pub curve: BonCurve,
    pub summary: ReportSummary,
}

/// A named scorer entering a comparison.
pub struct Method<'a> {
    pub name: String,
    pub scorer: &'a dyn StepScorer,
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; u1 in (0, 1] so the log stays finite.
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Perturb both heads' outputs and clamp back into [0, 1]. The reward noise
/// for a step is drawn before its value noise, so draws are reproducible.
fn perturb(scores: &mut StepScores, sigma: f64, rng: &mut ChaCha8Rng) {
    for t in 0..scores.rewards.len().max(scores.values.len()) {
        let xi_r = standard_normal(rng);
        let xi_v = standard_normal(rng);
        if let Some(r) = scores.rewards.get_mut(t) {
            *r = (*r + sigma * xi_r).clamp(0.0, 1.0);
        }
        if let Some(v) = scores.values.get_mut(t) {
            *v = (*v + sigma * xi_v).clamp(0.0, 1.0);
        }
    }
}

/// Per-method Best-of-n selection-correctness curves for one task pool.
fn pool_curves(
    task: &Task,
    pool_seed: u64,
    noise_master: u64,
    policy: &dyn GeneratorPolicy,
    methods: &[Method<'_>],
    n_max: usize,
    noise_sigma: f64,
) -> Result<Vec<Vec<bool>>> {
    let pool = sample_candidates(task, policy, n_max, pool_seed)?;
    let view = task.view();
    let correct: Vec<bool> = pool
        .iter()
        .map(|t| check_answer(task, t.final_answer))
        .collect();

    methods
        .iter()
        .map(|method| {
            let mut best_score = f64::NEG_INFINITY;
            let mut best_correct = false;
            let mut curve = Vec::with_capacity(n_max);
            for (ci, trajectory) in pool.iter().enumerate() {
                let mut steps = method.scorer.step_scores(&view, trajectory)?;
                if noise_sigma > 0.0 {
                    let mut noise_rng =
                        rng::substream(noise_master, rng::lane(&[NOISE_SALT, ci as u64]));
                    perturb(&mut steps, noise_sigma, &mut noise_rng);
                }
                let f = combined_score(&steps, method.scorer.scoring_config(), true)?.f;
                if f > best_score {
                    best_score = f;
                    best_correct = correct[ci];
                }
                curve.push(best_correct);
            }
            Ok(curve)
        })
        .collect()
}

/// Evaluate several methods on shared candidate pools. Returns, per method,
/// `acc[seed][n-1]` (mean over tasks).
pub fn compare_on_pools(
    tasks: &[Task],
    policy: &dyn GeneratorPolicy,
    methods: &[Method<'_>],
    n_max: usize,
    seeds: &[u64],
    noise_sigma: f64,
) -> Result<Vec<Vec<Vec<f64>>>> {
    if tasks.is_empty() {
        return Err(Error::Empty("task set".into()));
    }
    if n_max < 1 {
        return Err(Error::validation("n_max must be >= 1"));
    }
    let mut per_method: Vec<Vec<Vec<f64>>> =
        vec![vec![Vec::new(); seeds.len()]; methods.len()];

    for (si, &seed) in seeds.iter().enumerate() {
        // Task-level parallelism; the ordered collect keeps the reduce
        // deterministic regardless of scheduling.
        let task_curves: Vec<Vec<Vec<bool>>> = tasks
            .par_iter()
            .enumerate()
            .map(|(ti, task)| {
                let pool_seed = rng::lane(&[seed, ti as u64]);
                let noise_master = rng::lane(&[seed, ti as u64, NOISE_SALT]);
                pool_curves(
                    task,
                    pool_seed,
                    noise_master,
                    policy,
                    methods,
                    n_max,
                    noise_sigma,
                )
            })
            .collect::<Result<_>>()?;

        for (mi, _) in methods.iter().enumerate() {
            let mut acc = vec![0.0f64; n_max];
            for curves in &task_curves {
                for (n, &ok) in curves[mi].iter().enumerate() {
                    if ok {
                        acc[n] += 1.0;
                    }
                }
            }
            for a in &mut acc {
                *a /= tasks.len() as f64;
            }
            per_method[mi][si] = acc;
        }
    }
    Ok(per_method)
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn curve_from_per_seed(seeds: &[u64], per_seed: Vec<Vec<f64>>) -> BonCurve {
    let n_max = per_seed[0].len();
    let points = (0..n_max)
        .map(|n| {
            let at_n: Vec<f64> = per_seed.iter().map(|s| s[n]).collect();
            let (accuracy, stderr) = mean_and_stderr(&at_n);
            CurvePoint {
                n: n + 1,
                accuracy,
                stderr,
                seeds: seeds.len(),
            }
        })
        .collect();
    BonCurve {
        seeds: seeds.to_vec(),
        per_seed,
        points,
    }
}

/// Best-of-N accuracy curve for one scorer: `n_max` candidates per task per
/// seed, evaluated at every N ≤ n_max by prefix reuse, averaged over seeds.
pub fn run_bon_curve(
    tasks: &[Task],
    policy: &dyn GeneratorPolicy,
    scorer: &dyn StepScorer,
    n_max: usize,
    seeds: &[u64],
    noise_sigma: f64,
) -> Result<BonCurve> {
    let methods = [Method {
        name: "scorer".into(),
        scorer,
    }];
    let mut per_method =
        compare_on_pools(tasks, policy, &methods, n_max, seeds, noise_sigma)?;
    Ok(curve_from_per_seed(seeds, per_method.remove(0)))
}

/// Trailing moving average with a shrinking left-edge window:
/// `out[i] = mean(values[max(0, i+1-w) ..= i])`.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1, "window must be >= 1");
    values
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let lo = (i + 1).saturating_sub(window);
            let slice = &values[lo..=i];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect()
}

/// Peak-minus-final accuracy of a curve: positive values signal decline.
/// Callers smooth first (window 10 for the standard analysis).
pub fn scaling_decline(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    match values.last() {
        Some(last) => max - last,
        None => 0.0,
    }
}

/// Compare methods on shared pools and summarize each into a report.
pub fn compare_methods(
    tasks: &[Task],
    policy: &dyn GeneratorPolicy,
    methods: &[Method<'_>],
    n_max: usize,
    seeds: &[u64],
    noise_sigma: f64,
) -> Result<Vec<ExperimentReport>> {
    let per_method = compare_on_pools(tasks, policy, methods, n_max, seeds, noise_sigma)?;
    Ok(methods
        .iter()
        .zip(per_method)
        .map(|(method, per_seed)| {
            let curve = curve_from_per_seed(seeds, per_seed);
            let accuracies = curve.accuracies();
            let smoothed = moving_average(&accuracies, 10);
            let milestone = |n: usize| (n, accuracies[n - 1]);
            let mut milestones = vec![milestone(n_max)];
            if n_max / 2 >= 1 {
                milestones.insert(0, milestone(n_max / 2));
            }
            if n_max / 4 >= 1 {
                milestones.insert(0, milestone(n_max / 4));
            }
            milestones.dedup();
            ExperimentReport {
                method: method.name.clone(),
                config: serde_json::json!({
                    "method": method.name,
                    "scoring": method.scorer.scoring_config(),
                    "n_max": n_max,
                    "seeds": seeds,
                    "noise_sigma": noise_sigma,
                    "n_tasks": tasks.len(),
                }),
                curve,
                summary: ReportSummary {
                    milestones,
                    decline: scaling_decline(&smoothed),
                },
            }
        })
        .collect())
}

/// One (K, b) cell of a beam grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamGridCell {
    pub total_size: usize,
    pub beam_size: usize,
    pub per_seed: Vec<f64>,
    pub accuracy: f64,
    pub stderr: f64,
}

/// Beam-search accuracy over a K grid, all divisor beam sizes per K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamGrid {
    pub cells: Vec<BeamGridCell>,
    /// Per K: the best mean accuracy over its beam sizes.
    pub best_over_b: Vec<(usize, f64)>,
}

/// All divisors of `k`, descending (largest beam first, matching the grid
/// presentation).
pub fn divisors_desc(k: usize) -> Vec<usize> {
    let mut ds: Vec<usize> = (1..=k).filter(|b| k % b == 0).collect();
    ds.reverse();
    ds
}

/// Run beam search over `k_grid`, trying every divisor of each K as the beam
/// size. The per-run seed is derived from (seed, task, K, b); accuracy is
/// averaged over tasks, then over seeds.
pub fn run_beam_grid(
    tasks: &[Task],
    policy: &dyn GeneratorPolicy,
    scorer: &dyn StepScorer,
    k_grid: &[usize],
    seeds: &[u64],
) -> Result<BeamGrid> {
    if tasks.is_empty() {
        return Err(Error::Empty("task set".into()));
    }
    if k_grid.iter().any(|&k| k < 1) {
        return Err(Error::validation("every K must be >= 1"));
    }
    let mut cells = Vec::new();
    let mut best_over_b = Vec::new();
    for &k in k_grid {
        let mut best: f64 = f64::NEG_INFINITY;
        for b in divisors_desc(k) {
            let mut per_seed = Vec::with_capacity(seeds.len());
            for &seed in seeds {
                let correct: Vec<bool> = tasks
                    .par_iter()
                    .enumerate()
                    .map(|(ti, task)| {
                        let config = SearchConfig {
                            total_size: k,
                            beam_size: b,
                            max_rounds: task.num_steps(),
                            seed: rng::lane(&[seed, ti as u64, k as u64, b as u64]),
                        };
                        let picked = beam_search(task, policy, scorer, &config)?;
                        Ok(check_answer(task, picked.trajectory.final_answer))
                    })
                    .collect::<Result<_>>()?;
                per_seed
                    .push(correct.iter().filter(|&&c| c).count() as f64 / tasks.len() as f64);
            }
            let (accuracy, stderr) = mean_and_stderr(&per_seed);
            best = best.max(accuracy);
            cells.push(BeamGridCell {
                total_size: k,
                beam_size: b,
                per_seed,
                accuracy,
                stderr,
            });
        }
        best_over_b.push((k, best));
    }
    Ok(BeamGrid { cells, best_over_b })
}

const CSV_HEADER: [&str; 8] = [
    "method", "kind", "n", "b", "seed", "accuracy", "stderr", "smoothed",
];

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.6}")
}

/// Write BoN reports: per-seed rows plus aggregate rows with stderr and the
/// window-10 smoothed accuracy.
pub fn write_bon_csv(path: impl AsRef<Path>, reports: &[ExperimentReport]) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv_writer(path)?;
    writer
        .write_record(CSV_HEADER)
        .map_err(|e| Error::validation(format!("csv: {e}")))?;
    for report in reports {
        let accuracies = report.curve.accuracies();
        let smoothed = moving_average(&accuracies, 10);
        for (si, seed) in report.curve.seeds.iter().enumerate() {
            for (n0, acc) in report.curve.per_seed[si].iter().enumerate() {
                writer
                    .write_record([
                        report.method.as_str(),
                        "bon",
                        &(n0 + 1).to_string(),
                        "",
                        &seed.to_string(),
                        &fmt_f64(*acc),
                        "",
                        "",
                    ])
                    .map_err(|e| Error::validation(format!("csv: {e}")))?;
            }
        }
        for point in &report.curve.points {
            writer
                .write_record([
                    report.method.as_str(),
                    "bon",
                    &point.n.to_string(),
                    "",
                    "",
                    &fmt_f64(point.accuracy),
                    &fmt_f64(point.stderr),
                    &fmt_f64(smoothed[point.n - 1]),
                ])
                .map_err(|e| Error::validation(format!("csv: {e}")))?;
        }
    }
    writer
        .flush()
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    Ok(())
}

/// Write a beam grid: per-seed rows, aggregate rows, and `b = best` rows.
pub fn write_beam_csv(
    path: impl AsRef<Path>,
    method: &str,
    seeds: &[u64],
    grid: &BeamGrid,
) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv_writer(path)?;
    writer
        .write_record(CSV_HEADER)
        .map_err(|e| Error::validation(format!("csv: {e}")))?;
    for cell in &grid.cells {
        for (si, seed) in seeds.iter().enumerate() {
            writer
                .write_record([
                    method,
                    "beam",
                    &cell.total_size.to_string(),
                    &cell.beam_size.to_string(),
                    &seed.to_string(),
                    &fmt_f64(cell.per_seed[si]),
                    "",
                    "",
                ])
                .map_err(|e| Error::validation(format!("csv: {e}")))?;
        }
        writer
            .write_record([
                method,
                "beam",
                &cell.total_size.to_string(),
                &cell.beam_size.to_string(),
                "",
                &fmt_f64(cell.accuracy),
                &fmt_f64(cell.stderr),
                "",
            ])
            .map_err(|e| Error::validation(format!("csv: {e}")))?;
    }
    for (k, best) in &grid.best_over_b {
        writer
            .write_record([
                method,
                "beam",
                &k.to_string(),
                "best",
                "",
                &fmt_f64(*best),
                "",
                "",
            ])
            .map_err(|e| Error::validation(format!("csv: {e}")))?;
    }
    writer
        .flush()
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    Ok(())
}
