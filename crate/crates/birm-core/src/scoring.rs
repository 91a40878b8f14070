//! Trajectory scoring: backward reward aggregation `g`, forward value
//! estimate `h`, and the combined score `f = g + beta * h`.
//!
//! `g` summarizes the per-step rewards of the prefix with a selectable
//! aggregation (product by default; the product is computed in log space and
//! exposed exponentiated). `h` is the value estimate at the last step only.
//! The scoring mode picks what `f` is:
//!
//! * `prm`  — `f = g`; `h` is reported but unused,
//! * `vm`   — `f = h`,
//! * `orm`  — `f = h`, defined on terminal trajectories only,
//! * `birm` — `f = g + beta * h`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::ScoredRecord;
use crate::env::{oracle_reward_label, oracle_value, Task, TaskView, Trajectory};
use crate::error::{Error, Result};
use crate::supervisor::{FeatureConfig, SupervisorModel};

/// Reduction turning per-step rewards into a prefix score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Prod,
    Min,
    Max,
    Avg,
}

impl Aggregation {
    pub const ALL: [Aggregation; 4] = [
        Aggregation::Prod,
        Aggregation::Min,
        Aggregation::Max,
        Aggregation::Avg,
    ];
}

impl std::str::FromStr for Aggregation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prod" => Ok(Aggregation::Prod),
            "min" => Ok(Aggregation::Min),
            "max" => Ok(Aggregation::Max),
            "avg" => Ok(Aggregation::Avg),
            other => Err(Error::validation(format!("unknown aggregation {other:?}"))),
        }
    }
}

/// Scoring mode of a verifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    Orm,
    Prm,
    Vm,
    Birm,
}

impl std::str::FromStr for ScoreMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "orm" => Ok(ScoreMode::Orm),
            "prm" => Ok(ScoreMode::Prm),
            "vm" => Ok(ScoreMode::Vm),
            "birm" => Ok(ScoreMode::Birm),
            other => Err(Error::validation(format!("unknown score mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub mode: ScoreMode,
    /// Ignored in `orm`/`vm` modes.
    pub aggregation: Aggregation,
    pub beta: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            mode: ScoreMode::Birm,
            aggregation: Aggregation::Prod,
            beta: 1.0,
        }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::validation(format!("beta {} must be >= 0", self.beta)));
        }
        Ok(())
    }
}

/// The scored triple of one prefix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombinedScore {
    pub g: f64,
    pub h: f64,
    pub f: f64,
}

/// Per-step verifier outputs for the prefixes `s_1..t`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepScores {
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
}

/// Reduce per-step rewards to the prefix score `g`. The product runs in log
/// space and returns the exponentiated result.
pub fn aggregate(rewards: &[f64], agg: Aggregation) -> Result<f64> {
    if rewards.is_empty() {
        return Err(Error::Empty("reward sequence".into()));
    }
    for r in rewards {
        if !(0.0..=1.0).contains(r) {
            return Err(Error::validation(format!("reward {r} outside [0, 1]")));
        }
    }
    Ok(match agg {
        Aggregation::Prod => rewards.iter().map(|r| r.ln()).sum::<f64>().exp(),
        Aggregation::Min => rewards.iter().copied().fold(f64::INFINITY, f64::min),
        Aggregation::Max => rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Aggregation::Avg => rewards.iter().sum::<f64>() / rewards.len() as f64,
    })
}

/// The combined score `f = g + beta * h`.
pub fn combine(g: f64, h: f64, beta: f64) -> f64 {
    g + beta * h
}

/// Apply the mode rules to per-step scores. `terminal` states whether the
/// scored prefix is a complete solution (required by `orm`).
pub fn combined_score(
    steps: &StepScores,
    config: &ScoringConfig,
    terminal: bool,
) -> Result<CombinedScore> {
    config.validate()?;
    let last_value = steps.values.last().copied();
    match config.mode {
        ScoreMode::Prm => {
            let g = aggregate(&steps.rewards, config.aggregation)?;
            Ok(CombinedScore {
                g,
                h: last_value.unwrap_or(0.0),
                f: g,
            })
        }
        ScoreMode::Vm | ScoreMode::Orm => {
            if config.mode == ScoreMode::Orm && !terminal {
                return Err(Error::contract(
                    "orm scoring is defined on terminal trajectories only",
                ));
            }
            let h = last_value
                .ok_or_else(|| Error::missing("value_scores", "value-based scoring"))?;
            let g = if steps.rewards.is_empty() {
                0.0
            } else {
                aggregate(&steps.rewards, config.aggregation)?
            };
            Ok(CombinedScore { g, h, f: h })
        }
        ScoreMode::Birm => {
            let g = aggregate(&steps.rewards, config.aggregation)?;
            let h = last_value
                .ok_or_else(|| Error::missing("value_scores", "birm scoring"))?;
            Ok(CombinedScore {
                g,
                h,
                f: combine(g, h, config.beta),
            })
        }
    }
}

/// Model outputs for every step prefix of `prefix`.
pub fn model_step_scores(
    model: &SupervisorModel,
    features: &FeatureConfig,
    view: &TaskView,
    prefix: &Trajectory,
) -> Result<StepScores> {
    let mut scores = StepScores::default();
    for t in 1..=prefix.steps.len() {
        let sub = prefix.prefix(t, view.num_steps);
        let x = features.features(view, &sub)?;
        let (r, v) = model.forward(&x)?;
        scores.rewards.push(r);
        scores.values.push(v);
    }
    Ok(scores)
}

/// Score a partial solution with a trained model under `config`.
pub fn score_partial(
    model: &SupervisorModel,
    features: &FeatureConfig,
    view: &TaskView,
    prefix: &Trajectory,
    config: &ScoringConfig,
) -> Result<CombinedScore> {
    if prefix.steps.is_empty() {
        return Err(Error::contract("cannot score an empty prefix"));
    }
    let steps = model_step_scores(model, features, view, prefix)?;
    combined_score(&steps, config, prefix.terminal)
}

/// Score an externally scored record with the same arithmetic. Errors name
/// the sequence a mode needs but the record lacks.
pub fn score_offline(record: &ScoredRecord, config: &ScoringConfig) -> Result<CombinedScore> {
    let needs_rewards = matches!(config.mode, ScoreMode::Prm | ScoreMode::Birm);
    let needs_values = matches!(config.mode, ScoreMode::Vm | ScoreMode::Orm | ScoreMode::Birm);
    if needs_rewards && record.reward_scores.is_none() {
        return Err(Error::missing(
            "reward_scores",
            format!("record for {}", record.record.task_id),
        ));
    }
    if needs_values && record.value_scores.is_none() {
        return Err(Error::missing(
            "value_scores",
            format!("record for {}", record.record.task_id),
        ));
    }
    let steps = StepScores {
        rewards: record.reward_scores.clone().unwrap_or_default(),
        values: record.value_scores.clone().unwrap_or_default(),
    };
    combined_score(&steps, config, record.record.final_answer.is_some())
}

/// Anything that can score a partial solution. Implementations must be
/// shareable read-only across search workers.
pub trait StepScorer: Sync {
    /// Per-step verifier outputs for every prefix of `prefix`.
    fn step_scores(&self, view: &TaskView, prefix: &Trajectory) -> Result<StepScores>;

    fn scoring_config(&self) -> &ScoringConfig;

    /// Combined score of the prefix under this scorer's config.
    fn score_prefix(&self, view: &TaskView, prefix: &Trajectory) -> Result<CombinedScore> {
        if prefix.steps.is_empty() {
            return Err(Error::contract("cannot score an empty prefix"));
        }
        let steps = self.step_scores(view, prefix)?;
        combined_score(&steps, self.scoring_config(), prefix.terminal)
    }
}

/// Scorer backed by a trained supervisor model.
#[derive(Debug, Clone)]
pub struct ModelScorer {
    pub model: SupervisorModel,
    pub features: FeatureConfig,
    pub config: ScoringConfig,
}

impl StepScorer for ModelScorer {
    fn step_scores(&self, view: &TaskView, prefix: &Trajectory) -> Result<StepScores> {
        model_step_scores(&self.model, &self.features, view, prefix)
    }

    fn scoring_config(&self) -> &ScoringConfig {
        &self.config
    }
}

/// Scorer backed by the environment's exact oracles: step rewards from
/// [`oracle_reward_label`], values from the [`oracle_value`] dynamic program.
#[derive(Debug, Clone)]
pub struct OracleScorer {
    tasks: HashMap<String, Task>,
    pub config: ScoringConfig,
}

impl OracleScorer {
    pub fn new(tasks: impl IntoIterator<Item = Task>, config: ScoringConfig) -> Self {
        OracleScorer {
            tasks: tasks.into_iter().map(|t| (t.id.clone(), t)).collect(),
            config,
        }
    }

    /// Pure exact-value scorer (`vm` mode, used as the search oracle).
    pub fn value_only(tasks: impl IntoIterator<Item = Task>) -> Self {
        OracleScorer::new(
            tasks,
            ScoringConfig {
                mode: ScoreMode::Vm,
                aggregation: Aggregation::Prod,
                beta: 0.0,
            },
        )
    }

    fn task(&self, id: &str) -> Result<&Task> {
        self.tasks
            .get(id)
            .ok_or_else(|| Error::missing("task", format!("oracle scorer has no task {id}")))
    }
}

impl StepScorer for OracleScorer {
    fn step_scores(&self, view: &TaskView, prefix: &Trajectory) -> Result<StepScores> {
        let task = self.task(&view.task_id)?;
        let mut scores = StepScores::default();
        for t in 1..=prefix.steps.len() {
            scores
                .rewards
                .push(f64::from(oracle_reward_label(task, prefix, t)?));
            let sub = prefix.prefix(t, task.num_steps());
            scores.values.push(oracle_value(task, &sub)?);
        }
        Ok(scores)
    }

    fn scoring_config(&self) -> &ScoringConfig {
        &self.config
    }
}

/// Parse a beta sweep: either a single value (`"1.5"`) or an inclusive range
/// with step (`"0:4:0.5"`).
pub fn parse_beta_sweep(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let parse = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::validation(format!("bad beta component {s:?}")))
    };
    match parts.as_slice() {
        [single] => Ok(vec![parse(single)?]),
        [start, end, step] => {
            let (start, end, step) = (parse(start)?, parse(end)?, parse(step)?);
            if !(step > 0.0) || end < start {
                return Err(Error::validation(format!(
                    "beta sweep {spec:?} needs start <= end and step > 0"
                )));
            }
            let count = ((end - start) / step + 1e-9).floor() as usize + 1;
            Ok((0..count).map(|i| start + step * i as f64).collect())
        }
        _ => Err(Error::validation(format!(
            "beta sweep {spec:?} is not \"value\" or \"start:end:step\""
        ))),
    }
}
