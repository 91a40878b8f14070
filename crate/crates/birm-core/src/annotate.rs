//! Step-label annotation.
//!
//! Reward labels come straight from the environment oracle. Value labels are
//! produced by one of four estimators:
//!
//! * `mc_soft` — fraction `M/N` of `N` rollouts from the prefix that reach
//!   the correct final answer,
//! * `mc_hard` — indicator that any rollout reached it,
//! * `outcome` — the final answer's correctness replicated onto every step,
//! * `er_prm` — the entropy-regularized transform
//!   `(1/eta) * ln((1-p) + p*e^eta)` of the rollout success rate `p`.
//!
//! The `N` rollouts drawn at a prefix are shared between the soft and hard
//! estimates, so `hard = 1` exactly when `soft > 0`. Fresh rollouts are drawn
//! per prefix; annotations are independent across (record, step) pairs and
//! each consumes its own rng stream, so the corpus is deterministic under the
//! master seed regardless of worker count.

use std::collections::HashMap;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{LabeledRecord, TrajectoryRecord};
use crate::env::{oracle_reward_label, rollout, GeneratorPolicy, SyntheticPolicy, Task, Trajectory};
use crate::error::{Error, Result};
use crate::rng;

/// Which value-label estimator to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    McSoft,
    McHard,
    Outcome,
    ErPrm,
}

impl std::str::FromStr for LabelMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mc_soft" => Ok(LabelMode::McSoft),
            "mc_hard" => Ok(LabelMode::McHard),
            "outcome" => Ok(LabelMode::Outcome),
            "er_prm" => Ok(LabelMode::ErPrm),
            other => Err(Error::validation(format!("unknown label mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationConfig {
    /// Rollouts per intermediate step (`N`).
    pub rollouts_per_step: usize,
    pub mode: LabelMode,
    /// Entropy-regularization strength; required for `er_prm`.
    pub eta: Option<f64>,
    pub master_seed: u64,
}

impl Default for AnnotationConfig {
    fn default() -> Self {
        AnnotationConfig {
            rollouts_per_step: 8,
            mode: LabelMode::McSoft,
            eta: None,
            master_seed: 0,
        }
    }
}

impl AnnotationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rollouts_per_step < 1 {
            return Err(Error::validation("rollouts_per_step must be >= 1"));
        }
        if self.mode == LabelMode::ErPrm {
            match self.eta {
                Some(eta) if eta > 0.0 => {}
                _ => return Err(Error::validation("er_prm requires eta > 0")),
            }
        }
        Ok(())
    }
}

/// Outcome of one shared batch of rollouts from a prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McOutcome {
    pub successes: usize,
    pub rollouts: usize,
}

impl McOutcome {
    /// Soft label `M/N`.
    pub fn soft(&self) -> f64 {
        self.successes as f64 / self.rollouts as f64
    }

    /// Hard label: 1 iff any rollout succeeded.
    pub fn hard(&self) -> u8 {
        u8::from(self.successes > 0)
    }
}

/// Run `n` rollouts from `prefix` and count correct final answers.
pub fn mc_rollouts(
    task: &Task,
    prefix: &Trajectory,
    n: usize,
    policy: &dyn GeneratorPolicy,
    rng: &mut dyn RngCore,
) -> Result<McOutcome> {
    if n < 1 {
        return Err(Error::validation("rollout count must be >= 1"));
    }
    let mut successes = 0usize;
    for _ in 0..n {
        let traj = rollout(task, prefix, policy, rng)?;
        if crate::env::check_answer(task, traj.final_answer) {
            successes += 1;
        }
    }
    Ok(McOutcome {
        successes,
        rollouts: n,
    })
}

/// Monte-Carlo soft value label `M/N`.
pub fn mc_value_soft(
    task: &Task,
    prefix: &Trajectory,
    n: usize,
    policy: &dyn GeneratorPolicy,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    Ok(mc_rollouts(task, prefix, n, policy, rng)?.soft())
}

/// Monte-Carlo hard value label: 1 iff any of the `n` rollouts succeeds.
pub fn mc_value_hard(
    task: &Task,
    prefix: &Trajectory,
    n: usize,
    policy: &dyn GeneratorPolicy,
    rng: &mut dyn RngCore,
) -> Result<u8> {
    Ok(mc_rollouts(task, prefix, n, policy, rng)?.hard())
}

/// Replicate the final answer's correctness onto every step.
pub fn outcome_value(traj: &Trajectory, answer_correct: bool) -> Result<Vec<f64>> {
    if !traj.terminal {
        return Err(Error::contract(
            "outcome labels require a terminal trajectory",
        ));
    }
    Ok(vec![f64::from(answer_correct); traj.steps.len()])
}

/// Entropy-regularized label `(1/eta) * ln((1-p) + p*e^eta)` for a binary
/// outcome with success probability `p`.
///
/// Evaluated as `1 + ln(1 + (1-p)*expm1(-eta)) / eta`, which is exact for the
/// binary expectation and stays accurate for eta near 0.
pub fn er_prm_label(p: f64, eta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::validation(format!("probability {p} outside [0, 1]")));
    }
    if !(eta > 0.0) {
        return Err(Error::validation(format!("eta {eta} must be > 0")));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    if p == 1.0 {
        return Ok(1.0);
    }
    Ok(1.0 + ((1.0 - p) * (-eta).exp_m1()).ln_1p() / eta)
}

/// Same label computed by log-sum-exp over raw rollout outcomes; kept as an
/// independent route for cross-checking the closed form.
pub fn er_prm_label_from_outcomes(outcomes: &[bool], eta: f64) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::Empty("er_prm outcomes".into()));
    }
    if !(eta > 0.0) {
        return Err(Error::validation(format!("eta {eta} must be > 0")));
    }
    // log mean exp(eta * y) with max-shift; y in {0, 1}.
    let max = if outcomes.iter().any(|&y| y) { eta } else { 0.0 };
    let sum: f64 = outcomes
        .iter()
        .map(|&y| (if y { eta } else { 0.0 } - max).exp())
        .sum();
    Ok((max + (sum / outcomes.len() as f64).ln()) / eta)
}

/// Annotate a corpus of synthetic-task records: oracle reward labels at every
/// step, value labels per `config.mode`. `tasks` maps task ids to the tasks
/// the records were sampled from.
pub fn annotate_corpus(
    records: &[TrajectoryRecord],
    tasks: &HashMap<String, Task>,
    config: &AnnotationConfig,
) -> Result<Vec<LabeledRecord>> {
    config.validate()?;
    records
        .par_iter()
        .enumerate()
        .map(|(i, record)| annotate_record(i, record, tasks, config))
        .collect()
}

fn annotate_record(
    record_idx: usize,
    record: &TrajectoryRecord,
    tasks: &HashMap<String, Task>,
    config: &AnnotationConfig,
) -> Result<LabeledRecord> {
    let task = tasks.get(&record.task_id).ok_or_else(|| {
        Error::missing(
            "oracle",
            format!("no task {} for record {record_idx}", record.task_id),
        )
    })?;
    let traj = record.trajectory();
    let m = traj.steps.len();

    let mut reward_labels = Vec::with_capacity(m);
    for t in 1..=m {
        reward_labels.push(f64::from(oracle_reward_label(task, &traj, t)?));
    }

    let value_labels = match config.mode {
        LabelMode::Outcome => outcome_value(&traj, record.answer_correct)?,
        LabelMode::McSoft | LabelMode::McHard | LabelMode::ErPrm => {
            let mut labels = Vec::with_capacity(m);
            for t in 1..=m {
                let prefix = traj.prefix(t, task.num_steps());
                let mut rng = rng::substream(
                    config.master_seed,
                    rng::lane(&[record_idx as u64, t as u64]),
                );
                let mc = mc_rollouts(
                    task,
                    &prefix,
                    config.rollouts_per_step,
                    &SyntheticPolicy,
                    &mut rng,
                )?;
                labels.push(match config.mode {
                    LabelMode::McSoft => mc.soft(),
                    LabelMode::McHard => f64::from(mc.hard()),
                    LabelMode::ErPrm => {
                        er_prm_label(mc.soft(), config.eta.expect("validated"))?
                    }
                    LabelMode::Outcome => unreachable!(),
                });
            }
            labels
        }
    };

    let labeled = LabeledRecord {
        record: record.clone(),
        reward_labels,
        value_labels,
    };
    labeled.validate()?;
    Ok(labeled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_task, TaskSpec};
    use crate::rng::substream;

    #[test]
    fn soft_label_is_one_without_errors() {
        let task = make_task(&TaskSpec::uniform(0, 3, 7, 0.0)).unwrap();
        let mut rng = substream(0, 0);
        let v = mc_value_soft(&task, &Trajectory::empty(&task.id), 8, &SyntheticPolicy, &mut rng)
            .unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn soft_label_is_success_fraction() {
        let outcome = McOutcome { successes: 4, rollouts: 8 };
        assert_eq!(outcome.soft(), 0.5);
        assert_eq!(McOutcome { successes: 1, rollouts: 8 }.hard(), 1);
        assert_eq!(McOutcome { successes: 0, rollouts: 8 }.hard(), 0);
    }

    #[test]
    fn hard_iff_soft_positive_on_shared_rollouts() {
        let task = make_task(&TaskSpec::uniform(3, 2, 5, 0.5)).unwrap();
        for lane in 0..50 {
            let mut rng = substream(7, lane);
            let mc = mc_rollouts(&task, &Trajectory::empty(&task.id), 8, &SyntheticPolicy, &mut rng)
                .unwrap();
            assert_eq!(mc.hard() == 1, mc.soft() > 0.0);
        }
    }

    #[test]
    fn soft_labels_track_exact_value() {
        // Mean over 200 seeds of the N=8 soft label vs the DP oracle.
        let task = make_task(&TaskSpec::uniform(11, 2, 5, 0.5)).unwrap();
        let empty = Trajectory::empty(&task.id);
        let exact = crate::env::oracle_value(&task, &empty).unwrap();
        let mean = (0..200)
            .map(|s| {
                let mut rng = substream(1000 + s, 0);
                mc_value_soft(&task, &empty, 8, &SyntheticPolicy, &mut rng).unwrap()
            })
            .sum::<f64>()
            / 200.0;
        assert!((mean - exact).abs() < 0.05, "mean {mean} vs exact {exact}");
    }

    #[test]
    fn soft_labels_are_unbiased() {
        // 1250 seeds x N=8 = 10,000 rollouts; the grand mean of the soft
        // label matches the exact value within 5 standard errors.
        let task = make_task(&TaskSpec::uniform(13, 3, 7, 0.4)).unwrap();
        let prefix = Trajectory::from_values(&task.id, &task.truth_chain[1..=1], 3).unwrap();
        let exact = crate::env::oracle_value(&task, &prefix).unwrap();
        let seeds = 1250u64;
        let mean = (0..seeds)
            .map(|s| {
                let mut rng = substream(5000 + s, 0);
                mc_value_soft(&task, &prefix, 8, &SyntheticPolicy, &mut rng).unwrap()
            })
            .sum::<f64>()
            / seeds as f64;
        let stderr = (exact * (1.0 - exact) / (8.0 * seeds as f64)).sqrt();
        assert!(
            (mean - exact).abs() < 5.0 * stderr,
            "mean {mean} vs exact {exact} (stderr {stderr})"
        );
    }

    #[test]
    fn outcome_labels_replicate_correctness() {
        let correct = Trajectory::from_values("t", &[1, 2, 3, 4, 0], 5).unwrap();
        assert_eq!(outcome_value(&correct, true).unwrap(), vec![1.0; 5]);
        assert_eq!(outcome_value(&correct, false).unwrap(), vec![0.0; 5]);
        let partial = Trajectory::from_values("t", &[1], 5).unwrap();
        assert!(matches!(
            outcome_value(&partial, true),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn er_prm_degenerate_and_closed_form() {
        assert_eq!(er_prm_label(0.0, 1.0).unwrap(), 0.0);
        assert_eq!(er_prm_label(1.0, 1.0).unwrap(), 1.0);
        // Direct evaluation of ln(0.5 + 0.5 e) at eta = 1.
        let direct = (0.5 + 0.5 * std::f64::consts::E).ln();
        assert!((er_prm_label(0.5, 1.0).unwrap() - direct).abs() < 1e-12);
        assert!(er_prm_label(0.5, 0.0).is_err());
        assert!(er_prm_label(0.5, -1.0).is_err());
        assert!(er_prm_label(1.5, 1.0).is_err());
    }

    #[test]
    fn er_prm_small_eta_limit() {
        for i in 1..10 {
            let p = i as f64 / 10.0;
            let label = er_prm_label(p, 1e-6).unwrap();
            assert!((label - p).abs() < 1e-5, "p={p} label={label}");
        }
    }

    #[test]
    fn er_prm_monotone_in_eta_and_bounded() {
        for &p in &[0.1, 0.5, 0.9] {
            let mut prev = 0.0;
            for k in 0..20 {
                let eta = 0.05 * f64::from(k + 1) * 10.0; // 0.5 .. 10
                let label = er_prm_label(p, eta).unwrap();
                assert!(label >= prev - 1e-12, "p={p} eta={eta}");
                assert!(label >= p - 1e-12 && label < 1.0);
                prev = label;
            }
        }
    }

    #[test]
    fn er_prm_closed_form_matches_raw_lse() {
        let outcomes = [true, false, false, true, false, true, true, false];
        let p = outcomes.iter().filter(|&&y| y).count() as f64 / outcomes.len() as f64;
        for &eta in &[1e-4, 0.3, 1.0, 5.0] {
            let closed = er_prm_label(p, eta).unwrap();
            let raw = er_prm_label_from_outcomes(&outcomes, eta).unwrap();
            assert!((closed - raw).abs() < 1e-12, "eta={eta}");
        }
    }

    #[test]
    fn annotate_corpus_modes() {
        let task = make_task(&TaskSpec::uniform(5, 3, 7, 0.0)).unwrap();
        let mut rng = substream(1, 0);
        let traj = rollout(&task, &Trajectory::empty(&task.id), &SyntheticPolicy, &mut rng).unwrap();
        let record = TrajectoryRecord::from_trajectory(
            &traj,
            serde_json::to_value(task.view()).unwrap(),
            crate::env::check_answer(&task, traj.final_answer),
        );
        let tasks: HashMap<String, Task> = [(task.id.clone(), task.clone())].into();

        // eps = 0 corpus: every reward label 1, every soft value label 1.
        let soft = annotate_corpus(
            &[record.clone()],
            &tasks,
            &AnnotationConfig::default(),
        )
        .unwrap();
        assert_eq!(soft[0].reward_labels, vec![1.0; 3]);
        assert_eq!(soft[0].value_labels, vec![1.0; 3]);

        // Outcome mode: labels constant within the trajectory.
        let outcome = annotate_corpus(
            &[record.clone()],
            &tasks,
            &AnnotationConfig {
                mode: LabelMode::Outcome,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(outcome[0]
            .value_labels
            .windows(2)
            .all(|w| w[0] == w[1]));

        // Determinism under the master seed.
        let cfg = AnnotationConfig {
            master_seed: 42,
            ..Default::default()
        };
        let a = annotate_corpus(&[record.clone()], &tasks, &cfg).unwrap();
        let b = annotate_corpus(&[record.clone()], &tasks, &cfg).unwrap();
        assert_eq!(a, b);

        // Missing oracle is an error.
        let missing = annotate_corpus(&[record], &HashMap::new(), &cfg);
        assert!(matches!(missing, Err(Error::Missing { .. })));
    }

    #[test]
    fn annotation_is_independent_of_worker_count() {
        let task = make_task(&TaskSpec::uniform(21, 4, 11, 0.3)).unwrap();
        let tasks: HashMap<String, Task> = [(task.id.clone(), task.clone())].into();
        let records: Vec<_> = (0..6)
            .map(|i| {
                let mut rng = substream(33, i);
                let traj =
                    rollout(&task, &Trajectory::empty(&task.id), &SyntheticPolicy, &mut rng)
                        .unwrap();
                crate::corpus::TrajectoryRecord::from_trajectory(
                    &traj,
                    serde_json::Value::Null,
                    crate::env::check_answer(&task, traj.final_answer),
                )
            })
            .collect();
        let cfg = AnnotationConfig {
            master_seed: 5,
            ..Default::default()
        };
        let run_with = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| annotate_corpus(&records, &tasks, &cfg).unwrap())
        };
        assert_eq!(run_with(1), run_with(4));
    }
}
