//! Synthetic step-wise reasoning environment.
//!
//! A task hides a chain of `m` modular-arithmetic operations over a prime
//! field. A solution asserts one intermediate value per step; a generator
//! policy produces the correct continuation with per-step probability
//! `1 - eps_t` and otherwise a uniformly random wrong value. Because wrong
//! values are uniform, a later error can cancel an earlier one and land back
//! on the true answer, which is exactly the case that separates step
//! correctness from future success probability.
//!
//! The environment doubles as the ground-truth annotator: step correctness is
//! checked against the hidden operations ([`oracle_reward_label`]) and the
//! probability of eventually reaching the correct answer is computed exactly
//! by dynamic programming ([`oracle_value`]).

mod policy;
mod remote;

pub use policy::{rollout, synthetic_policy_step, GeneratorPolicy, SyntheticPolicy};
pub use remote::{RemotePolicy, RemotePolicyConfig};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Parameters defining a synthetic task. Tasks are deterministic in the spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub seed: u64,
    /// Number of reasoning steps `m`.
    pub num_steps: usize,
    /// Prime modulus `P` of the value field.
    pub modulus: u64,
    /// Per-step error probability of the synthetic generator, length `m`.
    pub error_profile: Vec<f64>,
}

impl TaskSpec {
    /// Uniform error profile, mostly used in tests.
    pub fn uniform(seed: u64, num_steps: usize, modulus: u64, eps: f64) -> Self {
        TaskSpec {
            seed,
            num_steps,
            modulus,
            error_profile: vec![eps; num_steps],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_steps < 1 {
            return Err(Error::validation("num_steps must be >= 1"));
        }
        if self.modulus < 5 || !is_prime(self.modulus) {
            return Err(Error::validation(format!(
                "modulus {} must be a prime >= 5",
                self.modulus
            )));
        }
        if self.error_profile.len() != self.num_steps {
            return Err(Error::validation(format!(
                "error_profile length {} != num_steps {}",
                self.error_profile.len(),
                self.num_steps
            )));
        }
        for (t, eps) in self.error_profile.iter().enumerate() {
            if !(0.0..=1.0).contains(eps) || !eps.is_finite() {
                return Err(Error::validation(format!(
                    "error_profile[{t}] = {eps} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Kind of a hidden per-step operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Add,
    Mul,
}

/// One hidden operation: `value -> value (op) operand mod P`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HiddenOp {
    pub kind: OpKind,
    /// Operand in `[1, P-1]`; both op kinds are then bijections on the field.
    pub operand: u64,
}

impl HiddenOp {
    pub fn apply(&self, value: u64, modulus: u64) -> u64 {
        match self.kind {
            OpKind::Add => (value + self.operand) % modulus,
            OpKind::Mul => ((value as u128 * self.operand as u128) % modulus as u128) as u64,
        }
    }
}

/// Number of operations published per step: the true one plus decoys, in a
/// shuffled order that hides which is which.
pub const OP_MENU_SIZE: usize = 4;

/// A fully materialized task: hidden operations plus the true value chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub spec: TaskSpec,
    pub ops: Vec<HiddenOp>,
    pub initial_value: u64,
    /// True value after 0..=m steps; `truth_chain[0] = initial_value`.
    pub truth_chain: Vec<u64>,
    pub answer: u64,
    /// Public per-step candidate operations. Menu `t` contains `ops[t]` at a
    /// hidden position among decoys; a verifier can check whether a step is
    /// consistent with *some* published operation without learning which one
    /// is real (the true chain stays ambiguous among `OP_MENU_SIZE^m`
    /// possibilities).
    pub op_menus: Vec<Vec<HiddenOp>>,
}

impl Task {
    /// The part of the task a generator or verifier is allowed to see.
    pub fn view(&self) -> TaskView {
        TaskView {
            task_id: self.id.clone(),
            num_steps: self.spec.num_steps,
            modulus: self.spec.modulus,
            initial_value: self.initial_value,
            op_menus: self.op_menus.clone(),
        }
    }

    pub fn num_steps(&self) -> usize {
        self.spec.num_steps
    }

    pub fn modulus(&self) -> u64 {
        self.spec.modulus
    }
}

/// Task-visible context: everything except the hidden operation identities
/// and the answer. This is what features and remote generators may depend on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskView {
    pub task_id: String,
    pub num_steps: usize,
    pub modulus: u64,
    pub initial_value: u64,
    pub op_menus: Vec<Vec<HiddenOp>>,
}

impl TaskView {
    /// Whether `value` continues `prev` under some published operation for
    /// step `t` (1-based). Correct steps always pass; uniform wrong values
    /// pass with probability `(OP_MENU_SIZE - 1) / (P - 1)` at most.
    pub fn locally_consistent(&self, t: usize, prev: u64, value: u64) -> bool {
        self.op_menus[t - 1]
            .iter()
            .any(|op| op.apply(prev, self.modulus) == value)
    }
}

/// One reasoning step: asserts the value after step `index` (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub index: usize,
    pub asserted_value: u64,
}

/// A (possibly partial) solution: a prefix of steps for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub steps: Vec<Step>,
    pub final_answer: Option<u64>,
    pub terminal: bool,
}

impl Trajectory {
    /// Empty (zero-step) prefix for a task.
    pub fn empty(task_id: impl Into<String>) -> Self {
        Trajectory {
            task_id: task_id.into(),
            steps: Vec::new(),
            final_answer: None,
            terminal: false,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Append a step, enforcing contiguous 1-based indices. Marks the
    /// trajectory terminal once it reaches `num_steps` steps.
    pub fn push_step(&mut self, step: Step, num_steps: usize) -> Result<()> {
        if self.terminal {
            return Err(Error::contract(format!(
                "trajectory for {} is already terminal",
                self.task_id
            )));
        }
        let expected = self.steps.len() + 1;
        if step.index != expected {
            return Err(Error::contract(format!(
                "step index {} does not extend prefix of length {}",
                step.index,
                self.steps.len()
            )));
        }
        self.steps.push(step);
        if self.steps.len() == num_steps {
            self.terminal = true;
            self.final_answer = Some(step.asserted_value);
        }
        Ok(())
    }

    /// Build a prefix from raw asserted values (test and fixture helper).
    pub fn from_values(task_id: impl Into<String>, values: &[u64], num_steps: usize) -> Result<Self> {
        let mut traj = Trajectory::empty(task_id);
        for (i, &v) in values.iter().enumerate() {
            traj.push_step(
                Step {
                    index: i + 1,
                    asserted_value: v,
                },
                num_steps,
            )?;
        }
        Ok(traj)
    }

    /// Truncate to the first `t` steps (a shorter, non-terminal prefix unless
    /// `t` already covers the whole solution).
    pub fn prefix(&self, t: usize, num_steps: usize) -> Self {
        let steps: Vec<Step> = self.steps.iter().take(t).copied().collect();
        let terminal = steps.len() == num_steps;
        let final_answer = if terminal {
            steps.last().map(|s| s.asserted_value)
        } else {
            None
        };
        Trajectory {
            task_id: self.task_id.clone(),
            steps,
            final_answer,
            terminal,
        }
    }

    /// Value asserted by the last step, or the task's initial value.
    pub fn last_value(&self, initial_value: u64) -> u64 {
        self.steps
            .last()
            .map(|s| s.asserted_value)
            .unwrap_or(initial_value)
    }
}

/// Construct the task determined by a spec. Hidden operations, the initial
/// value and the decoy menus are drawn from the spec seed; the truth chain
/// follows.
pub fn make_task(spec: &TaskSpec) -> Result<Task> {
    spec.validate()?;
    let mut rng: ChaCha8Rng = rng::master_rng(spec.seed);
    let p = spec.modulus;
    let draw_op = |rng: &mut ChaCha8Rng| {
        let kind = if rng.gen_range(0..2u8) == 0 {
            OpKind::Add
        } else {
            OpKind::Mul
        };
        HiddenOp {
            kind,
            operand: rng.gen_range(1..p),
        }
    };
    let ops: Vec<HiddenOp> = (0..spec.num_steps).map(|_| draw_op(&mut rng)).collect();
    let initial_value = rng.gen_range(0..p);

    let mut truth_chain = Vec::with_capacity(spec.num_steps + 1);
    truth_chain.push(initial_value);
    for op in &ops {
        let prev = *truth_chain.last().expect("non-empty chain");
        truth_chain.push(op.apply(prev, p));
    }
    let answer = *truth_chain.last().expect("non-empty chain");

    let op_menus = ops
        .iter()
        .map(|&true_op| {
            let mut menu = vec![true_op];
            while menu.len() < OP_MENU_SIZE {
                let decoy = draw_op(&mut rng);
                if !menu.contains(&decoy) {
                    menu.push(decoy);
                }
            }
            // Fisher-Yates so the true operation's slot is unrecoverable.
            for i in (1..menu.len()).rev() {
                menu.swap(i, rng.gen_range(0..=i));
            }
            menu
        })
        .collect();

    Ok(Task {
        id: task_id(spec),
        spec: spec.clone(),
        ops,
        initial_value,
        truth_chain,
        answer,
        op_menus,
    })
}

/// Stable identifier derived from every spec field.
fn task_id(spec: &TaskSpec) -> String {
    let mut parts = vec![spec.seed, spec.num_steps as u64, spec.modulus];
    parts.extend(spec.error_profile.iter().map(|e| e.to_bits()));
    format!("task-{:016x}", rng::lane(&parts))
}

/// Correctness of step `t` (1-based) relative to the *previous asserted*
/// value: 1 iff `steps[t]` equals the hidden operation applied to what the
/// solution claimed before it. Correctness is local, so a wrong step followed
/// by a compensating wrong step can still end on the true answer.
pub fn oracle_reward_label(task: &Task, traj: &Trajectory, t: usize) -> Result<u8> {
    if t < 1 || t > traj.steps.len() {
        return Err(Error::index(format!(
            "step {} of a {}-step trajectory",
            t,
            traj.steps.len()
        )));
    }
    let prev = if t == 1 {
        task.initial_value
    } else {
        traj.steps[t - 2].asserted_value
    };
    let correct = task.ops[t - 1].apply(prev, task.modulus());
    Ok(u8::from(traj.steps[t - 1].asserted_value == correct))
}

/// Exact probability that a synthetic rollout from `prefix` ends on the true
/// answer, under the task's own error profile.
pub fn oracle_value(task: &Task, prefix: &Trajectory) -> Result<f64> {
    oracle_value_with_profile(task, prefix, &task.spec.error_profile)
}

/// Exact success probability under an explicit error profile, by backward
/// dynamic programming over (step, current value): O(m * P).
pub fn oracle_value_with_profile(
    task: &Task,
    prefix: &Trajectory,
    error_profile: &[f64],
) -> Result<f64> {
    let m = task.num_steps();
    let p = task.modulus() as usize;
    if error_profile.len() != m {
        return Err(Error::validation(format!(
            "error profile length {} != num_steps {}",
            error_profile.len(),
            m
        )));
    }
    let t0 = prefix.steps.len();
    if t0 > m {
        return Err(Error::validation(format!(
            "prefix length {t0} exceeds num_steps {m}"
        )));
    }
    let current = prefix.last_value(task.initial_value);

    if t0 == m {
        return Ok(if current == task.answer { 1.0 } else { 0.0 });
    }

    // value[x] = P(final answer correct | value x after t steps)
    let mut value = vec![0.0f64; p];
    value[task.answer as usize] = 1.0;
    for t in (t0..m).rev() {
        let eps = error_profile[t];
        let total: f64 = value.iter().sum();
        let op = task.ops[t];
        let mut next = vec![0.0f64; p];
        for (x, slot) in next.iter_mut().enumerate() {
            let cont = value[op.apply(x as u64, task.modulus()) as usize];
            *slot = (1.0 - eps) * cont + eps * (total - cont) / (p as f64 - 1.0);
        }
        value = next;
    }
    Ok(value[current as usize])
}

/// Whether a final answer matches the task's true answer. Absent answers
/// (non-terminal solutions) count as incorrect.
pub fn check_answer(task: &Task, answer: Option<u64>) -> bool {
    answer == Some(task.answer)
}

fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    if n % 2 == 0 {
        return n == 2;
    }
    let mut d = 3;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 2;
    }
    true
}

/// Parameter ranges for sampling a batch of desk-scale tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskBatchParams {
    pub modulus: u64,
    pub min_steps: usize,
    pub max_steps: usize,
    pub min_eps: f64,
    pub max_eps: f64,
}

impl Default for TaskBatchParams {
    fn default() -> Self {
        TaskBatchParams {
            modulus: 97,
            min_steps: 4,
            max_steps: 12,
            min_eps: 0.05,
            max_eps: 0.35,
        }
    }
}

impl TaskBatchParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_steps < 1 || self.min_steps > self.max_steps {
            return Err(Error::validation("step range must satisfy 1 <= min <= max"));
        }
        if !(0.0..=1.0).contains(&self.min_eps)
            || !(0.0..=1.0).contains(&self.max_eps)
            || self.min_eps > self.max_eps
        {
            return Err(Error::validation("eps range must satisfy 0 <= min <= max <= 1"));
        }
        if self.modulus < 5 || !is_prime(self.modulus) {
            return Err(Error::validation("modulus must be a prime >= 5"));
        }
        Ok(())
    }
}

/// Sample `count` tasks. Task `i` is drawn on stream `lane([seed, i])`, so the
/// batch is deterministic and order-independent of worker scheduling.
pub fn sample_tasks(count: usize, params: &TaskBatchParams, master_seed: u64) -> Result<Vec<Task>> {
    params.validate()?;
    (0..count)
        .map(|i| {
            let mut rng = rng::substream(master_seed, rng::lane(&[master_seed, i as u64]));
            let m = rng.gen_range(params.min_steps..=params.max_steps);
            let error_profile: Vec<f64> = (0..m)
                .map(|_| rng.gen_range(params.min_eps..=params.max_eps))
                .collect();
            let spec = TaskSpec {
                seed: rng.gen(),
                num_steps: m,
                modulus: params.modulus,
                error_profile,
            };
            make_task(&spec)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn make_task_is_deterministic() {
        let spec = TaskSpec::uniform(0, 4, 7, 0.1);
        let a = make_task(&spec).unwrap();
        let b = make_task(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn make_task_recurrence_holds() {
        let spec = TaskSpec::uniform(0, 1, 5, 0.0);
        let task = make_task(&spec).unwrap();
        assert_eq!(task.truth_chain.len(), 2);
        assert_eq!(task.truth_chain[0], task.initial_value);
        assert_eq!(
            task.truth_chain[1],
            task.ops[0].apply(task.initial_value, 5)
        );
        assert_eq!(task.answer, task.truth_chain[1]);
    }

    #[test]
    fn non_prime_modulus_rejected() {
        let spec = TaskSpec::uniform(0, 1, 6, 0.0);
        assert!(matches!(make_task(&spec), Err(Error::Validation(_))));
    }

    #[test]
    fn eps_out_of_range_rejected() {
        let mut spec = TaskSpec::uniform(0, 2, 5, 0.0);
        spec.error_profile[1] = 1.5;
        assert!(matches!(make_task(&spec), Err(Error::Validation(_))));
    }

    #[test]
    fn trajectory_terminal_bookkeeping() {
        let mut traj = Trajectory::empty("t");
        traj.push_step(Step { index: 1, asserted_value: 3 }, 2).unwrap();
        assert!(!traj.terminal);
        assert_eq!(traj.final_answer, None);
        traj.push_step(Step { index: 2, asserted_value: 4 }, 2).unwrap();
        assert!(traj.terminal);
        assert_eq!(traj.final_answer, Some(4));
        assert!(traj.push_step(Step { index: 3, asserted_value: 0 }, 2).is_err());
    }

    #[test]
    fn trajectory_rejects_gapped_index() {
        let mut traj = Trajectory::empty("t");
        let res = traj.push_step(Step { index: 2, asserted_value: 0 }, 3);
        assert!(matches!(res, Err(Error::Contract(_))));
    }

    #[test]
    fn menus_hide_the_true_operation_among_decoys() {
        let task = make_task(&TaskSpec::uniform(8, 5, 97, 0.2)).unwrap();
        assert_eq!(task.op_menus.len(), 5);
        for (t, menu) in task.op_menus.iter().enumerate() {
            assert_eq!(menu.len(), OP_MENU_SIZE);
            assert!(menu.contains(&task.ops[t]));
            for i in 0..menu.len() {
                for j in i + 1..menu.len() {
                    assert_ne!(menu[i], menu[j]);
                }
            }
        }
        // The view exposes the menus but not the operations themselves.
        let view = task.view();
        assert_eq!(view.op_menus, task.op_menus);
        for t in 1..=5 {
            let prev = task.truth_chain[t - 1];
            assert!(view.locally_consistent(t, prev, task.truth_chain[t]));
        }
    }

    #[test]
    fn reward_label_is_local() {
        // m=2 cancellation fixture over P=5 with hand-picked ops:
        // add 2 then add 3; initial 1 -> truth chain [1, 3, 1].
        let spec = TaskSpec::uniform(0, 2, 5, 0.5);
        let mut task = make_task(&spec).unwrap();
        task.ops = vec![
            HiddenOp { kind: OpKind::Add, operand: 2 },
            HiddenOp { kind: OpKind::Add, operand: 3 },
        ];
        task.initial_value = 1;
        task.truth_chain = vec![1, 3, 1];
        task.answer = 1;

        // Wrong step 1 (asserts 4 instead of 3), step 2 then asserts the true
        // answer 1. Hand enumeration: step 1 label 0; step 2 claims 1 but the
        // locally correct continuation from 4 is 4+3=2, so label 0 as well —
        // yet the final answer is correct.
        let traj = Trajectory::from_values("t", &[4, 1], 2).unwrap();
        assert_eq!(oracle_reward_label(&task, &traj, 1).unwrap(), 0);
        assert_eq!(oracle_reward_label(&task, &traj, 2).unwrap(), 0);
        assert!(check_answer(&task, traj.final_answer));

        // And the locally-correct variant of step 2 from the wrong prefix.
        let traj2 = Trajectory::from_values("t", &[4, 2], 2).unwrap();
        assert_eq!(oracle_reward_label(&task, &traj2, 2).unwrap(), 1);
        assert!(!check_answer(&task, traj2.final_answer));

        assert!(oracle_reward_label(&task, &traj, 3).is_err());
    }

    #[test]
    fn oracle_value_terminal_cases() {
        let task = make_task(&TaskSpec::uniform(3, 2, 5, 0.3)).unwrap();
        let good = Trajectory::from_values(&task.id, &[task.truth_chain[1], task.answer], 2).unwrap();
        assert_eq!(oracle_value(&task, &good).unwrap(), 1.0);
        let bad_final = (task.answer + 1) % 5;
        let bad = Trajectory::from_values(&task.id, &[task.truth_chain[1], bad_final], 2).unwrap();
        assert_eq!(oracle_value(&task, &bad).unwrap(), 0.0);
    }

    #[test]
    fn oracle_value_is_one_on_error_free_chain() {
        let task = make_task(&TaskSpec::uniform(5, 4, 7, 0.0)).unwrap();
        for t in 0..=4 {
            let prefix =
                Trajectory::from_values(&task.id, &task.truth_chain[1..=t], 4).unwrap();
            assert_eq!(oracle_value(&task, &prefix).unwrap(), 1.0);
        }
    }

    #[test]
    fn oracle_value_matches_brute_force_enumeration() {
        // m=2, P=5, eps=0.5: enumerate all (step1, step2) outcomes with their
        // exact probabilities and compare.
        let task = make_task(&TaskSpec::uniform(11, 2, 5, 0.5)).unwrap();
        let p = 5u64;
        let mut brute = 0.0f64;
        for v1 in 0..p {
            let c1 = task.ops[0].apply(task.initial_value, p);
            let p1 = if v1 == c1 { 0.5 } else { 0.5 / 4.0 };
            for v2 in 0..p {
                let c2 = task.ops[1].apply(v1, p);
                let p2 = if v2 == c2 { 0.5 } else { 0.5 / 4.0 };
                if v2 == task.answer {
                    brute += p1 * p2;
                }
            }
        }
        let dp = oracle_value(&task, &Trajectory::empty(&task.id)).unwrap();
        assert!((dp - brute).abs() < 1e-12, "dp={dp} brute={brute}");
    }

    #[test]
    fn oracle_value_is_a_martingale() {
        // value(prefix) equals the transition-weighted average of the values
        // one step ahead, exactly.
        for seed in 0..20 {
            let task = make_task(&TaskSpec::uniform(seed, 4, 11, 0.3)).unwrap();
            let mut rng = crate::rng::substream(seed, 1);
            let full =
                rollout(&task, &Trajectory::empty(&task.id), &SyntheticPolicy, &mut rng).unwrap();
            for t in 0..4 {
                let prefix = full.prefix(t, 4);
                let value = oracle_value(&task, &prefix).unwrap();
                let eps = task.spec.error_profile[t];
                let prev = prefix.last_value(task.initial_value);
                let correct = task.ops[t].apply(prev, 11);
                let mut expected = 0.0;
                for next in 0..11u64 {
                    let prob = if next == correct {
                        1.0 - eps
                    } else {
                        eps / 10.0
                    };
                    let mut extended = prefix.clone();
                    extended
                        .push_step(Step { index: t + 1, asserted_value: next }, 4)
                        .unwrap();
                    expected += prob * oracle_value(&task, &extended).unwrap();
                }
                assert!(
                    (value - expected).abs() < 1e-12,
                    "seed {seed} t {t}: {value} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn check_answer_counts_absent_as_incorrect() {
        let task = make_task(&TaskSpec::uniform(2, 3, 5, 0.0)).unwrap();
        assert!(check_answer(&task, Some(task.answer)));
        assert!(!check_answer(&task, Some((task.answer + 1) % 5)));
        assert!(!check_answer(&task, None));
    }

    #[test]
    fn sample_tasks_is_deterministic_and_in_range() {
        let params = TaskBatchParams::default();
        let a = sample_tasks(5, &params, 42).unwrap();
        let b = sample_tasks(5, &params, 42).unwrap();
        assert_eq!(a, b);
        for task in &a {
            let m = task.num_steps();
            assert!((4..=12).contains(&m));
            assert!(task
                .spec
                .error_profile
                .iter()
                .all(|e| (0.05..=0.35).contains(e)));
        }
        // Prefix stability: the first 3 of a batch of 5 equal a batch of 3.
        let c = sample_tasks(3, &params, 42).unwrap();
        assert_eq!(&a[..3], &c[..]);
    }
}
