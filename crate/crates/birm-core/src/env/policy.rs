//! Generator policies: the sampling side of the environment.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};

use super::{Step, Task, Trajectory};

/// Produces one next step for a prefix. Implementations must return the step
/// with index `prefix.len() + 1` and never be called on terminal prefixes.
///
/// `Sync` is required so rollouts can be fanned out across workers; stateful
/// randomness lives in the caller-provided `rng`, not in the policy.
pub trait GeneratorPolicy: Sync {
    fn next_step(&self, task: &Task, prefix: &Trajectory, rng: &mut dyn RngCore) -> Result<Step>;
}

/// The built-in stochastic generator: correct continuation with probability
/// `1 - eps_t`, otherwise uniform over the `P - 1` wrong values.
#[derive(Debug, Clone, Copy, Default)]
pub struct SyntheticPolicy;

impl GeneratorPolicy for SyntheticPolicy {
    fn next_step(&self, task: &Task, prefix: &Trajectory, rng: &mut dyn RngCore) -> Result<Step> {
        synthetic_policy_step(task, prefix, rng)
    }
}

/// Draw the next step of the synthetic generator for `prefix`.
pub fn synthetic_policy_step(
    task: &Task,
    prefix: &Trajectory,
    rng: &mut dyn RngCore,
) -> Result<Step> {
    if prefix.terminal {
        return Err(Error::contract(format!(
            "cannot extend terminal trajectory for {}",
            prefix.task_id
        )));
    }
    let t = prefix.steps.len(); // 0-based index of the op to apply
    if t >= task.num_steps() {
        return Err(Error::contract(format!(
            "prefix has {} steps but task {} has only {}",
            t,
            task.id,
            task.num_steps()
        )));
    }
    let p = task.modulus();
    let prev = prefix.last_value(task.initial_value);
    let correct = task.ops[t].apply(prev, p);
    let eps = task.spec.error_profile[t];

    let asserted_value = if rng.gen::<f64>() < eps {
        // Uniform over the P-1 values != correct.
        (correct + rng.gen_range(1..p)) % p
    } else {
        correct
    };
    Ok(Step {
        index: t + 1,
        asserted_value,
    })
}

/// Complete a prefix by repeatedly applying `policy` until terminal. Terminal
/// prefixes are returned unchanged.
pub fn rollout(
    task: &Task,
    prefix: &Trajectory,
    policy: &dyn GeneratorPolicy,
    rng: &mut dyn RngCore,
) -> Result<Trajectory> {
    let mut traj = prefix.clone();
    while !traj.terminal {
        let step = policy.next_step(task, &traj, rng)?;
        traj.push_step(step, task.num_steps())?;
    }
    Ok(traj)
}
