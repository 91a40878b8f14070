//! Test-time strategies: Best-of-N selection, majority vote, and step-level
//! beam search.
//!
//! # RNG protocol
//!
//! Sampling is organized so that beam search at `b = K` is *exactly* the same
//! experiment as Best-of-N over `K` independent rollouts:
//!
//! * candidate slot `i` of the first round draws from stream
//!   `substream(seed, i)`, and [`sample_candidates`] rolls out candidate `i`
//!   from the very same stream;
//! * when a beam member is expanded, its first child inherits the parent's
//!   generator; every further child gets a fresh stream
//!   `substream(seed, counter)` from a counter that starts at `K` and grows in
//!   beam order.
//!
//! With `b = K` nothing is ever pruned and each slot expands exactly one
//! child, so slot `i` consumes `substream(seed, i)` end to end — trajectory
//! sets are equal by construction, not merely in distribution.
//!
//! # Tie handling
//!
//! All selections are stable: every candidate lineage is identified by the
//! stream id it draws from (which is also its creation order), equal scores
//! rank by smallest stream id, and argmax picks the earliest lineage among
//! equals. Under `b = K` the lineage ids are exactly the Best-of-N candidate
//! indices, so even tied selections agree between the two strategies.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{rollout, GeneratorPolicy, Task, Trajectory};
use crate::error::{Error, Result};
use crate::rng;
use crate::scoring::{CombinedScore, StepScorer};

/// Step-level beam search budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Total sampling size `K` per round.
    pub total_size: usize,
    /// Beam width `b`; `K` must be divisible by `b`.
    pub beam_size: usize,
    /// Maximum number of rounds `T` (each round adds one step).
    pub max_rounds: usize,
    pub seed: u64,
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_size < 1 || self.beam_size < 1 || self.max_rounds < 1 {
            return Err(Error::validation(
                "total_size, beam_size and max_rounds must be >= 1",
            ));
        }
        if self.total_size % self.beam_size != 0 {
            return Err(Error::validation(format!(
                "total_size {} must be divisible by beam_size {}",
                self.total_size, self.beam_size
            )));
        }
        Ok(())
    }
}

/// A scored (partial or complete) solution.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub trajectory: Trajectory,
    /// Combined score after each step; same length as the step sequence.
    pub score_history: Vec<CombinedScore>,
    /// Score of the last step; the ranking key.
    pub final_score: f64,
}

impl Candidate {
    /// Score a complete trajectory with `scorer`, recording per-step history.
    pub fn score(
        trajectory: Trajectory,
        scorer: &dyn StepScorer,
        view: &crate::env::TaskView,
    ) -> Result<Self> {
        let mut score_history = Vec::with_capacity(trajectory.steps.len());
        for t in 1..=trajectory.steps.len() {
            let prefix = trajectory.prefix(t, view.num_steps);
            score_history.push(scorer.score_prefix(view, &prefix)?);
        }
        let final_score = score_history
            .last()
            .map(|s| s.f)
            .ok_or_else(|| Error::Empty("candidate without steps".into()))?;
        Ok(Candidate {
            trajectory,
            score_history,
            final_score,
        })
    }
}

/// Highest final score wins; ties go to the smallest index.
pub fn best_of_n(candidates: &[Candidate]) -> Result<&Candidate> {
    if candidates.is_empty() {
        return Err(Error::Empty("best-of-n candidate set".into()));
    }
    if let Some(c) = candidates.iter().find(|c| !c.trajectory.terminal) {
        return Err(Error::contract(format!(
            "best-of-n requires terminal candidates (task {})",
            c.trajectory.task_id
        )));
    }
    let mut best = &candidates[0];
    for candidate in &candidates[1..] {
        if candidate.final_score > best.final_score {
            best = candidate;
        }
    }
    Ok(best)
}

/// Most frequent final answer. Ties break to the smallest answer value;
/// absent answers vote as an "incorrect" sentinel that loses ties against any
/// real answer.
pub fn majority_vote(candidates: &[Candidate]) -> Result<Option<u64>> {
    if candidates.is_empty() {
        return Err(Error::Empty("majority vote candidate set".into()));
    }
    if let Some(c) = candidates.iter().find(|c| !c.trajectory.terminal) {
        return Err(Error::contract(format!(
            "majority vote requires terminal candidates (task {})",
            c.trajectory.task_id
        )));
    }
    use std::collections::BTreeMap;
    // Key (0, answer) for real answers, (1, 0) for the absent sentinel:
    // BTreeMap order then realizes the tie rule via min key among max counts.
    let mut counts: BTreeMap<(u8, u64), usize> = BTreeMap::new();
    for candidate in candidates {
        let key = match candidate.trajectory.final_answer {
            Some(a) => (0, a),
            None => (1, 0),
        };
        *counts.entry(key).or_insert(0) += 1;
    }
    let max = counts.values().copied().max().expect("non-empty counts");
    let (kind, value) = *counts
        .iter()
        .find(|(_, &c)| c == max)
        .map(|(k, _)| k)
        .expect("non-empty counts");
    Ok(if kind == 0 { Some(value) } else { None })
}

/// Sample `k` complete solutions; candidate `i` rolls out on
/// `substream(seed, i)`. This is the Best-of-N side of the rng protocol.
pub fn sample_candidates(
    task: &Task,
    policy: &dyn GeneratorPolicy,
    k: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    (0..k)
        .map(|i| {
            let mut rng = rng::substream(seed, i as u64);
            rollout(task, &Trajectory::empty(&task.id), policy, &mut rng)
        })
        .collect()
}

struct BeamEntry {
    candidate: Candidate,
    rng: ChaCha8Rng,
    /// Stream id of the lineage; doubles as the tie-breaking creation order.
    stream: u64,
}

/// Step-level beam search: round one samples `K` single steps, keeps the top
/// `b`; each later round expands `K/b` continuations per live member,
/// rescores, and keeps the top `b`. Completed members stay in the beam with
/// frozen scores and are not expanded. Returns the best complete candidate,
/// or the best member if nothing completed within `max_rounds`.
pub fn beam_search(
    task: &Task,
    policy: &dyn GeneratorPolicy,
    scorer: &dyn StepScorer,
    config: &SearchConfig,
) -> Result<Candidate> {
    let beam = beam_search_all(task, policy, scorer, config)?;

    // Prefer complete solutions; fall back to the best partial one. A manual
    // scan keeps the earliest candidate among equal scores.
    let best_in = |entries: Vec<&Candidate>| -> Option<Candidate> {
        let mut best: Option<&Candidate> = None;
        for entry in entries {
            if best.map(|b| entry.final_score > b.final_score).unwrap_or(true) {
                best = Some(entry);
            }
        }
        best.cloned()
    };
    let complete: Vec<&Candidate> = beam.iter().filter(|c| c.trajectory.terminal).collect();
    if let Some(best) = best_in(complete) {
        return Ok(best);
    }
    best_in(beam.iter().collect())
        .ok_or_else(|| Error::Empty("beam collapsed to zero members".into()))
}

/// Run the beam to completion and return the final beam contents (at most
/// `b` candidates, in selection order).
pub fn beam_search_all(
    task: &Task,
    policy: &dyn GeneratorPolicy,
    scorer: &dyn StepScorer,
    config: &SearchConfig,
) -> Result<Vec<Candidate>> {
    config.validate()?;
    let view = task.view();
    let k = config.total_size;
    let b = config.beam_size;
    let mut next_stream = k as u64;

    // Round 1: K one-step candidates on their own streams.
    let mut beam: Vec<BeamEntry> = Vec::with_capacity(k);
    for slot in 0..k {
        let mut rng = rng::substream(config.seed, slot as u64);
        let mut trajectory = Trajectory::empty(&task.id);
        let step = policy.next_step(task, &trajectory, &mut rng)?;
        trajectory.push_step(step, task.num_steps())?;
        let score = scorer.score_prefix(&view, &trajectory)?;
        beam.push(BeamEntry {
            candidate: Candidate {
                trajectory,
                score_history: vec![score],
                final_score: score.f,
            },
            rng,
            stream: slot as u64,
        });
    }
    select_top(&mut beam, b);

    for _round in 1..config.max_rounds {
        if beam.iter().all(|e| e.candidate.trajectory.terminal) {
            break;
        }
        let expansions = k / b;
        let mut next: Vec<BeamEntry> = Vec::with_capacity(k);
        for entry in beam {
            if entry.candidate.trajectory.terminal {
                // Frozen: retained, competing by its final score.
                next.push(entry);
                continue;
            }
            let mut parent_rng = Some(entry.rng);
            for _child in 0..expansions {
                // The first child continues the parent's lineage (stream and
                // tie-break identity); the rest branch onto fresh streams.
                let (mut rng, stream) = match parent_rng.take() {
                    Some(rng) => (rng, entry.stream),
                    None => {
                        let rng = rng::substream(config.seed, next_stream);
                        next_stream += 1;
                        (rng, next_stream - 1)
                    }
                };
                let mut trajectory = entry.candidate.trajectory.clone();
                let step = policy.next_step(task, &trajectory, &mut rng)?;
                trajectory.push_step(step, task.num_steps())?;
                let score = scorer.score_prefix(&view, &trajectory)?;
                let mut score_history = entry.candidate.score_history.clone();
                score_history.push(score);
                next.push(BeamEntry {
                    candidate: Candidate {
                        trajectory,
                        score_history,
                        final_score: score.f,
                    },
                    rng,
                    stream,
                });
            }
        }
        beam = next;
        select_top(&mut beam, b);
    }

    Ok(beam.into_iter().map(|e| e.candidate).collect())
}

/// Top-`b` by final score; equal scores rank by earliest lineage.
fn select_top(beam: &mut Vec<BeamEntry>, b: usize) {
    beam.sort_by(|x, y| {
        y.candidate
            .final_score
            .total_cmp(&x.candidate.final_score)
            .then(x.stream.cmp(&y.stream))
    });
    beam.truncate(b);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{check_answer, make_task, SyntheticPolicy, TaskSpec, TaskView};
    use crate::scoring::{Aggregation, OracleScorer, ScoreMode, ScoringConfig};

    fn dummy_candidate(task_id: &str, values: &[u64], m: usize, score: f64) -> Candidate {
        let trajectory = Trajectory::from_values(task_id, values, m).unwrap();
        let n = values.len();
        Candidate {
            trajectory,
            score_history: vec![
                CombinedScore {
                    g: score,
                    h: 0.0,
                    f: score
                };
                n
            ],
            final_score: score,
        }
    }

    #[test]
    fn best_of_n_argmax_and_ties() {
        let cands = vec![
            dummy_candidate("t", &[1, 2], 2, 0.1),
            dummy_candidate("t", &[3, 4], 2, 0.9),
            dummy_candidate("t", &[0, 1], 2, 0.5),
        ];
        assert_eq!(best_of_n(&cands).unwrap().trajectory.final_answer, Some(4));

        let equal = vec![
            dummy_candidate("t", &[1, 2], 2, 0.4),
            dummy_candidate("t", &[3, 4], 2, 0.4),
        ];
        assert_eq!(best_of_n(&equal).unwrap().trajectory.final_answer, Some(2));

        let single = vec![dummy_candidate("t", &[7], 1, 0.0)];
        assert_eq!(best_of_n(&single).unwrap().trajectory.final_answer, Some(7));

        assert!(best_of_n(&[]).is_err());
        let partial = vec![dummy_candidate("t", &[1], 2, 0.4)];
        assert!(best_of_n(&partial).is_err());
    }

    #[test]
    fn majority_vote_counts_and_ties() {
        let vote = |answers: &[u64]| {
            let cands: Vec<Candidate> = answers
                .iter()
                .map(|&a| dummy_candidate("t", &[a], 1, 0.0))
                .collect();
            majority_vote(&cands).unwrap()
        };
        assert_eq!(vote(&[2, 2, 3]), Some(2));
        assert_eq!(vote(&[1, 2]), Some(1));

        // All-absent answers: the sentinel wins and selection is defined.
        let absent = vec![
            Candidate {
                trajectory: Trajectory {
                    task_id: "t".into(),
                    steps: vec![crate::env::Step {
                        index: 1,
                        asserted_value: 0,
                    }],
                    final_answer: None,
                    terminal: true,
                },
                score_history: vec![CombinedScore {
                    g: 0.0,
                    h: 0.0,
                    f: 0.0,
                }],
                final_score: 0.0,
            };
            2
        ];
        assert_eq!(majority_vote(&absent).unwrap(), None);
        assert!(majority_vote(&[]).is_err());
    }

    #[test]
    fn config_divisibility_enforced() {
        let bad = SearchConfig {
            total_size: 7,
            beam_size: 2,
            max_rounds: 4,
            seed: 0,
        };
        assert!(bad.validate().is_err());
        let good = SearchConfig {
            total_size: 8,
            beam_size: 2,
            max_rounds: 4,
            seed: 0,
        };
        assert!(good.validate().is_ok());
    }

    #[test]
    fn beam_on_error_free_env_returns_correct_answer() {
        let task = make_task(&TaskSpec::uniform(3, 4, 7, 0.0)).unwrap();
        let scorer = OracleScorer::value_only([task.clone()]);
        let config = SearchConfig {
            total_size: 4,
            beam_size: 2,
            max_rounds: 4,
            seed: 5,
        };
        let best = beam_search(&task, &SyntheticPolicy, &scorer, &config).unwrap();
        assert!(check_answer(&task, best.trajectory.final_answer));
        assert_eq!(best.score_history.len(), best.trajectory.steps.len());
    }

    #[test]
    fn beam_is_deterministic() {
        let task = make_task(&TaskSpec::uniform(4, 6, 11, 0.3)).unwrap();
        let scorer = OracleScorer::value_only([task.clone()]);
        let config = SearchConfig {
            total_size: 8,
            beam_size: 4,
            max_rounds: 6,
            seed: 12,
        };
        let a = beam_search(&task, &SyntheticPolicy, &scorer, &config).unwrap();
        let b = beam_search(&task, &SyntheticPolicy, &scorer, &config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn beam_respects_round_budget() {
        let task = make_task(&TaskSpec::uniform(4, 6, 11, 0.3)).unwrap();
        let scorer = OracleScorer::value_only([task.clone()]);
        let config = SearchConfig {
            total_size: 4,
            beam_size: 2,
            max_rounds: 3,
            seed: 12,
        };
        let best = beam_search(&task, &SyntheticPolicy, &scorer, &config).unwrap();
        assert_eq!(best.trajectory.steps.len(), 3);
        assert!(!best.trajectory.terminal);
        assert_eq!(best.trajectory.final_answer, None);
    }

    #[test]
    fn beam_never_exceeds_width_and_history_recomputes() {
        let task = make_task(&TaskSpec::uniform(9, 5, 11, 0.3)).unwrap();
        let view: TaskView = task.view();
        let scorer = OracleScorer::new(
            [task.clone()],
            ScoringConfig {
                mode: ScoreMode::Birm,
                aggregation: Aggregation::Prod,
                beta: 1.0,
            },
        );
        let config = SearchConfig {
            total_size: 8,
            beam_size: 2,
            max_rounds: 5,
            seed: 31,
        };
        let beam = beam_search_all(&task, &SyntheticPolicy, &scorer, &config).unwrap();
        assert!(beam.len() <= 2);
        for member in &beam {
            let rescored =
                Candidate::score(member.trajectory.clone(), &scorer, &view).unwrap();
            assert_eq!(member.score_history, rescored.score_history);
            assert_eq!(member.final_score, rescored.final_score);
        }
    }

    #[test]
    fn beam_equals_best_of_n_at_full_width() {
        let task = make_task(&TaskSpec::uniform(7, 5, 11, 0.4)).unwrap();
        let view: TaskView = task.view();
        let scorer = OracleScorer::new(
            [task.clone()],
            ScoringConfig {
                mode: ScoreMode::Birm,
                aggregation: Aggregation::Prod,
                beta: 1.5,
            },
        );
        let config = SearchConfig {
            total_size: 6,
            beam_size: 6,
            max_rounds: 5,
            seed: 77,
        };
        let beam_best = beam_search(&task, &SyntheticPolicy, &scorer, &config).unwrap();

        let pool = sample_candidates(&task, &SyntheticPolicy, 6, 77).unwrap();
        let cands: Vec<Candidate> = pool
            .into_iter()
            .map(|t| Candidate::score(t, &scorer, &view).unwrap())
            .collect();
        let bon_best = best_of_n(&cands).unwrap();
        assert_eq!(beam_best.trajectory, bon_best.trajectory);
        assert_eq!(beam_best.final_score, bon_best.final_score);
    }
}
