//! Trajectory datasets on disk.
//!
//! Everything is JSONL: one JSON object per line, UTF-8, with gzip variants
//! selected by a `.gz` extension. Readers validate per line and report the
//! 1-based line number of the first offending record.
//!
//! Record schemas (field-by-field):
//!
//! * `TrajectoryRecord` — `task_id` (string), `question` (opaque JSON payload;
//!   for synthetic corpora this is the serialized task view), `steps`
//!   (`[{index, asserted_value}]`), `final_answer` (int or null),
//!   `answer_correct` (bool).
//! * `LabeledRecord` — a `TrajectoryRecord` plus `reward_labels` (floats in
//!   [0,1], one per step) and `value_labels` (floats in [0,1], one per step;
//!   may be empty when the annotation mode produced none).
//! * `ScoredRecord` — a `TrajectoryRecord` plus `provenance` (string naming
//!   the external scorer) and at least one of `reward_scores` /
//!   `value_scores` (floats in [0,1], one per step).

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rand::seq::SliceRandom;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::env::{Step, Trajectory};
use crate::error::{Error, Result};
use crate::rng;

/// One sampled solution for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub task_id: String,
    /// Opaque question payload; round-tripped untouched.
    pub question: serde_json::Value,
    pub steps: Vec<Step>,
    pub final_answer: Option<u64>,
    pub answer_correct: bool,
}

impl TrajectoryRecord {
    pub fn from_trajectory(
        traj: &Trajectory,
        question: serde_json::Value,
        answer_correct: bool,
    ) -> Self {
        TrajectoryRecord {
            task_id: traj.task_id.clone(),
            question,
            steps: traj.steps.clone(),
            final_answer: traj.final_answer,
            answer_correct,
        }
    }

    /// Rebuild the trajectory; a present `final_answer` marks it terminal.
    pub fn trajectory(&self) -> Trajectory {
        Trajectory {
            task_id: self.task_id.clone(),
            steps: self.steps.clone(),
            final_answer: self.final_answer,
            terminal: self.final_answer.is_some(),
        }
    }
}

/// A trajectory with per-step training labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledRecord {
    #[serde(flatten)]
    pub record: TrajectoryRecord,
    /// Step correctness labels; usually binary, soft values permitted.
    pub reward_labels: Vec<f64>,
    /// Future-success labels; empty when the mode produced none.
    #[serde(default)]
    pub value_labels: Vec<f64>,
}

impl LabeledRecord {
    pub fn validate(&self) -> Result<()> {
        let n = self.record.steps.len();
        if self.reward_labels.len() != n {
            return Err(Error::validation(format!(
                "reward_labels length {} != steps length {n}",
                self.reward_labels.len()
            )));
        }
        if !self.value_labels.is_empty() && self.value_labels.len() != n {
            return Err(Error::validation(format!(
                "value_labels length {} != steps length {n}",
                self.value_labels.len()
            )));
        }
        for v in self.reward_labels.iter().chain(self.value_labels.iter()) {
            if !(0.0..=1.0).contains(v) {
                return Err(Error::validation(format!("label {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// A trajectory scored by an external verifier (offline re-ranking input).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRecord {
    #[serde(flatten)]
    pub record: TrajectoryRecord,
    /// Name of the external scorer the sequences came from.
    pub provenance: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_scores: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_scores: Option<Vec<f64>>,
}

impl ScoredRecord {
    pub fn validate(&self) -> Result<()> {
        if self.reward_scores.is_none() && self.value_scores.is_none() {
            return Err(Error::validation(
                "scored record carries neither reward_scores nor value_scores",
            ));
        }
        let n = self.record.steps.len();
        for (name, scores) in [
            ("reward_scores", &self.reward_scores),
            ("value_scores", &self.value_scores),
        ] {
            if let Some(scores) = scores {
                if scores.len() != n {
                    return Err(Error::validation(format!(
                        "{name} length {} != steps length {n}",
                        scores.len()
                    )));
                }
                for s in scores {
                    if !(0.0..=1.0).contains(s) {
                        return Err(Error::validation(format!("{name} value {s} outside [0, 1]")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// The candidates of one query, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredGroup {
    pub task_id: String,
    pub records: Vec<ScoredRecord>,
}

/// Query-level split assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// Dataset sizing and split plan: `n_queries` queries, each answered by
/// `responses_per_query` sampled solutions, split at query granularity so no
/// query's records straddle splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub n_queries: usize,
    pub responses_per_query: usize,
    pub master_seed: u64,
    /// `assignments[q]` is the split of query `q`.
    pub assignments: Vec<Split>,
}

impl CorpusManifest {
    pub fn split_of(&self, query: usize) -> Split {
        self.assignments[query]
    }

    pub fn queries_in(&self, split: Split) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == split)
            .map(|(q, _)| q)
            .collect()
    }

    pub fn total_records(&self) -> usize {
        self.n_queries * self.responses_per_query
    }
}

/// Deterministic query-level split. `split_fracs` is `[train, dev, test]` and
/// must sum to 1; train and dev counts round down, test takes the remainder.
pub fn build_manifest(
    n_queries: usize,
    responses_per_query: usize,
    split_fracs: [f64; 3],
    seed: u64,
) -> Result<CorpusManifest> {
    if responses_per_query < 1 {
        return Err(Error::validation("responses_per_query must be >= 1"));
    }
    let sum: f64 = split_fracs.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::validation(format!(
            "split fractions sum to {sum}, expected 1"
        )));
    }
    if split_fracs.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::validation("split fractions must lie in [0, 1]"));
    }

    let mut order: Vec<usize> = (0..n_queries).collect();
    order.shuffle(&mut rng::master_rng(seed));

    let n_train = (split_fracs[0] * n_queries as f64).floor() as usize;
    let n_dev = (split_fracs[1] * n_queries as f64).floor() as usize;
    let mut assignments = vec![Split::Test; n_queries];
    for (rank, &query) in order.iter().enumerate() {
        assignments[query] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_dev {
            Split::Dev
        } else {
            Split::Test
        };
    }
    Ok(CorpusManifest {
        n_queries,
        responses_per_query,
        master_seed: seed,
        assignments,
    })
}

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

/// Write records as JSONL (gzip if the path ends in `.gz`). Returns the count.
pub fn write_jsonl<T: Serialize>(records: &[T], path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer: Box<dyn Write> = if is_gz(path) {
        Box::new(BufWriter::new(GzEncoder::new(file, Compression::default())))
    } else {
        Box::new(BufWriter::new(file))
    };
    for record in records {
        let line = serde_json::to_string(record).map_err(|e| Error::Jsonl {
            path: path.to_path_buf(),
            line: 0,
            message: format!("serialize: {e}"),
        })?;
        writeln!(writer, "{line}").map_err(|e| Error::io(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(records.len())
}

/// Read a JSONL file of records. Whitespace-only lines are skipped; the first
/// malformed line fails with its line number and the decoder's message
/// (which names missing or mistyped fields).
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader: Box<dyn Read> = if is_gz(path) {
        Box::new(GzDecoder::new(file))
    } else {
        Box::new(file)
    };
    let mut records = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line).map_err(|e| Error::Jsonl {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Read externally scored candidates and group them by query, preserving both
/// the queries' first-appearance order and the candidate order within each
/// query. Every record is schema- and range-validated.
pub fn ingest_scored(path: impl AsRef<Path>) -> Result<Vec<ScoredGroup>> {
    let path = path.as_ref();
    let records: Vec<ScoredRecord> = read_jsonl(path)?;
    let mut groups: Vec<ScoredGroup> = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();
    for (i, record) in records.into_iter().enumerate() {
        record.validate().map_err(|e| Error::Jsonl {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        let idx = *by_id.entry(record.record.task_id.clone()).or_insert_with(|| {
            groups.push(ScoredGroup {
                task_id: record.record.task_id.clone(),
                records: Vec::new(),
            });
            groups.len() - 1
        });
        groups[idx].records.push(record);
    }
    Ok(groups)
}
