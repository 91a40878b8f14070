//! Process supervision with bidirectional signals.
//!
//! The crate trains and evaluates verifiers for step-wise reasoning. A
//! verifier scores a partial solution from two directions: the accumulated
//! per-step correctness reward `g` (backward) and an estimate `h` of the
//! probability of still reaching the correct final answer (forward). The two
//! combine A*-style into `f = g + beta * h`, which drives Best-of-N
//! re-ranking and step-level beam search.
//!
//! Modules:
//!
//! * [`env`] — synthetic modular-arithmetic reasoning tasks with a stochastic
//!   generator and exact correctness/value oracles;
//! * [`corpus`] — JSONL datasets, manifests and externally scored dumps;
//! * [`annotate`] — reward labels and MC / outcome / entropy-regularized
//!   value labels;
//! * [`supervisor`] — the dual-head model and its joint MSE training;
//! * [`scoring`] — aggregations, the combined score, and scorers;
//! * [`search`] — Best-of-N, majority vote, step-level beam search;
//! * [`bench`] — accuracy curves, beam grids, scaling-decline analysis, CSV.

pub mod annotate;
pub mod bench;
pub mod corpus;
pub mod env;
pub mod error;
pub mod rng;
pub mod scoring;
pub mod search;
pub mod supervisor;

pub use error::{Error, Result};
