//! The trainable dual-head supervisor.
//!
//! A shared one-hidden-layer backbone feeds two logistic heads: a reward head
//! predicting step correctness and a value head predicting future success.
//! Features are computed from the task-visible context only — never from the
//! hidden operations — so the model has to learn correctness statistically,
//! the way an LLM verifier would.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use train::{
    build_samples, grad, grad_weighted, loss_batch, train, train_variant, train_with_weights,
    BatchLoss, EpochLoss, Gradients, HeadWeights, LabeledSample, ModelKind, TrainConfig,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{TaskView, Trajectory};
use crate::error::{Error, Result};
use crate::rng;

/// Featurization parameters. The feature vector for a prefix of length `t`
/// (ending in step value `x` after previous value `x_prev`) is, in order:
///
/// 1. one-hot of `min(t, max_steps)` (`max_steps` entries),
/// 2. `x / modulus`,
/// 3. `x_prev / modulus`,
/// 4. local-consistency flag: whether the step matches one of the task's
///    published candidate operations (computed without the hidden true
///    operation),
/// 5. `t / max_steps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Step-index cap `m_max` for the one-hot block.
    pub max_steps: usize,
    pub modulus: u64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            max_steps: 12,
            modulus: 97,
        }
    }
}

impl FeatureConfig {
    /// Feature dimensionality `D`.
    pub fn dim(&self) -> usize {
        self.max_steps + 4
    }

    /// Features of a non-empty prefix.
    pub fn features(&self, view: &TaskView, prefix: &Trajectory) -> Result<Vec<f64>> {
        let t = prefix.steps.len();
        if t == 0 {
            return Err(Error::contract("features require a non-empty prefix"));
        }
        let p = view.modulus as f64;
        let last = prefix.steps[t - 1].asserted_value;
        let prev = if t >= 2 {
            prefix.steps[t - 2].asserted_value
        } else {
            view.initial_value
        };

        let mut x = vec![0.0; self.dim()];
        x[t.min(self.max_steps) - 1] = 1.0;
        x[self.max_steps] = last as f64 / p;
        x[self.max_steps + 1] = prev as f64 / p;
        x[self.max_steps + 2] = f64::from(view.locally_consistent(t, prev, last));
        x[self.max_steps + 3] = t as f64 / self.max_steps as f64;
        Ok(x)
    }
}

/// Dual-head model: tanh backbone `D -> H` plus two logistic heads `H -> 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisorModel {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    /// Backbone weights, row-major `H x D`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// Reward head.
    pub w_r: Vec<f64>,
    pub b_r: f64,
    /// Value head.
    pub w_v: Vec<f64>,
    pub b_v: f64,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let z = x.exp();
        z / (1.0 + z)
    }
}

impl SupervisorModel {
    /// Zero-initialized model (both heads output exactly 0.5).
    pub fn zeros(feature_dim: usize, hidden_dim: usize) -> Self {
        SupervisorModel {
            feature_dim,
            hidden_dim,
            w1: vec![0.0; feature_dim * hidden_dim],
            b1: vec![0.0; hidden_dim],
            w_r: vec![0.0; hidden_dim],
            b_r: 0.0,
            w_v: vec![0.0; hidden_dim],
            b_v: 0.0,
        }
    }

    /// Seeded small-uniform initialization; biases start at zero.
    pub fn init(feature_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        let mut model = Self::zeros(feature_dim, hidden_dim);
        let mut rng = rng::substream(seed, 0);
        let s1 = 1.0 / (feature_dim as f64).sqrt();
        for w in &mut model.w1 {
            *w = rng.gen_range(-s1..=s1);
        }
        let s2 = 1.0 / (hidden_dim as f64).sqrt();
        for w in &mut model.w_r {
            *w = rng.gen_range(-s2..=s2);
        }
        for w in &mut model.w_v {
            *w = rng.gen_range(-s2..=s2);
        }
        model
    }

    /// Total trainable parameters: `D*H + H + 2*(H + 1)`.
    pub fn param_count(&self) -> usize {
        self.feature_dim * self.hidden_dim + self.hidden_dim + 2 * (self.hidden_dim + 1)
    }

    /// Flat parameter access in the fixed order `w1, b1, w_r, b_r, w_v, b_v`.
    pub fn param(&self, idx: usize) -> f64 {
        let (dh, h) = (self.w1.len(), self.hidden_dim);
        match idx {
            i if i < dh => self.w1[i],
            i if i < dh + h => self.b1[i - dh],
            i if i < dh + 2 * h => self.w_r[i - dh - h],
            i if i == dh + 2 * h => self.b_r,
            i if i < dh + 3 * h + 1 => self.w_v[i - dh - 2 * h - 1],
            i if i == dh + 3 * h + 1 => self.b_v,
            i => panic!("parameter index {i} out of range"),
        }
    }

    pub fn param_mut(&mut self, idx: usize) -> &mut f64 {
        let (dh, h) = (self.w1.len(), self.hidden_dim);
        match idx {
            i if i < dh => &mut self.w1[i],
            i if i < dh + h => &mut self.b1[i - dh],
            i if i < dh + 2 * h => &mut self.w_r[i - dh - h],
            i if i == dh + 2 * h => &mut self.b_r,
            i if i < dh + 3 * h + 1 => &mut self.w_v[i - dh - 2 * h - 1],
            i if i == dh + 3 * h + 1 => &mut self.b_v,
            i => panic!("parameter index {i} out of range"),
        }
    }

    fn check_dim(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.feature_dim {
            return Err(Error::validation(format!(
                "feature dimension {} != model dimension {}",
                features.len(),
                self.feature_dim
            )));
        }
        Ok(())
    }

    /// Backbone activations for one input.
    fn hidden(&self, features: &[f64]) -> Vec<f64> {
        let d = self.feature_dim;
        (0..self.hidden_dim)
            .map(|h| {
                let row = &self.w1[h * d..(h + 1) * d];
                let z: f64 = row
                    .iter()
                    .zip(features)
                    .map(|(w, x)| w * x)
                    .sum::<f64>()
                    + self.b1[h];
                z.tanh()
            })
            .collect()
    }

    /// Predicted (reward, value), both in (0, 1). The heads read the same
    /// backbone activation.
    pub fn forward(&self, features: &[f64]) -> Result<(f64, f64)> {
        let (_, r, v) = self.forward_full(features)?;
        Ok((r, v))
    }

    /// Forward pass that also exposes the hidden activations (for backprop).
    pub(crate) fn forward_full(&self, features: &[f64]) -> Result<(Vec<f64>, f64, f64)> {
        self.check_dim(features)?;
        let a = self.hidden(features);
        let z_r: f64 = self.w_r.iter().zip(&a).map(|(w, x)| w * x).sum::<f64>() + self.b_r;
        let z_v: f64 = self.w_v.iter().zip(&a).map(|(w, x)| w * x).sum::<f64>() + self.b_v;
        Ok((a, sigmoid(z_r), sigmoid(z_v)))
    }
}
