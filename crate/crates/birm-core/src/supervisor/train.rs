//! Joint MSE training of the dual-head supervisor.
//!
//! The batch loss is `L = L_reward + c * L_value` with both terms mean squared
//! error over the steps in the batch. The model variants differ only in which
//! head receives gradient and which label column feeds it:
//!
//! * `prm`  — reward head on step-correctness labels,
//! * `vm`   — value head on MC value labels,
//! * `orm`  — value head on the final correctness replicated per step,
//! * `birm` — both heads jointly.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::LabeledRecord;
use crate::env::TaskView;
use crate::error::{Error, Result};
use crate::rng;

use super::{FeatureConfig, SupervisorModel};

/// One training step: features plus the two head targets.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: Vec<f64>,
    pub reward_label: f64,
    pub value_label: f64,
}

/// The three losses of one batch. `birm = prm + c * vm` by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    pub prm: f64,
    pub vm: f64,
    pub birm: f64,
}

/// Loss recorded after one epoch over the full corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub prm: f64,
    pub vm: f64,
    pub birm: f64,
}

/// Per-head loss multipliers; picks which heads a variant trains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadWeights {
    pub reward: f64,
    pub value: f64,
}

/// Supervision variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Orm,
    Prm,
    Vm,
    Birm,
}

impl ModelKind {
    pub fn head_weights(&self, c: f64) -> HeadWeights {
        match self {
            ModelKind::Prm => HeadWeights { reward: 1.0, value: 0.0 },
            ModelKind::Orm | ModelKind::Vm => HeadWeights { reward: 0.0, value: 1.0 },
            ModelKind::Birm => HeadWeights { reward: 1.0, value: c },
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "orm" => Ok(ModelKind::Orm),
            "prm" => Ok(ModelKind::Prm),
            "vm" => Ok(ModelKind::Vm),
            "birm" => Ok(ModelKind::Birm),
            other => Err(Error::validation(format!("unknown model kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Loss mixing coefficient `c` for the value term.
    pub c: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            c: 1.0,
            learning_rate: 0.05,
            epochs: 30,
            batch_size: 256,
            seed: 0,
            hidden_dim: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c < 0.0 {
            return Err(Error::validation("c must be >= 0"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::validation("learning rate must be > 0"));
        }
        if self.epochs < 1 || self.batch_size < 1 || self.hidden_dim < 1 {
            return Err(Error::validation(
                "epochs, batch_size and hidden_dim must be >= 1",
            ));
        }
        Ok(())
    }
}

/// Gradient of the loss w.r.t. every model parameter; same layout as
/// [`SupervisorModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w_r: Vec<f64>,
    pub b_r: f64,
    pub w_v: Vec<f64>,
    pub b_v: f64,
}

impl Gradients {
    fn zeros(feature_dim: usize, hidden_dim: usize) -> Self {
        Gradients {
            w1: vec![0.0; feature_dim * hidden_dim],
            b1: vec![0.0; hidden_dim],
            w_r: vec![0.0; hidden_dim],
            b_r: 0.0,
            w_v: vec![0.0; hidden_dim],
            b_v: 0.0,
        }
    }

    /// Flat access with the model's parameter ordering.
    pub fn param(&self, idx: usize) -> f64 {
        let (dh, h) = (self.w1.len(), self.b1.len());
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

    pub fn norm(&self) -> f64 {
        let mut sum = self.b_r * self.b_r + self.b_v * self.b_v;
        for v in self.w1.iter().chain(&self.b1).chain(&self.w_r).chain(&self.w_v) {
            sum += v * v;
        }
        sum.sqrt()
    }
}

fn validate_batch(model: &SupervisorModel, batch: &[LabeledSample]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch".into()));
    }
    for sample in batch {
        if sample.features.len() != model.feature_dim {
            return Err(Error::validation(format!(
                "sample dimension {} != model dimension {}",
                sample.features.len(),
                model.feature_dim
            )));
        }
        if !(0.0..=1.0).contains(&sample.reward_label) {
            return Err(Error::validation(format!(
                "reward label {} outside [0, 1]",
                sample.reward_label
            )));
        }
        if !(0.0..=1.0).contains(&sample.value_label) {
            return Err(Error::validation(format!(
                "value label {} outside [0, 1]",
                sample.value_label
            )));
        }
    }
    Ok(())
}

/// Mean squared errors of both heads over a batch, and their combination
/// `birm = prm + c * vm`.
pub fn loss_batch(model: &SupervisorModel, batch: &[LabeledSample], c: f64) -> Result<BatchLoss> {
    validate_batch(model, batch)?;
    let n = batch.len() as f64;
    let mut prm = 0.0;
    let mut vm = 0.0;
    for sample in batch {
        let (r, v) = model.forward(&sample.features)?;
        prm += (r - sample.reward_label).powi(2);
        vm += (v - sample.value_label).powi(2);
    }
    prm /= n;
    vm /= n;
    Ok(BatchLoss {
        prm,
        vm,
        birm: prm + c * vm,
    })
}

/// Analytic gradient of `prm + c * vm` (both heads plus shared backbone).
pub fn grad(model: &SupervisorModel, batch: &[LabeledSample], c: f64) -> Result<Gradients> {
    grad_weighted(
        model,
        batch,
        HeadWeights {
            reward: 1.0,
            value: c,
        },
    )
}

/// Analytic gradient of `reward_weight * L_reward + value_weight * L_value`.
pub fn grad_weighted(
    model: &SupervisorModel,
    batch: &[LabeledSample],
    weights: HeadWeights,
) -> Result<Gradients> {
    validate_batch(model, batch)?;
    let n = batch.len() as f64;
    let d = model.feature_dim;
    let mut g = Gradients::zeros(d, model.hidden_dim);

    for sample in batch {
        let (a, r, v) = model.forward_full(&sample.features)?;
        // dL/dz through MSE and the logistic squashing.
        let delta_r = weights.reward * 2.0 * (r - sample.reward_label) / n * r * (1.0 - r);
        let delta_v = weights.value * 2.0 * (v - sample.value_label) / n * v * (1.0 - v);

        g.b_r += delta_r;
        g.b_v += delta_v;
        for (h, &a_h) in a.iter().enumerate() {
            g.w_r[h] += delta_r * a_h;
            g.w_v[h] += delta_v * a_h;
            let da = delta_r * model.w_r[h] + delta_v * model.w_v[h];
            let dz = da * (1.0 - a_h * a_h);
            g.b1[h] += dz;
            let row = &mut g.w1[h * d..(h + 1) * d];
            for (slot, &x) in row.iter_mut().zip(&sample.features) {
                *slot += dz * x;
            }
        }
    }
    Ok(g)
}

fn apply_update(model: &mut SupervisorModel, g: &Gradients, lr: f64) {
    for (w, gw) in model.w1.iter_mut().zip(&g.w1) {
        *w -= lr * gw;
    }
    for (b, gb) in model.b1.iter_mut().zip(&g.b1) {
        *b -= lr * gb;
    }
    for (w, gw) in model.w_r.iter_mut().zip(&g.w_r) {
        *w -= lr * gw;
    }
    model.b_r -= lr * g.b_r;
    for (w, gw) in model.w_v.iter_mut().zip(&g.w_v) {
        *w -= lr * gw;
    }
    model.b_v -= lr * g.b_v;
}

/// Train a BiRM model (both heads, value term weighted by `config.c`).
pub fn train(
    samples: &[LabeledSample],
    config: &TrainConfig,
) -> Result<(SupervisorModel, Vec<EpochLoss>)> {
    train_with_weights(
        samples,
        HeadWeights {
            reward: 1.0,
            value: config.c,
        },
        config,
    )
}

/// Mini-batch gradient descent with a fixed learning rate. Deterministic: the
/// model is seeded from `config.seed` and epoch `e` shuffles with stream
/// `substream(config.seed, 1 + e)`.
pub fn train_with_weights(
    samples: &[LabeledSample],
    weights: HeadWeights,
    config: &TrainConfig,
) -> Result<(SupervisorModel, Vec<EpochLoss>)> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("training corpus".into()));
    }
    let feature_dim = samples[0].features.len();
    let mut model = SupervisorModel::init(feature_dim, config.hidden_dim, config.seed);
    validate_batch(&model, samples)?;

    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut batch: Vec<LabeledSample> = Vec::with_capacity(config.batch_size);

    for epoch in 0..config.epochs {
        let mut shuffle_rng = rng::substream(config.seed, 1 + epoch as u64);
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| samples[i].clone()));
            let g = grad_weighted(&model, &batch, weights)?;
            apply_update(&mut model, &g, config.learning_rate);
        }
        let loss = loss_batch(&model, samples, config.c)?;
        history.push(EpochLoss {
            epoch,
            prm: loss.prm,
            vm: loss.vm,
            birm: loss.birm,
        });
    }
    Ok((model, history))
}

/// Build training samples from labeled records. The task view is recovered
/// from each record's question payload; the value target column depends on
/// the variant (`orm` replicates the final correctness, the others read the
/// annotated value labels).
pub fn build_samples(
    records: &[LabeledRecord],
    features: &FeatureConfig,
    kind: ModelKind,
) -> Result<Vec<LabeledSample>> {
    let needs_value_labels = matches!(kind, ModelKind::Vm | ModelKind::Birm);
    let mut samples = Vec::new();
    for (i, labeled) in records.iter().enumerate() {
        labeled.validate()?;
        let view: TaskView =
            serde_json::from_value(labeled.record.question.clone()).map_err(|e| {
                Error::missing(
                    "task view",
                    format!("record {i} question payload is not a task view: {e}"),
                )
            })?;
        if needs_value_labels && labeled.value_labels.is_empty() {
            return Err(Error::missing(
                "value_labels",
                format!("record {i} carries none but {kind:?} needs them"),
            ));
        }
        let traj = labeled.record.trajectory();
        for t in 1..=traj.steps.len() {
            let prefix = traj.prefix(t, view.num_steps);
            let value_label = match kind {
                ModelKind::Orm => f64::from(labeled.record.answer_correct),
                _ => labeled.value_labels.get(t - 1).copied().unwrap_or(0.0),
            };
            samples.push(LabeledSample {
                features: features.features(&view, &prefix)?,
                reward_label: labeled.reward_labels[t - 1],
                value_label,
            });
        }
    }
    Ok(samples)
}

/// Train one supervision variant from a labeled corpus.
pub fn train_variant(
    records: &[LabeledRecord],
    kind: ModelKind,
    features: &FeatureConfig,
    config: &TrainConfig,
) -> Result<(SupervisorModel, Vec<EpochLoss>)> {
    let samples = build_samples(records, features, kind)?;
    train_with_weights(&samples, kind.head_weights(config.c), config)
}
