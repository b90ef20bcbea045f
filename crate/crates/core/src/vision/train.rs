//! Mini-batch Adam training with sparse categorical cross-entropy.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::cnn::{argmax, CnnParams, Workspace};
use super::dataset::Sample;
use super::VisionError;
use crate::rng::{stream_rng, streams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub dataset_size: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            dataset_size: 100_000,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: CnnParams<f32>,
    pub metrics: Vec<EpochMetrics>,
    /// Accuracy over the training split after the last epoch.
    pub train_acc: f64,
}

struct Adam {
    m: CnnParams<f32>,
    v: CnnParams<f32>,
    t: i32,
}

impl Adam {
    fn step(&mut self, cfg: &TrainConfig, params: &mut CnnParams<f32>, grads: &CnnParams<f32>) {
        self.t += 1;
        let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
        let lr_t = (cfg.learning_rate * (1.0 - cfg.beta2.powi(self.t)).sqrt() / (1.0 - cfg.beta1.powi(self.t))) as f32;
        let eps = cfg.epsilon as f32;
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= lr_t * m[i] / (v[i].sqrt() + eps);
            }
        }
    }
}

/// Split `n` sample indices into (train, validation) with a seeded shuffle.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream_rng(seed, streams::SHUFFLE));
    let n_val = ((n as f64 * val_fraction).round() as usize).min(n.saturating_sub(1));
    let train = idx.split_off(n_val);
    (train, idx)
}

pub fn accuracy(params: &CnnParams<f32>, data: &[Sample], indices: &[usize]) -> f64 {
    if indices.is_empty() {
        return f64::NAN;
    }
    let mut ws = Workspace::new();
    let correct = indices
        .iter()
        .filter(|&&i| argmax(&params.forward_with(data[i].image.pixels(), &mut ws)) == data[i].label.index())
        .count();
    correct as f64 / indices.len() as f64
}

pub fn train(cfg: &TrainConfig, data: &[Sample]) -> Result<TrainOutcome, VisionError> {
    train_with_progress(cfg, data, |_| {})
}

/// Train from Glorot initialization; `progress` is called after each epoch.
pub fn train_with_progress<F>(cfg: &TrainConfig, data: &[Sample], mut progress: F) -> Result<TrainOutcome, VisionError>
where
    F: FnMut(&EpochMetrics),
{
    if data.is_empty() {
        return Err(VisionError::EmptyData);
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 || !(0.0..1.0).contains(&cfg.val_fraction) {
        return Err(VisionError::InvalidConfig(format!(
            "epochs {}, batch_size {}, val_fraction {}",
            cfg.epochs, cfg.batch_size, cfg.val_fraction
        )));
    }
    let (mut train_idx, val_idx) = split_indices(data.len(), cfg.val_fraction, cfg.seed);
    let mut order_rng = stream_rng(cfg.seed ^ 0x5eed, streams::SHUFFLE);
    let mut params = CnnParams::<f32>::glorot(&mut stream_rng(cfg.seed, streams::INIT));
    let mut adam = Adam {
        m: CnnParams::zeros(),
        v: CnnParams::zeros(),
        t: 0,
    };
    let mut grads = CnnParams::<f32>::zeros();
    let mut ws = Workspace::<f32>::new();
    let mut metrics = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        train_idx.shuffle(&mut order_rng);
        let mut loss_sum = 0.0f64;
        for (batch_no, batch) in train_idx.chunks(cfg.batch_size).enumerate() {
            grads.fill_zero();
            let mut batch_loss = 0.0f64;
            for &i in batch {
                params.forward_with(data[i].image.pixels(), &mut ws);
                batch_loss += params.backward(&mut ws, data[i].label.index(), &mut grads) as f64;
            }
            if !batch_loss.is_finite() {
                return Err(VisionError::NonFiniteLoss { epoch, batch: batch_no });
            }
            let scale = 1.0 / batch.len() as f32;
            for t in grads.tensors_mut() {
                t.iter_mut().for_each(|g| *g *= scale);
            }
            adam.step(cfg, &mut params, &grads);
            loss_sum += batch_loss;
        }
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / train_idx.len() as f64,
            val_acc: accuracy(&params, data, &val_idx),
        };
        progress(&m);
        metrics.push(m);
    }
    let train_acc = accuracy(&params, data, &train_idx);
    Ok(TrainOutcome {
        params,
        metrics,
        train_acc,
    })
}

pub fn write_metrics_csv<W: std::io::Write>(w: W, metrics: &[EpochMetrics]) -> Result<(), VisionError> {
    let mut out = csv::Writer::from_writer(w);
    for m in metrics {
        out.serialize(m)?;
    }
    out.flush()?;
    Ok(())
}
