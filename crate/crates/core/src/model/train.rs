use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{Element, Rng};

use super::backward::batch_backward;
use super::config::{ModelConfig, TrainConfig};
use super::data::Dataset;
use super::forward::{batch_forward, ForwardOptions};
use super::params::ModelParams;

/// Parameters plus AdamW moments.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T: Element = f64> {
    pub params: ModelParams<T>,
    pub m: ModelParams<T>,
    pub v: ModelParams<T>,
    /// Optimizer steps taken so far.
    pub step: u64,
}

impl<T: Element> TrainState<T> {
    pub fn new(params: ModelParams<T>) -> Self {
        let m = params.zeros_like();
        let v = params.zeros_like();
        Self { params, m, v, step: 0 }
    }

    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        Ok(Self::new(ModelParams::init(cfg)?))
    }
}

/// One record of the training log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepMetrics {
    pub step: u64,
    pub ce_loss: f64,
    pub aux_loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
    pub tokens: u64,
    pub tokens_per_sec: f64,
}

/// Log line for a step: `{step, ce_loss, aux_loss, tokens_per_sec}`.
#[derive(Serialize)]
struct LogLine {
    step: u64,
    ce_loss: f64,
    aux_loss: f64,
    tokens_per_sec: f64,
}

impl StepMetrics {
    pub fn log_line(&self) -> String {
        serde_json::to_string(&LogLine {
            step: self.step,
            ce_loss: self.ce_loss,
            aux_loss: self.aux_loss,
            tokens_per_sec: self.tokens_per_sec,
        })
        .expect("plain numbers serialize")
    }
}

/// Gradient of `ce + aux` on `batch`, then one AdamW update.
pub fn backward_and_step<T: Element>(
    state: &mut TrainState<T>,
    cfg: &ModelConfig,
    train: &TrainConfig,
    batch: &[Vec<u32>],
    threads: usize,
) -> Result<StepMetrics> {
    let start = Instant::now();
    let step = state.step + 1;
    let fwd = batch_forward(&state.params, cfg, batch, ForwardOptions::default(), threads).map_err(|e| match e {
        Error::Numeric(_) | Error::DegenerateInput(_) => Error::Divergence {
            step,
            detail: e.to_string(),
        },
        other => other,
    })?;
    if !fwd.ce_loss.is_finite() || !fwd.aux_loss.is_finite() {
        return Err(Error::Divergence {
            step,
            detail: format!("loss ce={} aux={}", fwd.ce_loss, fwd.aux_loss),
        });
    }
    let grads = batch_backward(&state.params, cfg, &fwd, threads)?;
    let grad_norm = grads.sum_squares().sqrt();
    if !grad_norm.is_finite() {
        let culprit = grads
            .tensors()
            .into_iter()
            .find(|(_, t)| !t.all_finite())
            .map(|(n, _)| n)
            .unwrap_or_default();
        return Err(Error::Divergence {
            step,
            detail: format!("non-finite gradient in `{culprit}`"),
        });
    }
    let clip = if train.grad_clip > 0.0 && grad_norm > train.grad_clip {
        train.grad_clip / grad_norm
    } else {
        1.0
    };
    let lr = train.lr_at(step);
    adamw_update(state, &grads, train, lr, clip, step);
    state.step = step;
    let tokens: u64 = batch.iter().map(|s| s.len() as u64).sum();
    let secs = start.elapsed().as_secs_f64();
    Ok(StepMetrics {
        step,
        ce_loss: fwd.ce_loss,
        aux_loss: fwd.aux_loss,
        grad_norm,
        lr,
        tokens,
        tokens_per_sec: if secs > 0.0 { tokens as f64 / secs } else { 0.0 },
    })
}

fn adamw_update<T: Element>(state: &mut TrainState<T>, grads: &ModelParams<T>, train: &TrainConfig, lr: f64, clip: f64, step: u64) {
    let (b1, b2) = (T::of_f64(train.beta1), T::of_f64(train.beta2));
    let bc1 = T::of_f64(1.0 - train.beta1.powi(step as i32));
    let bc2 = T::of_f64(1.0 - train.beta2.powi(step as i32));
    let (eps, wd, lr, clip) = (T::of_f64(train.eps), T::of_f64(train.weight_decay), T::of_f64(lr), T::of_f64(clip));
    let one = T::one();
    let g_all = grads.tensors();
    let mut m_all = state.m.tensors_mut();
    let mut v_all = state.v.tensors_mut();
    for (i, (_, p)) in state.params.tensors_mut().into_iter().enumerate() {
        // Gains are vectors; only matrices decay.
        let decay = p.shape().len() >= 2;
        let g = g_all[i].1.data();
        let m = m_all[i].1.data_mut();
        let v = v_all[i].1.data_mut();
        for (j, pj) in p.data_mut().iter_mut().enumerate() {
            let gj = g[j] * clip;
            m[j] = b1 * m[j] + (one - b1) * gj;
            v[j] = b2 * v[j] + (one - b2) * gj * gj;
            let mut upd = (m[j] / bc1) / ((v[j] / bc2).sqrt() + eps);
            if decay {
                upd = upd + wd * *pj;
            }
            *pj = *pj - lr * upd;
        }
    }
}

/// Batch sampler stream for a given optimizer step; independent of how
/// many steps ran before, so resumed runs see the same batches.
pub fn batch_rng(seed: u64, step: u64) -> Rng {
    Rng::new(seed).split((1 << 40) | step)
}

/// Runs optimizer steps until `train.steps`, calling `on_step` after each.
pub fn train<T: Element>(
    state: &mut TrainState<T>,
    cfg: &ModelConfig,
    train: &TrainConfig,
    data: &Dataset,
    threads: usize,
    mut on_step: impl FnMut(&StepMetrics) -> Result<()>,
) -> Result<Vec<StepMetrics>> {
    cfg.validate()?;
    train.validate()?;
    let mut history = Vec::new();
    while state.step < train.steps {
        let mut rng = batch_rng(cfg.seed, state.step + 1);
        let batch = data.sample_batch(train.batch_size, cfg.seq_len, &mut rng)?;
        let m = backward_and_step(state, cfg, train, &batch, threads)?;
        on_step(&m)?;
        history.push(m);
    }
    Ok(history)
}
