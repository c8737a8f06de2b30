//! Full-model comparison of analytic gradients against central differences.
//!
//! Top-k choices are piecewise constant, so the numeric side replays the
//! expert and neuron selections recorded at the unperturbed point.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{GradComparison, Rng};

use super::backward::batch_backward;
use super::config::ModelConfig;
use super::forward::{batch_forward, ForwardOptions, SeqRoutes};
use super::params::ModelParams;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TensorGradCheck {
    pub name: String,
    pub rel_l2: f64,
    pub max_abs: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub eps: f64,
    pub tensors: Vec<TensorGradCheck>,
    /// Relative L2 error over every parameter at once.
    pub global_rel_l2: f64,
    /// Largest per-tensor relative L2 error.
    pub worst_rel_l2: f64,
    pub worst_tensor: String,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.worst_rel_l2 < tol && self.global_rel_l2 < tol
    }
}

/// Checks the gradient of `ce_loss + aux_loss` over `seqs` for every scalar
/// parameter. Tensors whose gradients are both exactly zero count as exact.
pub fn full_gradcheck(params: &ModelParams<f64>, cfg: &ModelConfig, seqs: &[Vec<u32>], eps: f64) -> Result<GradCheckReport> {
    if !(eps > 0.0) {
        return Err(Error::Argument(format!("finite-difference step must be positive, got {eps}")));
    }
    let fwd = batch_forward(params, cfg, seqs, ForwardOptions::default(), 1)?;
    let routes: Vec<SeqRoutes> = fwd.seqs.iter().map(|s| s.cache.routes()).collect();
    let grads = batch_backward(params, cfg, &fwd, 1)?;
    let opts = ForwardOptions {
        neuron_keep: None,
        replay: Some(&routes),
    };
    let loss = |p: &ModelParams<f64>| -> Result<f64> {
        let f = batch_forward(p, cfg, seqs, opts, 1)?;
        Ok(f.ce_loss + f.aux_loss)
    };

    let mut probe = params.clone();
    let analytic = grads.tensors();
    let n_tensors = analytic.len();
    let mut tensors = Vec::with_capacity(n_tensors);
    let (mut all_a, mut all_n) = (Vec::new(), Vec::new());
    for idx in 0..n_tensors {
        let len = analytic[idx].1.len();
        let mut numeric = vec![0.0; len];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = probe.tensors()[idx].1.data()[i];
            probe.tensors_mut()[idx].1.data_mut()[i] = orig + eps;
            let plus = loss(&probe)?;
            probe.tensors_mut()[idx].1.data_mut()[i] = orig - eps;
            let minus = loss(&probe)?;
            probe.tensors_mut()[idx].1.data_mut()[i] = orig;
            *slot = (plus - minus) / (2.0 * eps);
        }
        let a = analytic[idx].1.data();
        let c = GradComparison::new(a, &numeric, 1e-8);
        tensors.push(TensorGradCheck {
            name: analytic[idx].0.clone(),
            rel_l2: c.rel_l2,
            max_abs: c.max_abs,
            count: c.count,
        });
        all_a.extend_from_slice(a);
        all_n.extend(numeric);
    }
    let global = GradComparison::new(&all_a, &all_n, 1e-8);
    let worst = tensors
        .iter()
        .max_by(|a, b| a.rel_l2.total_cmp(&b.rel_l2))
        .cloned()
        .ok_or_else(|| Error::EmptyInput("model has no parameters".into()))?;
    Ok(GradCheckReport {
        eps,
        global_rel_l2: global.rel_l2,
        worst_rel_l2: worst.rel_l2,
        worst_tensor: worst.name,
        tensors,
    })
}

/// `count` random sequences of `len` tokens for gradient probes.
pub fn probe_sequences(cfg: &ModelConfig, count: usize, len: usize, seed: u64) -> Vec<Vec<u32>> {
    let mut rng = Rng::new(seed).split(5);
    (0..count)
        .map(|_| (0..len).map(|_| rng.below(cfg.vocab_size) as u32).collect())
        .collect()
}
