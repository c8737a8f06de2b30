use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{evaluate, ModelConfig, ModelParams};
use crate::numerics::Element;

use super::report::num;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PrunePoint {
    pub keep_ratio: f64,
    /// Neurons kept per activated expert and token.
    pub keep_neurons: usize,
    pub ce_loss: f64,
    pub accuracy: f64,
    pub tokens: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PruneSweepResult {
    pub model_id: String,
    /// Neurons an activated expert uses when unpruned.
    pub base_neurons: usize,
    pub points: Vec<PrunePoint>,
}

impl PruneSweepResult {
    pub const CSV_HEADER: [&'static str; 6] = ["model_id", "keep_ratio", "keep_neurons", "ce_loss", "accuracy", "tokens"];

    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        self.points
            .iter()
            .map(|p| {
                vec![
                    self.model_id.clone(),
                    num(p.keep_ratio),
                    p.keep_neurons.to_string(),
                    num(p.ce_loss),
                    num(p.accuracy),
                    p.tokens.to_string(),
                ]
            })
            .collect()
    }
}

/// `⌈ρ·base⌉`, at least one neuron. A hair of slack keeps ratios such as
/// 0.3 of 10 from rounding up on representation error.
pub fn keep_for_ratio(ratio: f64, base: usize) -> Result<usize> {
    if !(ratio > 0.0) || ratio > 1.0 || !ratio.is_finite() {
        return Err(Error::Argument(format!("keep ratio {ratio} outside (0, 1]")));
    }
    Ok(((ratio * base as f64 - 1e-9).ceil() as usize).clamp(1, base))
}

/// Evaluates `seqs` with every routed expert cut, per token, to its top
/// `⌈ρ·base⌉` neurons by `|G|`. The base is the neurons an expert normally
/// uses: `d_expert` for MoE, `K_N` for MoNE. Weights are never touched.
pub fn prune_scan<T: Element>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    seqs: &[Vec<u32>],
    ratios: &[f64],
    model_id: &str,
    threads: usize,
) -> Result<PruneSweepResult> {
    if !cfg.layer_kind.is_routed() {
        return Err(Error::Mode("pruning sweeps need routed experts; model is dense_ffn".into()));
    }
    if ratios.is_empty() {
        return Err(Error::Argument("no keep ratios given".into()));
    }
    let base = cfg.active_neurons();
    let keeps = ratios.iter().map(|&r| keep_for_ratio(r, base)).collect::<Result<Vec<_>>>()?;
    let mut points = Vec::with_capacity(ratios.len());
    for (&ratio, &keep) in ratios.iter().zip(&keeps) {
        let override_keep = (keep < base).then_some(keep);
        let m = evaluate(params, cfg, seqs, override_keep, threads)?;
        points.push(PrunePoint {
            keep_ratio: ratio,
            keep_neurons: keep,
            ce_loss: m.ce_loss,
            accuracy: m.accuracy,
            tokens: m.tokens,
        });
    }
    Ok(PruneSweepResult {
        model_id: model_id.to_string(),
        base_neurons: base,
        points,
    })
}
