use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{forward_seq, LayerKind, ModelConfig, ModelParams};
use crate::mone::NeuronLoadStats;
use crate::numerics::Element;

use super::report::num;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BalanceReport {
    pub tokens: u64,
    /// `[layer][expert]` population variance over neurons of `f̃`.
    pub variance: Vec<Vec<f64>>,
    /// Mean of `variance` over all layers and experts.
    pub mean_variance: f64,
}

impl BalanceReport {
    pub const CSV_HEADER: [&'static str; 3] = ["layer", "expert", "variance"];

    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        let mut rows = Vec::new();
        for (l, per) in self.variance.iter().enumerate() {
            for (e, v) in per.iter().enumerate() {
                rows.push(vec![l.to_string(), e.to_string(), num(*v)]);
            }
        }
        rows
    }
}

/// `Var_k f̃[i,k]` for each expert `i`.
pub fn fraction_variance<T: Element>(stats: &NeuronLoadStats<T>) -> Vec<f64> {
    let f = stats.dispatch_fraction();
    (0..stats.n_experts)
        .map(|i| {
            let row = f.row(i);
            let n = row.len() as f64;
            let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / n;
            row.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / n
        })
        .collect()
}

/// Neuron-dispatch variance per layer and expert over a whole dataset.
pub fn load_balance_variance<T: Element>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    seqs: &[Vec<u32>],
) -> Result<BalanceReport> {
    if cfg.layer_kind != LayerKind::Mone {
        return Err(Error::Mode(format!(
            "neuron load balance needs a mone model, got {}",
            cfg.layer_kind.name()
        )));
    }
    if seqs.iter().all(|s| s.is_empty()) {
        return Err(Error::EmptyInput("no tokens to accumulate".into()));
    }
    let mut acc: Vec<NeuronLoadStats<T>> = (0..cfg.n_layers).map(|_| NeuronLoadStats::new(cfg.n_experts, cfg.d_expert)).collect();
    let mut tokens = 0u64;
    for s in seqs.iter().filter(|s| !s.is_empty()) {
        let f = forward_seq(params, cfg, s, None, None)?;
        tokens += s.len() as u64;
        for (a, ns) in acc.iter_mut().zip(&f.neuron_stats) {
            a.merge(ns.as_ref().expect("mone layers keep neuron stats"));
        }
    }
    let variance: Vec<Vec<f64>> = acc.iter().map(fraction_variance).collect();
    let count = variance.iter().map(Vec::len).sum::<usize>().max(1);
    let mean_variance = variance.iter().flatten().sum::<f64>() / count as f64;
    Ok(BalanceReport {
        tokens,
        variance,
        mean_variance,
    })
}
