use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{forward_seq, ModelConfig, ModelParams};
use crate::numerics::Element;

use super::report::num;

pub const HISTOGRAM_BINS: usize = 64;
pub const DEFAULT_NEAR_ZERO: f64 = 0.01;

/// Fixed-bin histogram over `[lo, hi]`; the last bin is closed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Spans the observed range of `values`. A zero-width range puts
    /// everything in the first bin.
    pub fn of(values: &[f64], bins: usize) -> Self {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if values.is_empty() { (0.0, 0.0) } else { (lo, hi) };
        let mut counts = vec![0u64; bins];
        let width = hi - lo;
        for &v in values {
            let b = if width > 0.0 {
                (((v - lo) / width) * bins as f64) as usize
            } else {
                0
            };
            counts[b.min(bins - 1)] += 1;
        }
        Self { lo, hi, counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerActivation {
    pub layer: usize,
    /// Histogram of every gate value `G` of every activated expert.
    pub histogram: Histogram,
    /// Gate evaluations counted (tokens × activated experts × d_expert).
    pub gate_values: u64,
    /// Median `|G|` over the neurons actually used.
    pub median_selected_abs: f64,
    /// Share of all `|G|` strictly below the near-zero threshold.
    pub frac_near_zero: f64,
    /// Fraction of tokens that activated each expert.
    pub expert_frequency: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ActivationReport {
    pub near_zero_threshold: f64,
    pub tokens: u64,
    pub layers: Vec<LayerActivation>,
}

impl ActivationReport {
    pub const CSV_HEADER: [&'static str; 6] = ["layer", "bin", "lo", "hi", "count", "median_selected_abs"];

    /// One row per histogram bin.
    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        let mut rows = Vec::new();
        for l in &self.layers {
            let h = &l.histogram;
            let width = (h.hi - h.lo) / h.counts.len() as f64;
            for (b, c) in h.counts.iter().enumerate() {
                rows.push(vec![
                    l.layer.to_string(),
                    b.to_string(),
                    num(h.lo + width * b as f64),
                    num(h.lo + width * (b + 1) as f64),
                    c.to_string(),
                    num(l.median_selected_abs),
                ]);
            }
        }
        rows
    }
}

pub(crate) fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let n = v.len();
    let mid = n / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let m = *m;
    if n % 2 == 1 {
        m
    } else {
        let lower = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + m)
    }
}

/// Gate statistics of every activated expert (or the dense FFN) per layer.
pub fn activation_stats<T: Element>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    seqs: &[Vec<u32>],
    near_zero: f64,
) -> Result<ActivationReport> {
    if seqs.iter().all(|s| s.is_empty()) {
        return Err(Error::EmptyInput("no tokens to collect activations from".into()));
    }
    if !(near_zero >= 0.0) {
        return Err(Error::Argument("near-zero threshold must be non-negative".into()));
    }
    let n_layers = cfg.n_layers;
    let n_experts = if cfg.layer_kind.is_routed() { cfg.n_experts } else { 1 };
    let mut all: Vec<Vec<f64>> = vec![Vec::new(); n_layers];
    let mut selected: Vec<Vec<f64>> = vec![Vec::new(); n_layers];
    let mut hits = vec![vec![0u64; n_experts]; n_layers];
    let mut tokens = 0u64;
    for s in seqs.iter().filter(|s| !s.is_empty()) {
        let f = forward_seq(params, cfg, s, None, None)?;
        tokens += s.len() as u64;
        for (l, layer) in f.cache.layers.iter().enumerate() {
            for tf in &layer.ffn {
                let experts = tf.decision.as_ref().map(|d| d.experts.clone()).unwrap_or_else(|| vec![0]);
                for (&e, tr) in experts.iter().zip(&tf.traces) {
                    hits[l][e] += 1;
                    all[l].extend(tr.gate.iter().map(|g| g.as_f64()));
                    selected[l].extend(tr.selected_gates().map(|g| g.as_f64().abs()));
                }
            }
        }
    }
    let layers = (0..n_layers)
        .map(|l| {
            let values = std::mem::take(&mut all[l]);
            let below = values.iter().filter(|v| v.abs() < near_zero).count();
            LayerActivation {
                layer: l,
                histogram: Histogram::of(&values, HISTOGRAM_BINS),
                gate_values: values.len() as u64,
                median_selected_abs: median(std::mem::take(&mut selected[l])),
                frac_near_zero: below as f64 / values.len().max(1) as f64,
                expert_frequency: hits[l].iter().map(|&h| h as f64 / tokens as f64).collect(),
            }
        })
        .collect();
    Ok(ActivationReport {
        near_zero_threshold: near_zero,
        tokens,
        layers,
    })
}
