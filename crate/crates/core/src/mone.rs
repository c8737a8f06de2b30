//! Mixture of Neuron Experts.
//!
//! After the usual expert routing, every activated expert computes its full
//! gate vector `G`, keeps the `K_N` neurons with the largest `|G|`, and runs
//! the up/down projections on those rows and columns only. No router
//! parameters are added.
//!
//! The neuron-granular balance loss mirrors the expert-level one inside each
//! expert:
//!
//! ```text
//! L_NG = Σ_i α_NG · d_expert · Σ_k f̃[i,k] · P̃[i,k]
//! ```
//!
//! where `f̃[i,k]` is the fraction of the batch's tokens for which neuron `k`
//! of expert `i` was selected and `P̃[i,k]` its mean neuron score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experts::{glu_forward_into, ExpertWeights, NeuronPick};
use crate::numerics::{softmax_backward_acc, softmax_in_place, topk_indices, Activation, Element, Tensor};
use crate::routing::{
    aux_load_balance_loss, check_tokens, combine_token, route, ExpertLoadStats, MoeLayerWeights,
};

/// How a selected neuron contributes to `P̃`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeuronScore {
    /// Softmax over the selected gate values.
    #[default]
    Softmax,
    /// Raw `|G[k]|` of each selected neuron.
    AbsGate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoneConfig {
    /// `K_E`
    pub experts_per_token: usize,
    /// `K_N`, an absolute count per activated expert.
    pub neurons_per_expert: usize,
    pub internal_act: Activation,
    pub alpha_ng: f64,
    #[serde(default)]
    pub neuron_score: NeuronScore,
}

impl MoneConfig {
    pub fn validate(&self, n_experts: usize, d_expert: usize) -> Result<()> {
        if self.experts_per_token == 0 || self.experts_per_token > n_experts {
            return Err(Error::Config(format!(
                "experts_per_token={} must be in 1..={n_experts}",
                self.experts_per_token
            )));
        }
        if self.neurons_per_expert == 0 || self.neurons_per_expert > d_expert {
            return Err(Error::Config(format!(
                "neurons_per_expert={} must be in 1..={d_expert}",
                self.neurons_per_expert
            )));
        }
        if !(self.alpha_ng >= 0.0) {
            return Err(Error::Config("alpha_ng must be non-negative".into()));
        }
        Ok(())
    }
}

/// Absolute neuron count for a keep ratio of `d_expert` (rounded, at least 1).
pub fn neurons_for_ratio(ratio: f64, d_expert: usize) -> Result<usize> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Argument(format!("neuron ratio {ratio} outside (0, 1]")));
    }
    Ok(((ratio * d_expert as f64).round() as usize).clamp(1, d_expert))
}

/// Neurons kept for one (token, expert) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuronSelection<T: Element = f64> {
    /// Ascending neuron indices.
    pub neurons: Vec<usize>,
    /// `G` at those indices.
    pub gates: Vec<T>,
}

/// Top-`k` neurons of a gate vector by magnitude.
pub fn select_neurons<T: Element>(gate: &[T], k: usize) -> Result<NeuronSelection<T>> {
    if k > gate.len() {
        return Err(Error::Config(format!(
            "cannot select {k} neurons from an expert of {}",
            gate.len()
        )));
    }
    let neurons = topk_indices(gate, k, true)?;
    let gates = neurons.iter().map(|&i| gate[i]).collect();
    Ok(NeuronSelection { neurons, gates })
}

/// Per-neuron contribution to `P̃` for one (token, expert) pair.
pub fn neuron_scores<T: Element>(kind: NeuronScore, selected_gates: &[T]) -> Result<Vec<T>> {
    let mut q = selected_gates.to_vec();
    match kind {
        NeuronScore::Softmax => softmax_in_place(&mut q)?,
        NeuronScore::AbsGate => q.iter_mut().for_each(|v| *v = v.abs()),
    }
    Ok(q)
}

/// Pullback of [`neuron_scores`] onto the selected gate values.
pub fn neuron_scores_backward<T: Element>(kind: NeuronScore, selected_gates: &[T], scores: &[T], d_scores: &[T]) -> Vec<T> {
    let mut d = vec![T::zero(); selected_gates.len()];
    match kind {
        NeuronScore::Softmax => softmax_backward_acc(scores, d_scores, &mut d),
        NeuronScore::AbsGate => {
            for i in 0..d.len() {
                d[i] = selected_gates[i].signum() * d_scores[i];
            }
        }
    }
    d
}

/// Batch accumulators for the neuron-granular balance loss.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuronLoadStats<T: Element = f64> {
    pub n_experts: usize,
    pub d_expert: usize,
    /// `n_experts × d_expert` selection counts.
    pub select_counts: Vec<u64>,
    /// `n_experts × d_expert` sums of neuron scores.
    pub score_sums: Vec<T>,
    /// Tokens routed to each expert.
    pub expert_tokens: Vec<u64>,
    /// Tokens in the batch (the `T` both fractions divide by).
    pub tokens: u64,
}

impl<T: Element> NeuronLoadStats<T> {
    pub fn new(n_experts: usize, d_expert: usize) -> Self {
        Self {
            n_experts,
            d_expert,
            select_counts: vec![0; n_experts * d_expert],
            score_sums: vec![T::zero(); n_experts * d_expert],
            expert_tokens: vec![0; n_experts],
            tokens: 0,
        }
    }

    pub fn record(&mut self, expert: usize, neurons: &[usize], scores: &[T]) {
        let base = expert * self.d_expert;
        for (&k, &q) in neurons.iter().zip(scores) {
            self.select_counts[base + k] += 1;
            self.score_sums[base + k] = self.score_sums[base + k] + q;
        }
        self.expert_tokens[expert] += 1;
    }

    pub fn add_tokens(&mut self, n: u64) {
        self.tokens += n;
    }

    pub fn merge(&mut self, other: &Self) {
        for i in 0..self.select_counts.len() {
            self.select_counts[i] += other.select_counts[i];
            self.score_sums[i] = self.score_sums[i] + other.score_sums[i];
        }
        for i in 0..self.n_experts {
            self.expert_tokens[i] += other.expert_tokens[i];
        }
        self.tokens += other.tokens;
    }

    /// `f̃`, shaped `n_experts × d_expert`.
    pub fn dispatch_fraction(&self) -> Tensor<T> {
        let t = T::of_f64(self.tokens as f64);
        Tensor::from_fn(&[self.n_experts, self.d_expert], |i| T::of_f64(self.select_counts[i] as f64) / t)
    }

    /// `P̃`, shaped `n_experts × d_expert`.
    pub fn mean_score(&self) -> Tensor<T> {
        let t = T::of_f64(self.tokens as f64);
        Tensor::from_fn(&[self.n_experts, self.d_expert], |i| self.score_sums[i] / t)
    }
}

/// `Σ_i α_NG · d_expert · Σ_k f̃[i,k] · P̃[i,k]`
pub fn ng_lbl_loss<T: Element>(stats: &NeuronLoadStats<T>, alpha_ng: T, d_expert: usize) -> Result<T> {
    if stats.tokens == 0 {
        return Err(Error::EmptyBatch("neuron load statistics hold no tokens".into()));
    }
    if stats.d_expert != d_expert {
        return Err(Error::Dimension(format!(
            "stats cover {} neurons per expert, loss asked for {d_expert}",
            stats.d_expert
        )));
    }
    let f = stats.dispatch_fraction();
    let p = stats.mean_score();
    let scale = alpha_ng * T::of_f64(d_expert as f64);
    let mut total = T::zero();
    for i in 0..stats.n_experts {
        let inner = f.row(i).iter().zip(p.row(i)).fold(T::zero(), |acc, (a, b)| acc + *a * *b);
        total = total + scale * inner;
    }
    Ok(total)
}

/// `∂L_NG / ∂score` per (expert, neuron): `α_NG · d_expert · f̃[i,k] / T`.
pub fn ng_score_grad<T: Element>(stats: &NeuronLoadStats<T>, alpha_ng: T) -> Vec<T> {
    let scale = alpha_ng * T::of_f64(stats.d_expert as f64) / T::of_f64(stats.tokens.max(1) as f64);
    stats.dispatch_fraction().data().iter().map(|&f| scale * f).collect()
}

/// Expert-level loss plus, when neuron statistics exist, the neuron-level loss.
pub fn total_aux_loss<T: Element>(
    expert_stats: &ExpertLoadStats<T>,
    neuron_stats: Option<&NeuronLoadStats<T>>,
    alpha_aux: T,
    alpha_ng: T,
) -> Result<T> {
    let aux = aux_load_balance_loss(expert_stats, alpha_aux, expert_stats.n_experts())?;
    match neuron_stats {
        Some(ns) => Ok(aux + ng_lbl_loss(ns, alpha_ng, ns.d_expert)?),
        None => Ok(aux),
    }
}

/// One activated expert restricted to its top-`K_N` neurons.
pub fn mone_expert_forward<T: Element>(
    x: &Tensor<T>,
    w: &ExpertWeights<T>,
    cfg: &MoneConfig,
) -> Result<(Tensor<T>, NeuronSelection<T>)> {
    if cfg.neurons_per_expert > w.d_expert() {
        return Err(Error::Config(format!(
            "neurons_per_expert={} exceeds d_expert={}",
            cfg.neurons_per_expert,
            w.d_expert()
        )));
    }
    let mut y = vec![T::zero(); w.d_model()];
    let trace = glu_forward_into(x.data(), w, cfg.internal_act, NeuronPick::TopK(cfg.neurons_per_expert), &mut y)?;
    let gates = trace.selected_gates().collect();
    Ok((
        Tensor::from_vec(y),
        NeuronSelection {
            neurons: trace.neurons,
            gates,
        },
    ))
}

/// MoNE layer over a `T × d_model` batch; shared expert stays dense.
pub fn mone_layer_forward<T: Element>(
    x: &Tensor<T>,
    layer: &MoeLayerWeights<T>,
    cfg: &MoneConfig,
) -> Result<(Tensor<T>, ExpertLoadStats<T>, NeuronLoadStats<T>)> {
    layer.validate()?;
    cfg.validate(layer.n_experts(), layer.d_expert())?;
    let dm = layer.d_model();
    let t = check_tokens(x, dm)?;
    let mut out = Tensor::zeros(&[t, dm]);
    let mut expert_stats = ExpertLoadStats::new(layer.n_experts());
    let mut neuron_stats = NeuronLoadStats::new(layer.n_experts(), layer.d_expert());
    for ti in 0..t {
        let xt = x.row(ti);
        let decision = route(xt, &layer.router, cfg.experts_per_token, Activation::Softmax)?;
        let shared = match &layer.shared {
            Some(w) => {
                let mut y = vec![T::zero(); dm];
                glu_forward_into(xt, w, Activation::Silu, NeuronPick::All, &mut y)?;
                Some(y)
            }
            None => None,
        };
        let mut routed = Vec::with_capacity(decision.experts.len());
        for &i in &decision.experts {
            let mut y = vec![T::zero(); dm];
            let trace = glu_forward_into(
                xt,
                &layer.experts[i],
                cfg.internal_act,
                NeuronPick::TopK(cfg.neurons_per_expert),
                &mut y,
            )?;
            let gates: Vec<T> = trace.selected_gates().collect();
            neuron_stats.record(i, &trace.neurons, &neuron_scores(cfg.neuron_score, &gates)?);
            routed.push(y);
        }
        combine_token(shared.as_deref(), &decision.scores, &routed, out.row_mut(ti));
        expert_stats.record(&decision);
    }
    neuron_stats.add_tokens(t as u64);
    Ok((out, expert_stats, neuron_stats))
}
