//! Expert-level router, the traditional MoE layer and its auxiliary
//! load-balance loss.

use crate::error::{Error, Result};
use crate::experts::{glu_forward_into, ExpertWeights, NeuronPick};
use crate::numerics::{
    activate_in_place, activation_backward, axpy, init_weights, matvec, topk_indices, Activation,
    Element, Rng, Tensor,
};

/// Linear map from a hidden state to one logit per expert.
#[derive(Clone, Debug, PartialEq)]
pub struct RouterWeights<T: Element = f64> {
    /// `n_experts × d_model`
    pub weight: Tensor<T>,
}

impl<T: Element> RouterWeights<T> {
    pub fn new(weight: Tensor<T>) -> Result<Self> {
        if weight.shape().len() != 2 || weight.shape()[0] == 0 {
            return Err(Error::Dimension(format!("router weight shape {:?}", weight.shape())));
        }
        Ok(Self { weight })
    }

    pub fn init(n_experts: usize, d_model: usize, std: f64, rng: &mut Rng) -> Self {
        Self {
            weight: init_weights(&[n_experts, d_model], std, rng),
        }
    }

    pub fn n_experts(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn d_model(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Experts chosen for one token and their mixing scores.
#[derive(Clone, Debug, PartialEq)]
pub struct RoutingDecision<T: Element = f64> {
    /// Ascending expert indices.
    pub experts: Vec<usize>,
    /// Activated score for each selected expert, same order.
    pub scores: Vec<T>,
    /// Raw logits of the selected experts.
    pub logits: Vec<T>,
}

/// Top-k over router logits, then `act` over the surviving logits.
pub fn route<T: Element>(
    x: &[T],
    w: &RouterWeights<T>,
    k: usize,
    act: Activation,
) -> Result<RoutingDecision<T>> {
    let n = w.n_experts();
    if k == 0 || k > n {
        return Err(Error::Config(format!("experts per token {k} must be in 1..={n}")));
    }
    if x.len() != w.d_model() {
        return Err(Error::Dimension(format!(
            "router expects d_model={}, got {}",
            w.d_model(),
            x.len()
        )));
    }
    let mut all = vec![T::zero(); n];
    matvec(w.weight.data(), x, &mut all);
    route_from_logits(&all, k, act)
}

pub(crate) fn route_from_logits<T: Element>(all: &[T], k: usize, act: Activation) -> Result<RoutingDecision<T>> {
    let experts = topk_indices(all, k, false)?;
    route_fixed(all, experts, act)
}

pub(crate) fn route_fixed<T: Element>(all: &[T], experts: Vec<usize>, act: Activation) -> Result<RoutingDecision<T>> {
    let logits: Vec<T> = experts.iter().map(|&i| all[i]).collect();
    let mut scores = logits.clone();
    activate_in_place(act, &mut scores)?;
    Ok(RoutingDecision {
        experts,
        scores,
        logits,
    })
}

/// Reverse pass of [`route`] with selection held fixed.
pub fn route_backward<T: Element>(
    x: &[T],
    w: &RouterWeights<T>,
    act: Activation,
    decision: &RoutingDecision<T>,
    d_scores: &[T],
    grad: &mut RouterWeights<T>,
    dx: &mut [T],
) {
    let mut d_logits = vec![T::zero(); decision.experts.len()];
    activation_backward(act, &decision.logits, &decision.scores, d_scores, &mut d_logits);
    for (&i, &dl) in decision.experts.iter().zip(&d_logits) {
        axpy(dl, x, grad.weight.row_mut(i));
        axpy(dl, w.weight.row(i), dx);
    }
}

/// Batch accumulators for the expert-level balance loss.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertLoadStats<T: Element = f64> {
    /// Tokens that selected each expert.
    pub dispatch_counts: Vec<u64>,
    /// Sum of each expert's activated score (zero where unselected).
    pub score_sums: Vec<T>,
    pub tokens: u64,
}

impl<T: Element> ExpertLoadStats<T> {
    pub fn new(n_experts: usize) -> Self {
        Self {
            dispatch_counts: vec![0; n_experts],
            score_sums: vec![T::zero(); n_experts],
            tokens: 0,
        }
    }

    pub fn n_experts(&self) -> usize {
        self.dispatch_counts.len()
    }

    pub fn record(&mut self, d: &RoutingDecision<T>) {
        for (&i, &s) in d.experts.iter().zip(&d.scores) {
            self.dispatch_counts[i] += 1;
            self.score_sums[i] = self.score_sums[i] + s;
        }
        self.tokens += 1;
    }

    pub fn merge(&mut self, other: &Self) {
        for i in 0..self.n_experts() {
            self.dispatch_counts[i] += other.dispatch_counts[i];
            self.score_sums[i] = self.score_sums[i] + other.score_sums[i];
        }
        self.tokens += other.tokens;
    }

    /// `f_i`: fraction of tokens dispatched to expert `i`.
    pub fn dispatch_fraction(&self) -> Vec<T> {
        let t = T::of_f64(self.tokens as f64);
        self.dispatch_counts.iter().map(|&c| T::of_f64(c as f64) / t).collect()
    }

    /// `P_i`: mean activated score of expert `i` over the batch.
    pub fn mean_score(&self) -> Vec<T> {
        let t = T::of_f64(self.tokens as f64);
        self.score_sums.iter().map(|&s| s / t).collect()
    }
}

/// `α · N_E · Σ_i f_i · P_i`
pub fn aux_load_balance_loss<T: Element>(stats: &ExpertLoadStats<T>, alpha_aux: T, n_experts: usize) -> Result<T> {
    if stats.tokens == 0 {
        return Err(Error::EmptyBatch("expert load statistics hold no tokens".into()));
    }
    if stats.n_experts() != n_experts {
        return Err(Error::Dimension(format!(
            "stats cover {} experts, loss asked for {n_experts}",
            stats.n_experts()
        )));
    }
    let sum = stats
        .dispatch_fraction()
        .iter()
        .zip(stats.mean_score())
        .fold(T::zero(), |acc, (f, p)| acc + *f * p);
    Ok(alpha_aux * T::of_f64(n_experts as f64) * sum)
}

/// `∂L_aux / ∂score` for a token routed to expert `i`: `α · N_E · f_i / T`.
/// Dispatch fractions are treated as constants.
pub fn aux_score_grad<T: Element>(stats: &ExpertLoadStats<T>, alpha_aux: T) -> Vec<T> {
    let n = T::of_f64(stats.n_experts() as f64);
    let t = T::of_f64(stats.tokens.max(1) as f64);
    stats
        .dispatch_fraction()
        .into_iter()
        .map(|f| alpha_aux * n * f / t)
        .collect()
}

/// Router, routed experts and an optional shared expert.
#[derive(Clone, Debug, PartialEq)]
pub struct MoeLayerWeights<T: Element = f64> {
    pub router: RouterWeights<T>,
    pub experts: Vec<ExpertWeights<T>>,
    pub shared: Option<ExpertWeights<T>>,
}

impl<T: Element> MoeLayerWeights<T> {
    pub fn new(router: RouterWeights<T>, experts: Vec<ExpertWeights<T>>, shared: Option<ExpertWeights<T>>) -> Result<Self> {
        let layer = Self { router, experts, shared };
        layer.validate()?;
        Ok(layer)
    }

    pub fn init(
        d_model: usize,
        d_expert: usize,
        n_experts: usize,
        shared: bool,
        std: f64,
        rng: &mut Rng,
    ) -> Self {
        let router = RouterWeights::init(n_experts, d_model, std, rng);
        let experts = (0..n_experts)
            .map(|_| ExpertWeights::init(d_model, d_expert, std, rng))
            .collect();
        let shared = shared.then(|| ExpertWeights::init(d_model, d_expert, std, rng));
        Self { router, experts, shared }
    }

    pub fn validate(&self) -> Result<()> {
        let dm = self.router.d_model();
        if self.experts.len() != self.router.n_experts() {
            return Err(Error::Dimension(format!(
                "router scores {} experts but {} are present",
                self.router.n_experts(),
                self.experts.len()
            )));
        }
        let de = self.experts.first().map(|e| e.d_expert());
        for e in self.experts.iter().chain(&self.shared) {
            if e.d_model() != dm || Some(e.d_expert()) != de {
                return Err(Error::Dimension("experts disagree on d_model/d_expert".into()));
            }
        }
        Ok(())
    }

    pub fn n_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn d_model(&self) -> usize {
        self.router.d_model()
    }

    pub fn d_expert(&self) -> usize {
        self.experts[0].d_expert()
    }

    pub fn param_count(&self) -> usize {
        self.router.weight.len()
            + self.experts.iter().chain(&self.shared).map(ExpertWeights::param_count).sum::<usize>()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            router: RouterWeights {
                weight: self.router.weight.zeros_like(),
            },
            experts: self.experts.iter().map(ExpertWeights::zeros_like).collect(),
            shared: self.shared.as_ref().map(ExpertWeights::zeros_like),
        }
    }
}

/// Shared output plus score-weighted routed outputs, in routing order.
pub(crate) fn combine_token<T: Element>(shared: Option<&[T]>, scores: &[T], routed: &[Vec<T>], out: &mut [T]) {
    match shared {
        Some(s) => out.copy_from_slice(s),
        None => out.fill(T::zero()),
    }
    for (&p, y) in scores.iter().zip(routed) {
        axpy(p, y, out);
    }
}

pub(crate) fn check_tokens<T: Element>(x: &Tensor<T>, d_model: usize) -> Result<usize> {
    if x.shape().len() != 2 || x.shape()[1] != d_model {
        return Err(Error::Dimension(format!(
            "layer input must be T×{d_model}, got {:?}",
            x.shape()
        )));
    }
    Ok(x.shape()[0])
}

/// Traditional MoE layer with softmax routing over the top-`k` logits.
pub fn moe_layer_forward<T: Element>(
    x: &Tensor<T>,
    layer: &MoeLayerWeights<T>,
    experts_per_token: usize,
    internal_act: Activation,
) -> Result<(Tensor<T>, ExpertLoadStats<T>)> {
    layer.validate()?;
    let dm = layer.d_model();
    let t = check_tokens(x, dm)?;
    let mut out = Tensor::zeros(&[t, dm]);
    let mut stats = ExpertLoadStats::new(layer.n_experts());
    for ti in 0..t {
        let xt = x.row(ti);
        let decision = route(xt, &layer.router, experts_per_token, Activation::Softmax)?;
        let shared = match &layer.shared {
            Some(w) => {
                let mut y = vec![T::zero(); dm];
                glu_forward_into(xt, w, Activation::Silu, NeuronPick::All, &mut y)?;
                Some(y)
            }
            None => None,
        };
        let routed = decision
            .experts
            .iter()
            .map(|&i| {
                let mut y = vec![T::zero(); dm];
                glu_forward_into(xt, &layer.experts[i], internal_act, NeuronPick::All, &mut y)?;
                Ok(y)
            })
            .collect::<Result<Vec<_>>>()?;
        combine_token(shared.as_deref(), &decision.scores, &routed, out.row_mut(ti));
        stats.record(&decision);
    }
    Ok((out, stats))
}
