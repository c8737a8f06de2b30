//! Causal LM forward pass, with the per-token caches the backward pass and
//! the analyses read.

use std::thread;

use crate::error::{Error, Result};
use crate::experts::{glu_forward_into, GluTrace, NeuronPick};
use crate::mone::{neuron_scores, MoneConfig, NeuronLoadStats};
use crate::numerics::{axpy, dot, matvec, softmax_in_place, Activation, Element, Tensor};
use crate::routing::{combine_token, route, route_fixed, ExpertLoadStats, RoutingDecision};
use crate::mone::total_aux_loss;

use super::config::ModelConfig;
use super::params::{Ffn, LayerParams, ModelParams};

pub(crate) const NORM_EPS: f64 = 1e-5;

/// Experts and neurons one token used in one layer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TokenRoute {
    pub experts: Vec<usize>,
    /// Neuron indices per selected expert, same order as `experts`.
    pub neurons: Vec<Vec<usize>>,
}

/// Routes of one sequence, indexed `[layer][position]`.
pub type SeqRoutes = Vec<Vec<TokenRoute>>;

#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions<'a> {
    /// Neurons kept per routed expert and token, replacing the configured
    /// count. Shared and dense FFNs are never restricted.
    pub neuron_keep: Option<usize>,
    /// Selections to reuse, one entry per sequence, instead of recomputing
    /// the top-k choices.
    pub replay: Option<&'a [SeqRoutes]>,
}

/// FFN state of one token in one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenFfn<T: Element = f64> {
    pub decision: Option<RoutingDecision<T>>,
    pub shared: Option<GluTrace<T>>,
    /// One trace per selected expert in routing order, or the single dense FFN trace.
    pub traces: Vec<GluTrace<T>>,
    /// Unweighted output of each selected expert.
    pub outputs: Vec<Vec<T>>,
    /// Neuron scores per selected expert (MoNE layers only).
    pub neuron_scores: Vec<Vec<T>>,
}

impl<T: Element> TokenFfn<T> {
    pub fn route(&self) -> TokenRoute {
        TokenRoute {
            experts: self.decision.as_ref().map(|d| d.experts.clone()).unwrap_or_default(),
            neurons: self.traces.iter().map(|t| t.neurons.clone()).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerCache<T: Element = f64> {
    pub(crate) x_in: Tensor<T>,
    pub(crate) r1: Vec<T>,
    pub(crate) h1: Tensor<T>,
    pub(crate) q: Tensor<T>,
    pub(crate) k: Tensor<T>,
    pub(crate) v: Tensor<T>,
    /// `heads × L × L` attention weights, zero above the diagonal.
    pub(crate) probs: Vec<T>,
    pub(crate) ctx: Tensor<T>,
    pub(crate) x_mid: Tensor<T>,
    pub(crate) r2: Vec<T>,
    pub(crate) h2: Tensor<T>,
    pub ffn: Vec<TokenFfn<T>>,
}

#[derive(Clone, Debug)]
pub struct SeqCache<T: Element = f64> {
    pub tokens: Vec<u32>,
    pub layers: Vec<LayerCache<T>>,
    pub(crate) x_out: Tensor<T>,
    pub(crate) rf: Vec<T>,
    pub(crate) hf: Tensor<T>,
    pub logits: Tensor<T>,
}

impl<T: Element> SeqCache<T> {
    pub fn routes(&self) -> SeqRoutes {
        self.layers.iter().map(|l| l.ffn.iter().map(TokenFfn::route).collect()).collect()
    }
}

/// Forward result of one sequence.
#[derive(Clone, Debug)]
pub struct SeqForward<T: Element = f64> {
    pub cache: SeqCache<T>,
    /// Per layer; `None` for dense FFN layers.
    pub expert_stats: Vec<Option<ExpertLoadStats<T>>>,
    /// Per layer; `Some` only for MoNE layers.
    pub neuron_stats: Vec<Option<NeuronLoadStats<T>>>,
    /// Summed next-token cross-entropy.
    pub ce_sum: f64,
    pub correct: u64,
    pub n_targets: u64,
}

/// Forward result of a batch of sequences; losses use batch-level statistics.
#[derive(Clone, Debug)]
pub struct BatchForward<T: Element = f64> {
    pub seqs: Vec<SeqForward<T>>,
    pub expert_stats: Vec<Option<ExpertLoadStats<T>>>,
    pub neuron_stats: Vec<Option<NeuronLoadStats<T>>>,
    /// Mean over all targets in the batch.
    pub ce_loss: f64,
    /// Balance losses summed over layers.
    pub aux_loss: f64,
    pub n_targets: u64,
    pub correct: u64,
}

/// Maps `f` over `items` on up to `threads` scoped threads; output order
/// follows input order regardless of thread count.
pub(crate) fn par_map<I, O, F>(items: &[I], threads: usize, f: F) -> Vec<O>
where
    I: Sync,
    O: Send,
    F: Fn(usize, &I) -> O + Sync,
{
    let n = items.len();
    let threads = threads.clamp(1, n.max(1));
    if threads == 1 {
        return items.iter().enumerate().map(|(i, x)| f(i, x)).collect();
    }
    let chunk = n.div_ceil(threads);
    let mut slots: Vec<Option<O>> = (0..n).map(|_| None).collect();
    let f = &f;
    thread::scope(|s| {
        for (c, part) in slots.chunks_mut(chunk).enumerate() {
            s.spawn(move || {
                for (j, slot) in part.iter_mut().enumerate() {
                    let i = c * chunk + j;
                    *slot = Some(f(i, &items[i]));
                }
            });
        }
    });
    slots.into_iter().map(|o| o.expect("filled by worker")).collect()
}

/// `Y = X·Wᵀ` for `X` of shape `L × in` and `W` of shape `out × in`.
pub(crate) fn linear<T: Element>(x: &Tensor<T>, w: &Tensor<T>) -> Tensor<T> {
    let l = x.rows();
    let mut y = Tensor::zeros(&[l, w.rows()]);
    for t in 0..l {
        matvec(w.data(), x.row(t), y.row_mut(t));
    }
    y
}

/// RMS-normalizes `x` into `out`; returns the inverse RMS.
pub(crate) fn rms_row<T: Element>(x: &[T], gain: &[T], out: &mut [T]) -> T {
    let d = T::of_f64(x.len() as f64);
    let r = T::one() / (dot(x, x) / d + T::of_f64(NORM_EPS)).sqrt();
    for ((o, &xi), &g) in out.iter_mut().zip(x).zip(gain) {
        *o = xi * r * g;
    }
    r
}

fn rmsnorm<T: Element>(x: &Tensor<T>, gain: &Tensor<T>) -> (Tensor<T>, Vec<T>) {
    let mut h = x.zeros_like();
    let r = (0..x.rows()).map(|t| rms_row(x.row(t), gain.data(), h.row_mut(t))).collect();
    (h, r)
}

/// Causal attention of query position `t` over cached keys/values `0..=t`.
/// Writes the weights of each head into `probs[h][..=t]` and the context into `ctx`.
pub(crate) fn attend_row<T: Element>(
    q: &[T],
    keys: &Tensor<T>,
    values: &Tensor<T>,
    t: usize,
    n_heads: usize,
    probs: &mut [Vec<T>],
    ctx: &mut [T],
) -> Result<()> {
    let hd = q.len() / n_heads;
    let scale = T::one() / T::of_f64(hd as f64).sqrt();
    ctx.fill(T::zero());
    for h in 0..n_heads {
        let span = h * hd..(h + 1) * hd;
        let qh = &q[span.clone()];
        let p = &mut probs[h][..=t];
        for (j, pj) in p.iter_mut().enumerate() {
            *pj = dot(qh, &keys.row(j)[span.clone()]) * scale;
        }
        softmax_in_place(p)?;
        let c = &mut ctx[span.clone()];
        for (j, &pj) in p.iter().enumerate() {
            axpy(pj, &values.row(j)[span.clone()], c);
        }
    }
    Ok(())
}

/// FFN of one token; writes the block output into `out`.
pub(crate) fn ffn_token<T: Element>(
    ffn: &Ffn<T>,
    cfg: &ModelConfig,
    mone: Option<&MoneConfig>,
    x: &[T],
    keep: Option<usize>,
    replay: Option<&TokenRoute>,
    out: &mut [T],
) -> Result<TokenFfn<T>> {
    let dm = x.len();
    match ffn {
        Ffn::Dense(w) => {
            let trace = glu_forward_into(x, w, Activation::Silu, NeuronPick::All, out)?;
            Ok(TokenFfn {
                decision: None,
                shared: None,
                traces: vec![trace],
                outputs: Vec::new(),
                neuron_scores: Vec::new(),
            })
        }
        Ffn::Routed(m) => {
            let decision = match replay {
                Some(r) => {
                    let mut all = vec![T::zero(); m.n_experts()];
                    matvec(m.router.weight.data(), x, &mut all);
                    route_fixed(&all, r.experts.clone(), Activation::Softmax)?
                }
                None => route(x, &m.router, cfg.experts_per_token, Activation::Softmax)?,
            };
            let shared_out = match &m.shared {
                Some(w) => {
                    let mut y = vec![T::zero(); dm];
                    let tr = glu_forward_into(x, w, Activation::Silu, NeuronPick::All, &mut y)?;
                    Some((tr, y))
                }
                None => None,
            };
            let de = m.d_expert();
            let mut traces = Vec::with_capacity(decision.experts.len());
            let mut outputs = Vec::with_capacity(decision.experts.len());
            let mut scores = Vec::new();
            for (j, &i) in decision.experts.iter().enumerate() {
                let pick = match (replay, keep, mone) {
                    (Some(r), _, _) => NeuronPick::Fixed(&r.neurons[j]),
                    (None, Some(k), _) => NeuronPick::TopK(k.clamp(1, de)),
                    (None, None, Some(mc)) => NeuronPick::TopK(mc.neurons_per_expert),
                    (None, None, None) => NeuronPick::All,
                };
                let mut y = vec![T::zero(); dm];
                let tr = glu_forward_into(x, &m.experts[i], cfg.internal_act, pick, &mut y)?;
                if let Some(mc) = mone {
                    let gates: Vec<T> = tr.selected_gates().collect();
                    scores.push(neuron_scores(mc.neuron_score, &gates)?);
                }
                traces.push(tr);
                outputs.push(y);
            }
            combine_token(shared_out.as_ref().map(|(_, y)| y.as_slice()), &decision.scores, &outputs, out);
            Ok(TokenFfn {
                decision: Some(decision),
                shared: shared_out.map(|(t, _)| t),
                traces,
                outputs,
                neuron_scores: scores,
            })
        }
    }
}

pub(crate) fn check_tokens(tokens: &[u32], cfg: &ModelConfig) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::EmptyInput("token sequence is empty".into()));
    }
    if tokens.len() > cfg.seq_len {
        return Err(Error::Input(format!(
            "sequence of {} tokens exceeds seq_len={}",
            tokens.len(),
            cfg.seq_len
        )));
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(Error::Input(format!("token {bad} outside vocabulary of {}", cfg.vocab_size)));
    }
    Ok(())
}

fn layer_forward<T: Element>(
    lp: &LayerParams<T>,
    cfg: &ModelConfig,
    mone: Option<&MoneConfig>,
    x: Tensor<T>,
    keep: Option<usize>,
    replay: Option<&[TokenRoute]>,
) -> Result<(LayerCache<T>, Tensor<T>, Option<ExpertLoadStats<T>>, Option<NeuronLoadStats<T>>)> {
    let l = x.rows();
    let dm = cfg.d_model;
    let (h1, r1) = rmsnorm(&x, &lp.attn_norm);
    let q = linear(&h1, &lp.wq);
    let k = linear(&h1, &lp.wk);
    let v = linear(&h1, &lp.wv);
    let mut probs = vec![T::zero(); cfg.n_heads * l * l];
    let mut ctx = Tensor::zeros(&[l, dm]);
    let mut rows: Vec<Vec<T>> = vec![vec![T::zero(); l]; cfg.n_heads];
    for t in 0..l {
        attend_row(q.row(t), &k, &v, t, cfg.n_heads, &mut rows, ctx.row_mut(t))?;
        for (h, row) in rows.iter().enumerate() {
            probs[(h * l + t) * l..(h * l + t) * l + t + 1].copy_from_slice(&row[..=t]);
        }
    }
    let a = linear(&ctx, &lp.wo);
    let mut x_mid = x.clone();
    for (m, av) in x_mid.data_mut().iter_mut().zip(a.data()) {
        *m = *m + *av;
    }
    let (h2, r2) = rmsnorm(&x_mid, &lp.ffn_norm);

    let mut x_out = x_mid.clone();
    let mut ffn = Vec::with_capacity(l);
    let (mut es, mut ns) = match &lp.ffn {
        Ffn::Dense(_) => (None, None),
        Ffn::Routed(m) => (
            Some(ExpertLoadStats::new(m.n_experts())),
            mone.map(|_| NeuronLoadStats::new(m.n_experts(), m.d_expert())),
        ),
    };
    let mut y = vec![T::zero(); dm];
    for t in 0..l {
        let tf = ffn_token(&lp.ffn, cfg, mone, h2.row(t), keep, replay.map(|r| &r[t]), &mut y)?;
        axpy(T::one(), &y, x_out.row_mut(t));
        if let (Some(es), Some(d)) = (es.as_mut(), tf.decision.as_ref()) {
            es.record(d);
            if let Some(ns) = ns.as_mut() {
                for ((&i, tr), q) in d.experts.iter().zip(&tf.traces).zip(&tf.neuron_scores) {
                    ns.record(i, &tr.neurons, q);
                }
            }
        }
        ffn.push(tf);
    }
    if let Some(ns) = ns.as_mut() {
        ns.add_tokens(l as u64);
    }
    let cache = LayerCache {
        x_in: x,
        r1,
        h1,
        q,
        k,
        v,
        probs,
        ctx,
        x_mid,
        r2,
        h2,
        ffn,
    };
    Ok((cache, x_out, es, ns))
}

/// Log-softmax cross-entropy of `target` under `logits`, and whether the
/// arg-max (lowest index on ties) hits it.
pub(crate) fn token_ce<T: Element>(logits: &[T], target: usize) -> (f64, bool) {
    let mut best = 0;
    let mut max = f64::NEG_INFINITY;
    for (i, v) in logits.iter().enumerate() {
        let v = v.as_f64();
        if v > max {
            max = v;
            best = i;
        }
    }
    let lse = max + logits.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln();
    (lse - logits[target].as_f64(), best == target)
}

/// Forward pass of one sequence with full caches.
pub fn forward_seq<T: Element>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    tokens: &[u32],
    keep: Option<usize>,
    replay: Option<&SeqRoutes>,
) -> Result<SeqForward<T>> {
    check_tokens(tokens, cfg)?;
    if keep == Some(0) {
        return Err(Error::Argument("neuron keep count must be at least 1".into()));
    }
    let mone = cfg.mone_config();
    let l = tokens.len();
    let dm = cfg.d_model;
    let mut x = Tensor::zeros(&[l, dm]);
    for (t, &tok) in tokens.iter().enumerate() {
        let row = x.row_mut(t);
        row.copy_from_slice(params.tok_emb.row(tok as usize));
        axpy(T::one(), params.pos_emb.row(t), row);
    }
    let mut layers = Vec::with_capacity(cfg.n_layers);
    let mut expert_stats = Vec::with_capacity(cfg.n_layers);
    let mut neuron_stats = Vec::with_capacity(cfg.n_layers);
    for (li, lp) in params.layers.iter().enumerate() {
        let rep = replay.map(|r| r[li].as_slice());
        let (cache, next, es, ns) = layer_forward(lp, cfg, mone.as_ref(), x, keep, rep)?;
        layers.push(cache);
        expert_stats.push(es);
        neuron_stats.push(ns);
        x = next;
    }
    let (hf, rf) = rmsnorm(&x, &params.final_norm);
    let logits = linear(&hf, &params.tok_emb);
    if !logits.all_finite() {
        return Err(Error::Numeric("logits".into()));
    }
    let mut ce_sum = 0.0;
    let mut correct = 0;
    for t in 0..l - 1 {
        let (ce, hit) = token_ce(logits.row(t), tokens[t + 1] as usize);
        ce_sum += ce;
        correct += hit as u64;
    }
    Ok(SeqForward {
        cache: SeqCache {
            tokens: tokens.to_vec(),
            layers,
            x_out: x,
            rf,
            hf,
            logits,
        },
        expert_stats,
        neuron_stats,
        ce_sum,
        correct,
        n_targets: (l - 1) as u64,
    })
}

/// Balance losses summed over layers.
pub(crate) fn aux_sum<T: Element>(
    cfg: &ModelConfig,
    expert_stats: &[Option<ExpertLoadStats<T>>],
    neuron_stats: &[Option<NeuronLoadStats<T>>],
) -> Result<f64> {
    let mut total = 0.0;
    for (es, ns) in expert_stats.iter().zip(neuron_stats) {
        if let Some(es) = es {
            total += total_aux_loss(es, ns.as_ref(), T::of_f64(cfg.alpha_aux), T::of_f64(cfg.alpha_ng()))?.as_f64();
        }
    }
    Ok(total)
}

/// Logits, mean next-token cross-entropy and summed balance losses of one sequence.
pub fn lm_forward<T: Element>(tokens: &[u32], cfg: &ModelConfig, params: &ModelParams<T>) -> Result<(Tensor<T>, f64, f64)> {
    if tokens.len() < 2 {
        return Err(Error::EmptyInput("need at least two tokens for a next-token loss".into()));
    }
    let f = forward_seq(params, cfg, tokens, None, None)?;
    let aux = aux_sum(cfg, &f.expert_stats, &f.neuron_stats)?;
    let ce = f.ce_sum / f.n_targets as f64;
    Ok((f.cache.logits, ce, aux))
}

/// Forward pass over a batch. Balance statistics pool every token of every sequence.
pub fn batch_forward<T: Element>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    seqs: &[Vec<u32>],
    opts: ForwardOptions<'_>,
    threads: usize,
) -> Result<BatchForward<T>> {
    if seqs.is_empty() {
        return Err(Error::EmptyBatch("no sequences".into()));
    }
    if let Some(r) = opts.replay {
        if r.len() != seqs.len() {
            return Err(Error::Argument("replay routes do not match the batch".into()));
        }
    }
    if let Some(s) = seqs.iter().find(|s| s.len() < 2) {
        return Err(Error::Input(format!("sequence of length {} has no target", s.len())));
    }
    let results = par_map(seqs, threads, |i, s| {
        forward_seq(params, cfg, s, opts.neuron_keep, opts.replay.map(|r| &r[i]))
    });
    let seqs = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mut expert_stats = seqs[0].expert_stats.clone();
    let mut neuron_stats = seqs[0].neuron_stats.clone();
    for s in &seqs[1..] {
        for (acc, x) in expert_stats.iter_mut().zip(&s.expert_stats) {
            if let (Some(a), Some(x)) = (acc.as_mut(), x) {
                a.merge(x);
            }
        }
        for (acc, x) in neuron_stats.iter_mut().zip(&s.neuron_stats) {
            if let (Some(a), Some(x)) = (acc.as_mut(), x) {
                a.merge(x);
            }
        }
    }
    let n_targets: u64 = seqs.iter().map(|s| s.n_targets).sum();
    let ce_loss = seqs.iter().map(|s| s.ce_sum).sum::<f64>() / n_targets as f64;
    let correct = seqs.iter().map(|s| s.correct).sum();
    let aux_loss = aux_sum(cfg, &expert_stats, &neuron_stats)?;
    Ok(BatchForward {
        seqs,
        expert_stats,
        neuron_stats,
        ce_loss,
        aux_loss,
        n_targets,
        correct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::{LayerKind, MoneSection};
    use crate::numerics::DType;

    pub(crate) fn tiny(kind: LayerKind) -> ModelConfig {
        ModelConfig {
            vocab_size: 11,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_expert: 4,
            n_experts: 4,
            layer_kind: kind,
            experts_per_token: 2,
            internal_act: Activation::Silu,
            shared_expert: true,
            alpha_aux: 0.01,
            seq_len: 6,
            seed: 3,
            dtype: DType::F64,
            init_std: 0.3,
            mone: (kind == LayerKind::Mone).then(|| MoneSection {
                neurons_per_expert: 2,
                alpha_ng: 0.01,
                neuron_score: Default::default(),
            }),
        }
    }

    #[test]
    fn untrained_loss_near_uniform_entropy() {
        let mut cfg = tiny(LayerKind::Moe);
        cfg.vocab_size = 64;
        cfg.seq_len = 32;
        cfg.init_std = 0.02;
        let p = ModelParams::<f64>::init(&cfg).unwrap();
        let tokens: Vec<u32> = (0..32).map(|i| (i * 7 % 64) as u32).collect();
        let (_, ce, aux) = lm_forward(&tokens, &cfg, &p).unwrap();
        let h = (64f64).ln();
        assert!((ce - h).abs() < 0.15 * h, "{ce} vs {h}");
        assert!(aux >= 0.0);
    }

    #[test]
    fn causal_mask() {
        for kind in [LayerKind::DenseFfn, LayerKind::Moe, LayerKind::Mone] {
            let cfg = tiny(kind);
            let p = ModelParams::<f64>::init(&cfg).unwrap();
            let a = [1u32, 4, 2, 9, 3, 3];
            let mut b = a;
            b[4] = 7;
            b[5] = 0;
            let la = lm_forward(&a, &cfg, &p).unwrap().0;
            let lb = lm_forward(&b, &cfg, &p).unwrap().0;
            for t in 0..4 {
                assert_eq!(la.row(t), lb.row(t));
            }
            assert_ne!(la.row(4), lb.row(4));
        }
    }

    #[test]
    fn full_neuron_mone_matches_moe_end_to_end() {
        let moe = tiny(LayerKind::Moe);
        let mut mone = tiny(LayerKind::Mone);
        mone.mone.as_mut().unwrap().neurons_per_expert = 4;
        let p = ModelParams::<f64>::init(&moe).unwrap();
        let tokens = [3u32, 1, 4, 1, 5, 9];
        assert_eq!(lm_forward(&tokens, &moe, &p).unwrap().0, lm_forward(&tokens, &mone, &p).unwrap().0);
    }

    #[test]
    fn invalid_tokens() {
        let cfg = tiny(LayerKind::Moe);
        let p = ModelParams::<f64>::init(&cfg).unwrap();
        assert!(matches!(lm_forward(&[1, 11], &cfg, &p), Err(Error::Input(_))));
        assert!(matches!(lm_forward(&[1; 7], &cfg, &p), Err(Error::Input(_))));
        assert!(matches!(lm_forward(&[1], &cfg, &p), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn batch_is_thread_count_independent() {
        let cfg = tiny(LayerKind::Mone);
        let p = ModelParams::<f64>::init(&cfg).unwrap();
        let seqs: Vec<Vec<u32>> = (0..5).map(|s| (0..6).map(|i| ((i * 3 + s) % 11) as u32).collect()).collect();
        let a = batch_forward(&p, &cfg, &seqs, ForwardOptions::default(), 1).unwrap();
        let b = batch_forward(&p, &cfg, &seqs, ForwardOptions::default(), 3).unwrap();
        assert_eq!(a.ce_loss.to_bits(), b.ce_loss.to_bits());
        assert_eq!(a.aux_loss.to_bits(), b.aux_loss.to_bits());
        assert_eq!(a.expert_stats, b.expert_stats);
    }

    #[test]
    fn replay_reproduces_selection() {
        let cfg = tiny(LayerKind::Mone);
        let p = ModelParams::<f64>::init(&cfg).unwrap();
        let tokens = [2u32, 7, 1, 8, 2, 8];
        let f = forward_seq(&p, &cfg, &tokens, None, None).unwrap();
        let routes = f.cache.routes();
        let g = forward_seq(&p, &cfg, &tokens, None, Some(&routes)).unwrap();
        assert_eq!(f.cache.logits, g.cache.logits);
        assert_eq!(g.cache.routes(), routes);
        assert_eq!(routes[0][0].neurons[0].len(), 2);
    }

    #[test]
    fn par_map_preserves_order() {
        let v: Vec<usize> = (0..17).collect();
        assert_eq!(par_map(&v, 4, |i, x| i * 100 + x), v.iter().map(|x| x * 101).collect::<Vec<_>>());
    }
}
