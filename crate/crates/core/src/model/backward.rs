//! Reverse pass of [`batch_forward`](super::forward::batch_forward).
//!
//! Top-k choices (experts and neurons) are constants of the forward pass.
//! Dispatch fractions in both balance losses are likewise constant; the
//! gradient flows through the scores only.

use crate::error::{Error, Result};
use crate::experts::glu_backward;
use crate::mone::{ng_score_grad, neuron_scores_backward, MoneConfig};
use crate::numerics::{axpy, dot, matvec_t_acc, outer_acc, softmax_backward_acc, Activation, Element, Tensor};
use crate::routing::{aux_score_grad, route_backward, MoeLayerWeights};

use super::config::ModelConfig;
use super::forward::{par_map, BatchForward, LayerCache, SeqCache, TokenFfn};
use super::params::{Ffn, LayerParams, ModelParams};

/// Per-layer cotangents on routing scores and neuron scores.
struct LossScales<T: Element> {
    aux: Vec<Option<Vec<T>>>,
    ng: Vec<Option<Vec<T>>>,
}

/// `dW += dYᵀ·X`, `dX += dY·W` for `Y = X·Wᵀ`.
fn linear_backward<T: Element>(x: &Tensor<T>, w: &Tensor<T>, dy: &Tensor<T>, dw: &mut Tensor<T>, dx: &mut Tensor<T>) {
    for t in 0..x.rows() {
        outer_acc(dy.row(t), x.row(t), dw.data_mut());
        matvec_t_acc(w.data(), dy.row(t), dx.row_mut(t));
    }
}

fn rmsnorm_backward<T: Element>(
    x: &Tensor<T>,
    r: &[T],
    gain: &Tensor<T>,
    dh: &Tensor<T>,
    dgain: &mut Tensor<T>,
    dx: &mut Tensor<T>,
) {
    let d = x.cols();
    let inv_d = T::one() / T::of_f64(d as f64);
    let mut n = vec![T::zero(); d];
    let mut dn = vec![T::zero(); d];
    for t in 0..x.rows() {
        let (xr, dhr) = (x.row(t), dh.row(t));
        for j in 0..d {
            n[j] = xr[j] * r[t];
            dn[j] = dhr[j] * gain.data()[j];
        }
        let g = dgain.data_mut();
        for j in 0..d {
            g[j] = g[j] + dhr[j] * n[j];
        }
        let m = dot(&dn, &n) * inv_d;
        let out = dx.row_mut(t);
        for j in 0..d {
            out[j] = out[j] + r[t] * (dn[j] - n[j] * m);
        }
    }
}

fn attention_backward<T: Element>(
    cfg: &ModelConfig,
    c: &LayerCache<T>,
    dctx: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let l = c.q.rows();
    let hd = cfg.head_dim();
    let scale = T::one() / T::of_f64(hd as f64).sqrt();
    let mut dq = c.q.zeros_like();
    let mut dk = c.k.zeros_like();
    let mut dv = c.v.zeros_like();
    let mut dp = vec![T::zero(); l];
    let mut ds = vec![T::zero(); l];
    for h in 0..cfg.n_heads {
        let span = h * hd..(h + 1) * hd;
        for t in 0..l {
            let p = &c.probs[(h * l + t) * l..(h * l + t) * l + t + 1];
            let dc = &dctx.row(t)[span.clone()];
            for j in 0..=t {
                dp[j] = dot(dc, &c.v.row(j)[span.clone()]);
                axpy(p[j], dc, &mut dv.row_mut(j)[span.clone()]);
            }
            ds[..=t].fill(T::zero());
            softmax_backward_acc(p, &dp[..=t], &mut ds[..=t]);
            let qt = &c.q.row(t)[span.clone()];
            for j in 0..=t {
                let s = ds[j] * scale;
                if s != T::zero() {
                    axpy(s, &c.k.row(j)[span.clone()], &mut dq.row_mut(t)[span.clone()]);
                    axpy(s, qt, &mut dk.row_mut(j)[span.clone()]);
                }
            }
        }
    }
    (dq, dk, dv)
}

#[allow(clippy::too_many_arguments)]
fn routed_token_backward<T: Element>(
    m: &MoeLayerWeights<T>,
    gm: &mut MoeLayerWeights<T>,
    cfg: &ModelConfig,
    mone: Option<&MoneConfig>,
    tf: &TokenFfn<T>,
    x: &[T],
    dy: &[T],
    aux: Option<&[T]>,
    ng: Option<&[T]>,
    dx: &mut [T],
) {
    if let (Some(s), Some(gs), Some(tr)) = (&m.shared, gm.shared.as_mut(), tf.shared.as_ref()) {
        glu_backward(x, s, Activation::Silu, tr, dy, None, gs, dx);
    }
    let dec = tf.decision.as_ref().expect("routed token has a decision");
    let de = m.d_expert();
    let mut d_scores = vec![T::zero(); dec.experts.len()];
    let mut dyi = vec![T::zero(); dy.len()];
    for (j, &i) in dec.experts.iter().enumerate() {
        d_scores[j] = dot(dy, &tf.outputs[j]);
        if let Some(a) = aux {
            d_scores[j] = d_scores[j] + a[i];
        }
        let p = dec.scores[j];
        for (o, &v) in dyi.iter_mut().zip(dy) {
            *o = v * p;
        }
        let tr = &tf.traces[j];
        let extra = match (ng, mone) {
            (Some(ng), Some(mc)) => {
                let dq: Vec<T> = tr.neurons.iter().map(|&k| ng[i * de + k]).collect();
                let gates: Vec<T> = tr.selected_gates().collect();
                Some(neuron_scores_backward(mc.neuron_score, &gates, &tf.neuron_scores[j], &dq))
            }
            _ => None,
        };
        glu_backward(x, &m.experts[i], cfg.internal_act, tr, &dyi, extra.as_deref(), &mut gm.experts[i], dx);
    }
    route_backward(x, &m.router, Activation::Softmax, dec, &d_scores, &mut gm.router, dx);
}

/// Takes `dx` = cotangent of the block output, leaves the cotangent of its input.
fn layer_backward<T: Element>(
    lp: &LayerParams<T>,
    gl: &mut LayerParams<T>,
    c: &LayerCache<T>,
    cfg: &ModelConfig,
    mone: Option<&MoneConfig>,
    aux: Option<&[T]>,
    ng: Option<&[T]>,
    dx: &mut Tensor<T>,
) {
    let l = c.x_in.rows();
    let mut dh2 = c.h2.zeros_like();
    match (&lp.ffn, &mut gl.ffn) {
        (Ffn::Dense(w), Ffn::Dense(gw)) => {
            for t in 0..l {
                glu_backward(c.h2.row(t), w, Activation::Silu, &c.ffn[t].traces[0], dx.row(t), None, gw, dh2.row_mut(t));
            }
        }
        (Ffn::Routed(m), Ffn::Routed(gm)) => {
            for t in 0..l {
                routed_token_backward(m, gm, cfg, mone, &c.ffn[t], c.h2.row(t), dx.row(t), aux, ng, dh2.row_mut(t));
            }
        }
        _ => unreachable!("gradient layout mirrors parameters"),
    }
    rmsnorm_backward(&c.x_mid, &c.r2, &lp.ffn_norm, &dh2, &mut gl.ffn_norm, dx);

    let mut dctx = c.ctx.zeros_like();
    linear_backward(&c.ctx, &lp.wo, dx, &mut gl.wo, &mut dctx);
    let (dq, dk, dv) = attention_backward(cfg, c, &dctx);
    let mut dh1 = c.h1.zeros_like();
    linear_backward(&c.h1, &lp.wq, &dq, &mut gl.wq, &mut dh1);
    linear_backward(&c.h1, &lp.wk, &dk, &mut gl.wk, &mut dh1);
    linear_backward(&c.h1, &lp.wv, &dv, &mut gl.wv, &mut dh1);
    rmsnorm_backward(&c.x_in, &c.r1, &lp.attn_norm, &dh1, &mut gl.attn_norm, dx);
}

fn seq_backward<T: Element>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    cache: &SeqCache<T>,
    inv_targets: T,
    scales: &LossScales<T>,
) -> ModelParams<T> {
    let mone = cfg.mone_config();
    let mut g = params.zeros_like();
    let l = cache.tokens.len();
    let mut dlogits = cache.logits.zeros_like();
    for t in 0..l - 1 {
        let row = dlogits.row_mut(t);
        row.copy_from_slice(cache.logits.row(t));
        softmax_in_place_infallible(row);
        let target = cache.tokens[t + 1] as usize;
        row[target] = row[target] - T::one();
        row.iter_mut().for_each(|v| *v = *v * inv_targets);
    }
    let mut dhf = cache.hf.zeros_like();
    linear_backward(&cache.hf, &params.tok_emb, &dlogits, &mut g.tok_emb, &mut dhf);
    let mut dx = cache.x_out.zeros_like();
    rmsnorm_backward(&cache.x_out, &cache.rf, &params.final_norm, &dhf, &mut g.final_norm, &mut dx);
    for li in (0..params.layers.len()).rev() {
        layer_backward(
            &params.layers[li],
            &mut g.layers[li],
            &cache.layers[li],
            cfg,
            mone.as_ref(),
            scales.aux[li].as_deref(),
            scales.ng[li].as_deref(),
            &mut dx,
        );
    }
    for (t, &tok) in cache.tokens.iter().enumerate() {
        axpy(T::one(), dx.row(t), g.tok_emb.row_mut(tok as usize));
        axpy(T::one(), dx.row(t), g.pos_emb.row_mut(t));
    }
    g
}

/// Logits are finite (checked in the forward pass), so softmax cannot fail here.
fn softmax_in_place_infallible<T: Element>(row: &mut [T]) {
    crate::numerics::softmax_in_place(row).expect("finite logits");
}

/// Gradient of `ce_loss + aux_loss` of `fwd` with respect to every parameter.
pub fn batch_backward<T: Element>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    fwd: &BatchForward<T>,
    threads: usize,
) -> Result<ModelParams<T>> {
    if fwd.n_targets == 0 {
        return Err(Error::EmptyBatch("no targets".into()));
    }
    let alpha_aux = T::of_f64(cfg.alpha_aux);
    let alpha_ng = T::of_f64(cfg.alpha_ng());
    let scales = LossScales {
        aux: fwd
            .expert_stats
            .iter()
            .map(|s| s.as_ref().filter(|_| cfg.alpha_aux > 0.0).map(|s| aux_score_grad(s, alpha_aux)))
            .collect(),
        ng: fwd
            .neuron_stats
            .iter()
            .map(|s| s.as_ref().filter(|_| cfg.alpha_ng() > 0.0).map(|s| ng_score_grad(s, alpha_ng)))
            .collect(),
    };
    let inv = T::one() / T::of_f64(fwd.n_targets as f64);
    let parts = par_map(&fwd.seqs, threads, |_, s| seq_backward(params, cfg, &s.cache, inv, &scales));
    let mut iter = parts.into_iter();
    let mut total = iter.next().expect("non-empty batch");
    for g in iter {
        total.add_assign(&g);
    }
    Ok(total)
}
