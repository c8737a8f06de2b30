//! Incremental decoding with a key/value cache.

use crate::error::{Error, Result};
use crate::experts::{glu_decode, pack_neurons};
use crate::mone::MoneConfig;
use crate::numerics::{axpy, matvec, Activation, Element, Tensor};
use crate::routing::route;

use super::config::ModelConfig;
use super::forward::{attend_row, check_tokens, ffn_token, rms_row};
use super::params::{Ffn, ModelParams};

/// Neuron-major up/down copies of every routed and shared expert in one layer.
struct Packed<T: Element> {
    experts: Vec<Tensor<T>>,
    shared: Option<Tensor<T>>,
}

pub struct Generator<'a, T: Element = f64> {
    params: &'a ModelParams<T>,
    cfg: &'a ModelConfig,
    mone: Option<MoneConfig>,
    keys: Vec<Tensor<T>>,
    values: Vec<Tensor<T>>,
    len: usize,
    probs: Vec<Vec<T>>,
    packed: Vec<Option<Packed<T>>>,
    gate: Vec<T>,
}

impl<'a, T: Element> Generator<'a, T> {
    pub fn new(params: &'a ModelParams<T>, cfg: &'a ModelConfig) -> Result<Self> {
        cfg.validate()?;
        params.check_shapes(cfg)?;
        let cache = || (0..cfg.n_layers).map(|_| Tensor::zeros(&[cfg.seq_len, cfg.d_model])).collect();
        let packed = params
            .layers
            .iter()
            .map(|lp| match &lp.ffn {
                Ffn::Dense(_) => Ok(None),
                Ffn::Routed(m) => Ok(Some(Packed {
                    experts: m.experts.iter().map(pack_neurons).collect(),
                    shared: m.shared.as_ref().map(pack_neurons),
                })),
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            params,
            cfg,
            mone: cfg.mone_config(),
            keys: cache(),
            values: cache(),
            len: 0,
            probs: vec![vec![T::zero(); cfg.seq_len]; cfg.n_heads],
            packed,
            gate: Vec::new(),
        })
    }

    /// Forgets all cached positions.
    pub fn reset(&mut self) {
        self.len = 0;
    }

    pub fn position(&self) -> usize {
        self.len
    }

    /// Feeds one token and returns the next-token logits.
    pub fn step(&mut self, token: u32) -> Result<Vec<T>> {
        if self.len >= self.cfg.seq_len {
            return Err(Error::Input(format!("context full at seq_len={}", self.cfg.seq_len)));
        }
        check_tokens(&[token], self.cfg)?;
        let (p, cfg, t) = (self.params, self.cfg, self.len);
        let dm = cfg.d_model;
        let mut x = p.tok_emb.row(token as usize).to_vec();
        axpy(T::one(), p.pos_emb.row(t), &mut x);
        let mut h = vec![T::zero(); dm];
        let mut q = vec![T::zero(); dm];
        let mut ctx = vec![T::zero(); dm];
        let mut a = vec![T::zero(); dm];
        let mut y = vec![T::zero(); dm];
        for (li, lp) in p.layers.iter().enumerate() {
            rms_row(&x, lp.attn_norm.data(), &mut h);
            matvec(lp.wq.data(), &h, &mut q);
            matvec(lp.wk.data(), &h, self.keys[li].row_mut(t));
            matvec(lp.wv.data(), &h, self.values[li].row_mut(t));
            attend_row(&q, &self.keys[li], &self.values[li], t, cfg.n_heads, &mut self.probs, &mut ctx)?;
            matvec(lp.wo.data(), &ctx, &mut a);
            axpy(T::one(), &a, &mut x);
            rms_row(&x, lp.ffn_norm.data(), &mut h);
            match (&lp.ffn, &self.packed[li]) {
                (Ffn::Routed(m), Some(dt)) => {
                    y.fill(T::zero());
                    if let (Some(w), Some(wt)) = (&m.shared, &dt.shared) {
                        glu_decode(&h, w, wt, Activation::Silu, None, T::one(), &mut self.gate, &mut y)?;
                    }
                    let keep = self.mone.as_ref().map(|mc| mc.neurons_per_expert);
                    let d = route(&h, &m.router, cfg.experts_per_token, Activation::Softmax)?;
                    for (&i, &s) in d.experts.iter().zip(&d.scores) {
                        glu_decode(&h, &m.experts[i], &dt.experts[i], cfg.internal_act, keep, s, &mut self.gate, &mut y)?;
                    }
                }
                _ => {
                    ffn_token(&lp.ffn, cfg, self.mone.as_ref(), &h, None, None, &mut y)?;
                }
            }
            axpy(T::one(), &y, &mut x);
        }
        rms_row(&x, p.final_norm.data(), &mut h);
        let mut logits = vec![T::zero(); cfg.vocab_size];
        matvec(p.tok_emb.data(), &h, &mut logits);
        self.len += 1;
        Ok(logits)
    }

    /// Feeds `prompt`, then appends `new_tokens` arg-max tokens.
    pub fn greedy(&mut self, prompt: &[u32], new_tokens: usize) -> Result<Vec<u32>> {
        if prompt.is_empty() {
            return Err(Error::EmptyInput("generation needs a prompt".into()));
        }
        let mut logits = Vec::new();
        for &tok in prompt {
            logits = self.step(tok)?;
        }
        let mut out = Vec::with_capacity(new_tokens);
        for i in 0..new_tokens {
            let next = argmax(&logits) as u32;
            out.push(next);
            if i + 1 < new_tokens {
                logits = self.step(next)?;
            }
        }
        Ok(out)
    }
}

fn argmax<T: Element>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
