use crate::error::{Error, Result};
use crate::experts::ExpertWeights;
use crate::numerics::{init_weights, Element, Rng, Tensor};
use crate::routing::{MoeLayerWeights, RouterWeights};

use super::config::{LayerKind, ModelConfig};

/// Feed-forward slot of one block.
#[derive(Clone, Debug, PartialEq)]
pub enum Ffn<T: Element = f64> {
    Dense(ExpertWeights<T>),
    Routed(MoeLayerWeights<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T: Element = f64> {
    pub attn_norm: Tensor<T>,
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
    pub ffn_norm: Tensor<T>,
    pub ffn: Ffn<T>,
}

/// All trainable tensors. Gradients and optimizer moments reuse this layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T: Element = f64> {
    /// Token embedding, also the output projection.
    pub tok_emb: Tensor<T>,
    pub pos_emb: Tensor<T>,
    pub layers: Vec<LayerParams<T>>,
    pub final_norm: Tensor<T>,
}

fn expert<T: Element>(dm: usize, de: usize, mk: &mut impl FnMut(&[usize]) -> Tensor<T>) -> ExpertWeights<T> {
    let gate = mk(&[de, dm]);
    let up = mk(&[de, dm]);
    let down = mk(&[dm, de]);
    ExpertWeights { gate, up, down }
}

impl<T: Element> ModelParams<T> {
    /// Builds every tensor through `mk`, in a fixed order. Norm gains are ones.
    fn build(cfg: &ModelConfig, mut mk: impl FnMut(&[usize]) -> Tensor<T>) -> Self {
        let (dm, de) = (cfg.d_model, cfg.d_expert);
        let tok_emb = mk(&[cfg.vocab_size, dm]);
        let pos_emb = mk(&[cfg.seq_len, dm]);
        let layers = (0..cfg.n_layers)
            .map(|_| {
                let wq = mk(&[dm, dm]);
                let wk = mk(&[dm, dm]);
                let wv = mk(&[dm, dm]);
                let wo = mk(&[dm, dm]);
                let ffn = match cfg.layer_kind {
                    LayerKind::DenseFfn => Ffn::Dense(expert(dm, de, &mut mk)),
                    LayerKind::Moe | LayerKind::Mone => {
                        let router = RouterWeights { weight: mk(&[cfg.n_experts, dm]) };
                        let experts = (0..cfg.n_experts).map(|_| expert(dm, de, &mut mk)).collect();
                        let shared = cfg.shared_expert.then(|| expert(dm, de, &mut mk));
                        Ffn::Routed(MoeLayerWeights { router, experts, shared })
                    }
                };
                LayerParams {
                    attn_norm: Tensor::filled(&[dm], T::one()),
                    wq,
                    wk,
                    wv,
                    wo,
                    ffn_norm: Tensor::filled(&[dm], T::one()),
                    ffn,
                }
            })
            .collect();
        Self {
            tok_emb,
            pos_emb,
            layers,
            final_norm: Tensor::filled(&[dm], T::one()),
        }
    }

    /// Random initialization from `cfg.seed`.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::new(cfg.seed);
        Ok(Self::build(cfg, |shape| init_weights(shape, cfg.init_std, &mut rng)))
    }

    /// Correctly shaped parameters with every matrix zero.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self::build(cfg, |shape| Tensor::zeros(shape))
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(T::zero());
        }
        z
    }

    /// Named tensors in storage order.
    pub fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![("tok_emb".to_string(), &self.tok_emb), ("pos_emb".to_string(), &self.pos_emb)];
        for (l, layer) in self.layers.iter().enumerate() {
            let p = format!("layers.{l}");
            out.push((format!("{p}.attn_norm"), &layer.attn_norm));
            out.push((format!("{p}.attn.wq"), &layer.wq));
            out.push((format!("{p}.attn.wk"), &layer.wk));
            out.push((format!("{p}.attn.wv"), &layer.wv));
            out.push((format!("{p}.attn.wo"), &layer.wo));
            out.push((format!("{p}.ffn_norm"), &layer.ffn_norm));
            fn push_expert<'a, T: Element>(out: &mut Vec<(String, &'a Tensor<T>)>, name: String, e: &'a ExpertWeights<T>) {
                out.push((format!("{name}.gate"), &e.gate));
                out.push((format!("{name}.up"), &e.up));
                out.push((format!("{name}.down"), &e.down));
            }
            match &layer.ffn {
                Ffn::Dense(e) => push_expert(&mut out, format!("{p}.ffn.dense"), e),
                Ffn::Routed(m) => {
                    out.push((format!("{p}.ffn.router"), &m.router.weight));
                    for (i, e) in m.experts.iter().enumerate() {
                        push_expert(&mut out, format!("{p}.ffn.experts.{i}"), e);
                    }
                    if let Some(s) = &m.shared {
                        push_expert(&mut out, format!("{p}.ffn.shared"), s);
                    }
                }
            }
        }
        out.push(("final_norm".to_string(), &self.final_norm));
        out
    }

    /// Same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = vec![
            ("tok_emb".to_string(), &mut self.tok_emb),
            ("pos_emb".to_string(), &mut self.pos_emb),
        ];
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let p = format!("layers.{l}");
            let LayerParams {
                attn_norm,
                wq,
                wk,
                wv,
                wo,
                ffn_norm,
                ffn,
            } = layer;
            out.push((format!("{p}.attn_norm"), attn_norm));
            out.push((format!("{p}.attn.wq"), wq));
            out.push((format!("{p}.attn.wk"), wk));
            out.push((format!("{p}.attn.wv"), wv));
            out.push((format!("{p}.attn.wo"), wo));
            out.push((format!("{p}.ffn_norm"), ffn_norm));
            fn push_expert<'a, T: Element>(out: &mut Vec<(String, &'a mut Tensor<T>)>, name: String, e: &'a mut ExpertWeights<T>) {
                out.push((format!("{name}.gate"), &mut e.gate));
                out.push((format!("{name}.up"), &mut e.up));
                out.push((format!("{name}.down"), &mut e.down));
            }
            match ffn {
                Ffn::Dense(e) => push_expert(&mut out, format!("{p}.ffn.dense"), e),
                Ffn::Routed(m) => {
                    out.push((format!("{p}.ffn.router"), &mut m.router.weight));
                    for (i, e) in m.experts.iter_mut().enumerate() {
                        push_expert(&mut out, format!("{p}.ffn.experts.{i}"), e);
                    }
                    if let Some(s) = &mut m.shared {
                        push_expert(&mut out, format!("{p}.ffn.shared"), s);
                    }
                }
            }
        }
        out.push(("final_norm".to_string(), &mut self.final_norm));
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &Self) {
        let src = other.tensors();
        for ((_, dst), (_, s)) in self.tensors_mut().into_iter().zip(src) {
            for (d, v) in dst.data_mut().iter_mut().zip(s.data()) {
                *d = *d + *v;
            }
        }
    }

    /// Sum of squares over every entry, accumulated in f64.
    pub fn sum_squares(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.data().iter())
            .map(|v| v.as_f64() * v.as_f64())
            .sum()
    }

    /// Checks that every tensor has the shape `cfg` implies.
    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let want = Self::zeros(cfg);
        let have = self.tensors();
        let expect = want.tensors();
        if have.len() != expect.len() {
            return Err(Error::Config(format!(
                "parameter set has {} tensors, configuration implies {}",
                have.len(),
                expect.len()
            )));
        }
        for ((name, t), (ename, e)) in have.iter().zip(&expect) {
            if name != ename || t.shape() != e.shape() {
                return Err(Error::Dimension(format!(
                    "tensor `{name}` {:?} does not match `{ename}` {:?}",
                    t.shape(),
                    e.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn cast<U: Element>(&self) -> ModelParams<U> {
        let cast_e = |e: &ExpertWeights<T>| ExpertWeights {
            gate: e.gate.cast(),
            up: e.up.cast(),
            down: e.down.cast(),
        };
        ModelParams {
            tok_emb: self.tok_emb.cast(),
            pos_emb: self.pos_emb.cast(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    attn_norm: l.attn_norm.cast(),
                    wq: l.wq.cast(),
                    wk: l.wk.cast(),
                    wv: l.wv.cast(),
                    wo: l.wo.cast(),
                    ffn_norm: l.ffn_norm.cast(),
                    ffn: match &l.ffn {
                        Ffn::Dense(e) => Ffn::Dense(cast_e(e)),
                        Ffn::Routed(m) => Ffn::Routed(MoeLayerWeights {
                            router: RouterWeights { weight: m.router.weight.cast() },
                            experts: m.experts.iter().map(cast_e).collect(),
                            shared: m.shared.as_ref().map(cast_e),
                        }),
                    },
                })
                .collect(),
            final_norm: self.final_norm.cast(),
        }
    }
}
