use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::Element;

use super::config::ModelConfig;
use super::forward::{forward_seq, par_map};
use super::params::ModelParams;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalMetrics {
    /// Mean next-token cross-entropy over every target.
    pub ce_loss: f64,
    /// Fraction of targets equal to the arg-max prediction.
    pub accuracy: f64,
    pub tokens: u64,
}

/// Loss and accuracy over `seqs`. `neuron_keep` restricts every routed
/// expert to that many top-|G| neurons per token.
pub fn evaluate<T: Element>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    seqs: &[Vec<u32>],
    neuron_keep: Option<usize>,
    threads: usize,
) -> Result<EvalMetrics> {
    if seqs.iter().all(|s| s.len() < 2) {
        return Err(Error::EmptyInput("evaluation set has no next-token targets".into()));
    }
    let parts = par_map(seqs, threads, |_, s| -> Result<(f64, u64, u64)> {
        if s.len() < 2 {
            return Ok((0.0, 0, 0));
        }
        let f = forward_seq(params, cfg, s, neuron_keep, None)?;
        Ok((f.ce_sum, f.correct, f.n_targets))
    });
    let (mut ce, mut correct, mut n) = (0.0, 0u64, 0u64);
    for p in parts {
        let (c, k, t) = p?;
        ce += c;
        correct += k;
        n += t;
    }
    Ok(EvalMetrics {
        ce_loss: ce / n as f64,
        accuracy: correct as f64 / n as f64,
        tokens: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::LayerKind;
    use crate::model::forward::lm_forward;
    use crate::numerics::{Activation, DType};

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 6,
            d_model: 4,
            n_layers: 1,
            n_heads: 1,
            d_expert: 4,
            n_experts: 2,
            layer_kind: LayerKind::Moe,
            experts_per_token: 1,
            internal_act: Activation::Silu,
            shared_expert: true,
            alpha_aux: 0.0,
            seq_len: 8,
            seed: 2,
            dtype: DType::F64,
            init_std: 0.5,
            mone: None,
        }
    }

    #[test]
    fn deterministic_and_matches_manual_mean() {
        let c = cfg();
        let p = ModelParams::<f64>::init(&c).unwrap();
        let seqs = vec![vec![0u32, 1, 2, 3], vec![5, 4, 3, 2], vec![1, 1, 1, 1]];
        let a = evaluate(&p, &c, &seqs, None, 1).unwrap();
        let b = evaluate(&p, &c, &seqs, None, 3).unwrap();
        assert_eq!(a, b);
        // Equal-length sequences: the global mean is the mean of per-sequence means.
        let manual: f64 = seqs.iter().map(|s| lm_forward(s, &c, &p).unwrap().1).sum::<f64>() / 3.0;
        assert!((a.ce_loss - manual).abs() < 1e-12);
        assert_eq!(a.tokens, 9);
    }

    #[test]
    fn perfect_predictor_on_alternating_tokens() {
        // Embeddings ±e0 for tokens 0/1; every block contributes nothing;
        // the tied readout scores the other token highest.
        let mut c = cfg();
        c.vocab_size = 2;
        c.shared_expert = false;
        let mut p = ModelParams::<f64>::zeros(&c);
        p.tok_emb.data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0]);
        for v in p.pos_emb.data_mut() {
            *v = 0.0;
        }
        p.final_norm.data_mut().copy_from_slice(&[-1.0, 1.0, 1.0, 1.0]);
        let seqs = vec![vec![0u32, 1, 0, 1, 0, 1], vec![1, 0, 1, 0]];
        let m = evaluate(&p, &c, &seqs, None, 1).unwrap();
        assert_eq!(m.accuracy, 1.0);
    }

    #[test]
    fn empty_dataset() {
        let c = cfg();
        let p = ModelParams::<f64>::init(&c).unwrap();
        assert!(matches!(evaluate(&p, &c, &[], None, 1), Err(Error::EmptyInput(_))));
        assert!(matches!(evaluate(&p, &c, &[vec![1]], None, 1), Err(Error::EmptyInput(_))));
    }
}
