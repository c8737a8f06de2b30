use serde::Serialize;

use crate::model::{LayerKind, ModelConfig};

/// Exact parameter accounting for one configuration.
///
/// With `N = d_expert · d_model` (one projection of one expert), an
/// activated MoE expert touches `3N` weights and a MoNE expert touches
/// `N + 2·K_N·d_model`: the whole gate projection plus `K_N` rows of the up
/// projection and `K_N` columns of the down projection.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    /// `N`
    pub projection: u64,
    /// Routed experts' weights touched per token, per layer.
    pub routed_activated: u64,
    pub shared: u64,
    pub router: u64,
    pub per_layer_total: u64,
    /// Routed + shared + router.
    pub per_layer_activated: u64,
    /// Attention projections and norm gains of one block.
    pub per_layer_other: u64,
    pub model_total: u64,
    pub model_activated: u64,
}

pub fn activated_param_count(cfg: &ModelConfig) -> ParamCount {
    let dm = cfg.d_model as u64;
    let de = cfg.d_expert as u64;
    let n = de * dm;
    let (routed_total, routed_activated, shared, router) = match cfg.layer_kind {
        LayerKind::DenseFfn => (3 * n, 3 * n, 0, 0),
        LayerKind::Moe | LayerKind::Mone => {
            let ne = cfg.n_experts as u64;
            let ke = cfg.experts_per_token as u64;
            let per_expert = n + 2 * cfg.active_neurons() as u64 * dm;
            let shared = if cfg.shared_expert { 3 * n } else { 0 };
            (ne * 3 * n, ke * per_expert, shared, ne * dm)
        }
    };
    let other = 4 * dm * dm + 2 * dm;
    let per_layer_total = routed_total + shared + router;
    let per_layer_activated = routed_activated + shared + router;
    let layers = cfg.n_layers as u64;
    let embed = cfg.vocab_size as u64 * dm + cfg.seq_len as u64 * dm + dm;
    ParamCount {
        projection: n,
        routed_activated,
        shared,
        router,
        per_layer_total,
        per_layer_activated,
        per_layer_other: other,
        model_total: embed + layers * (per_layer_total + other),
        model_activated: embed + layers * (per_layer_activated + other),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MoneSection, ModelParams};
    use crate::numerics::{Activation, DType};

    fn cfg(kind: LayerKind, ke: usize, kn: usize) -> ModelConfig {
        ModelConfig {
            vocab_size: 10,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_expert: 4,
            n_experts: 6,
            layer_kind: kind,
            experts_per_token: ke,
            internal_act: Activation::Silu,
            shared_expert: true,
            alpha_aux: 0.0,
            seq_len: 5,
            seed: 0,
            dtype: DType::F64,
            init_std: 0.02,
            mone: (kind == LayerKind::Mone).then(|| MoneSection {
                neurons_per_expert: kn,
                alpha_ng: 0.0,
                neuron_score: Default::default(),
            }),
        }
    }

    #[test]
    fn total_matches_materialized_parameters() {
        for kind in [LayerKind::DenseFfn, LayerKind::Moe, LayerKind::Mone] {
            let c = cfg(kind, 2, 2);
            let p = ModelParams::<f32>::init(&c).unwrap();
            assert_eq!(activated_param_count(&c).model_total, p.param_count() as u64, "{kind:?}");
        }
    }

    #[test]
    fn mone_with_every_neuron_matches_moe() {
        let a = activated_param_count(&cfg(LayerKind::Moe, 3, 4));
        let b = activated_param_count(&cfg(LayerKind::Mone, 3, 4));
        assert_eq!(a, b);
    }

    #[test]
    fn monotone_in_experts_and_neurons() {
        let f = |ke, kn| activated_param_count(&cfg(LayerKind::Mone, ke, kn)).per_layer_activated;
        for ke in 1..6 {
            for kn in 1..4 {
                assert!(f(ke + 1, kn) >= f(ke, kn));
                assert!(f(ke, kn + 1) >= f(ke, kn));
            }
        }
    }
}
