use mone_core::analysis::{
    activated_param_count, activation_stats, load_balance_variance, prune_scan, throughput_bench, write_csv,
    ActivationReport, BalanceReport, BenchOptions, PruneSweepResult, DEFAULT_NEAR_ZERO,
};
use mone_core::model::{evaluate, probe_sequences, LayerKind, ModelConfig, ModelParams, MoneSection};
use mone_core::mone::NeuronScore;
use mone_core::numerics::{Activation, DType};
use mone_core::Error;
use proptest::prelude::*;

fn cfg(kind: LayerKind, ke: usize, kn: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: 20,
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        d_expert: 8,
        n_experts: 6,
        layer_kind: kind,
        experts_per_token: ke,
        internal_act: Activation::Silu,
        shared_expert: true,
        alpha_aux: 0.01,
        seq_len: 12,
        seed: 4,
        dtype: DType::F64,
        init_std: 0.3,
        mone: (kind == LayerKind::Mone).then(|| MoneSection {
            neurons_per_expert: kn,
            alpha_ng: 0.01,
            neuron_score: NeuronScore::Softmax,
        }),
    }
}

fn csv(header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut out = Vec::new();
    write_csv(&mut out, header, rows).unwrap();
    out
}

#[test]
fn unpruned_scan_equals_evaluation() {
    for c in [cfg(LayerKind::Moe, 2, 0), cfg(LayerKind::Mone, 4, 2)] {
        let p = ModelParams::<f64>::init(&c).unwrap();
        let seqs = probe_sequences(&c, 4, 12, 2);
        let r = prune_scan(&p, &c, &seqs, &[1.0, 0.5, 0.1], "m", 2).unwrap();
        let e = evaluate(&p, &c, &seqs, None, 1).unwrap();
        assert_eq!(r.points.len(), 3);
        assert_eq!(r.points[0].ce_loss, e.ce_loss);
        assert_eq!(r.points[0].accuracy, e.accuracy);
        assert_eq!(r.csv_rows().len(), 3);
    }
}

#[test]
fn dense_models_cannot_be_pruned() {
    let c = cfg(LayerKind::DenseFfn, 2, 0);
    let p = ModelParams::<f64>::init(&c).unwrap();
    let r = prune_scan(&p, &c, &probe_sequences(&c, 1, 4, 0), &[0.5], "d", 1);
    assert!(matches!(r, Err(Error::Mode(_))));
}

#[test]
fn reports_are_reproducible() {
    let c = cfg(LayerKind::Mone, 3, 3);
    let p = ModelParams::<f64>::init(&c).unwrap();
    let seqs = probe_sequences(&c, 3, 12, 6);
    let emit = || {
        let a = activation_stats(&p, &c, &seqs, DEFAULT_NEAR_ZERO).unwrap();
        let b = load_balance_variance(&p, &c, &seqs).unwrap();
        let s = prune_scan(&p, &c, &seqs, &[1.0, 0.3], "m", 3).unwrap();
        [
            csv(&ActivationReport::CSV_HEADER, &a.csv_rows()),
            csv(&BalanceReport::CSV_HEADER, &b.csv_rows()),
            csv(&PruneSweepResult::CSV_HEADER, &s.csv_rows()),
        ]
    };
    assert_eq!(emit(), emit());
}

#[test]
fn histograms_count_every_gate() {
    let c = cfg(LayerKind::Mone, 3, 3);
    let p = ModelParams::<f64>::init(&c).unwrap();
    let seqs = probe_sequences(&c, 2, 12, 1);
    let r = activation_stats(&p, &c, &seqs, DEFAULT_NEAR_ZERO).unwrap();
    for l in &r.layers {
        assert_eq!(l.histogram.total(), l.gate_values);
        // Every token activates 3 experts with 8 gate values each.
        assert_eq!(l.gate_values, 24 * 3 * 8);
        assert!((l.expert_frequency.iter().sum::<f64>() - 3.0).abs() < 1e-12);
    }
}

#[test]
fn bench_rejects_unequal_pairs_and_few_trials() {
    let a = cfg(LayerKind::Moe, 2, 0);
    let b = cfg(LayerKind::Mone, 2, 2);
    let opts = BenchOptions {
        prompt_len: 2,
        new_tokens: 3,
        ..BenchOptions::default()
    };
    assert!(matches!(throughput_bench(&a, &b, &opts), Err(Error::Config(_))));
    let few = BenchOptions { trials: 3, ..opts.clone() };
    assert!(matches!(throughput_bench(&a, &a, &few), Err(Error::Argument(_))));
    let r = throughput_bench(&a, &cfg(LayerKind::Mone, 4, 2), &opts).unwrap();
    assert_eq!(r.entries[0].activated_params, r.entries[1].activated_params);
    assert_eq!(r.entries[0].trial_tokens_per_sec.len(), opts.trials);
    assert!(r.entries.iter().all(|e| e.peak_bytes > 0 && e.median_tokens_per_sec > 0.0));
}

proptest! {
    #[test]
    fn activated_count_is_monotone(ke in 1usize..6, kn in 1usize..8) {
        let f = |ke, kn| activated_param_count(&cfg(LayerKind::Mone, ke, kn)).model_activated;
        prop_assert!(f(ke + 1, kn) >= f(ke, kn));
        prop_assert!(f(ke, kn + 1) >= f(ke, kn));
        let total = activated_param_count(&cfg(LayerKind::Mone, ke, kn)).model_total;
        prop_assert_eq!(total, ModelParams::<f32>::init(&cfg(LayerKind::Mone, ke, kn)).unwrap().param_count() as u64);
    }
}
