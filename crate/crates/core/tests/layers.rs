//! Expert, router, MoE and MoNE layer properties.

use mone_core::experts::{decomposed_forward, expert_forward, neuron_decompose, neuron_sum, ExpertWeights};
use mone_core::mone::{mone_expert_forward, mone_layer_forward, ng_lbl_loss, MoneConfig, NeuronScore};
use mone_core::numerics::{activation, init_weights, matmul, Activation, Rng, Tensor};
use mone_core::routing::{
    aux_load_balance_loss, moe_layer_forward, route, ExpertLoadStats, MoeLayerWeights, RouterWeights, RoutingDecision,
};
use proptest::prelude::*;

fn expert(seed: u64, dm: usize, de: usize) -> ExpertWeights<f64> {
    ExpertWeights::init(dm, de, 0.6, &mut Rng::new(seed))
}

fn input(seed: u64, dm: usize) -> Tensor<f64> {
    init_weights(&[dm], 1.0, &mut Rng::new(seed ^ 0x5eed))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn mone_cfg(ke: usize, kn: usize, act: Activation) -> MoneConfig {
    MoneConfig {
        experts_per_token: ke,
        neurons_per_expert: kn,
        internal_act: act,
        alpha_ng: 0.01,
        neuron_score: NeuronScore::Softmax,
    }
}

proptest! {
    #[test]
    fn decomposition_matches_glu(seed in any::<u64>(), dm in 1usize..33, de in 1usize..17) {
        let (w, x) = (expert(seed, dm, de), input(seed, dm));
        let (y, _) = expert_forward(&x, &w, Activation::Silu).unwrap();
        prop_assert!(y.max_abs_diff(&decomposed_forward(&x, &w).unwrap()) < 1e-10);
    }

    #[test]
    fn output_is_linear_in_down(seed in any::<u64>(), dm in 1usize..12, de in 1usize..9, p in -6i32..6) {
        let (mut w, x) = (expert(seed, dm, de), input(seed, dm));
        let (y, _) = expert_forward(&x, &w, Activation::Silu).unwrap();
        let c = 2f64.powi(p);
        w.down = w.down.scale(c);
        let (yc, _) = expert_forward(&x, &w, Activation::Silu).unwrap();
        prop_assert_eq!(yc, y.scale(c));
    }

    #[test]
    fn gate_is_recomputable(seed in any::<u64>(), dm in 1usize..12, de in 1usize..9, a in 0usize..3) {
        let act = [Activation::Silu, Activation::Sigmoid, Activation::Softmax][a];
        let (w, x) = (expert(seed, dm, de), input(seed, dm));
        let (_, g) = expert_forward(&x, &w, act).unwrap();
        let col = Tensor::new(&[dm, 1], x.data().to_vec()).unwrap();
        let pre = Tensor::from_vec(matmul(&w.gate, &col).unwrap().into_vec());
        prop_assert!(g.max_abs_diff(&activation(&pre, act).unwrap()) < 1e-14);
    }

    #[test]
    fn masked_sum_matches_mone_expert(seed in any::<u64>(), dm in 1usize..10, de in 2usize..9, kn in 1usize..9) {
        let kn = kn.min(de);
        let (w, x) = (expert(seed, dm, de), input(seed, dm));
        let (y, sel) = mone_expert_forward(&x, &w, &mone_cfg(1, kn, Activation::Silu)).unwrap();
        let (_, g) = expert_forward(&x, &w, Activation::Silu).unwrap();
        let mut masked = vec![0.0; de];
        for &k in &sel.neurons {
            masked[k] = g.data()[k];
        }
        let oracle = neuron_sum(&neuron_decompose(&w), &masked, &x).unwrap();
        prop_assert!(y.max_abs_diff(&oracle) < 1e-10);
    }

    #[test]
    fn pruning_error_is_bounded(seed in any::<u64>(), dm in 1usize..10, de in 2usize..9, kn in 1usize..9) {
        let kn = kn.min(de);
        let (w, x) = (expert(seed, dm, de), input(seed, dm));
        let (full, g) = expert_forward(&x, &w, Activation::Silu).unwrap();
        let (cut, sel) = mone_expert_forward(&x, &w, &mone_cfg(1, kn, Activation::Silu)).unwrap();
        let diff: Vec<f64> = full.data().iter().zip(cut.data()).map(|(a, b)| a - b).collect();
        // A rank-1 map's spectral norm is the product of its factors' norms.
        let bound: f64 = (0..de)
            .filter(|k| !sel.neurons.contains(k))
            .map(|k| {
                let down: Vec<f64> = (0..dm).map(|i| w.down.at(i, k)).collect();
                g.data()[k].abs() * norm(&down) * norm(w.up.row(k)) * norm(x.data())
            })
            .sum();
        prop_assert!(norm(&diff) <= bound * (1.0 + 1e-12) + 1e-14);
    }

    #[test]
    fn neuron_permutation_is_equivariant(seed in any::<u64>(), dm in 1usize..8, de in 2usize..8, kn in 1usize..8) {
        let kn = kn.min(de);
        let (w, x) = (expert(seed, dm, de), input(seed, dm));
        let mut perm: Vec<usize> = (0..de).collect();
        let mut rng = Rng::new(seed);
        for i in (1..de).rev() {
            perm.swap(i, rng.below(i + 1));
        }
        // Row `j` of the permuted expert is row `perm[j]` of the original.
        let rows = |t: &Tensor<f64>| Tensor::from_fn(&[de, dm], |i| t.at(perm[i / dm], i % dm));
        let down = Tensor::from_fn(&[dm, de], |i| w.down.at(i / de, perm[i % de]));
        let p = ExpertWeights::new(rows(&w.gate), rows(&w.up), down).unwrap();
        let cfg = mone_cfg(1, kn, Activation::Silu);
        let (y, sel) = mone_expert_forward(&x, &w, &cfg).unwrap();
        let (yp, selp) = mone_expert_forward(&x, &p, &cfg).unwrap();
        let mut mapped: Vec<usize> = selp.neurons.iter().map(|&j| perm[j]).collect();
        mapped.sort_unstable();
        prop_assert_eq!(mapped, sel.neurons);
        prop_assert!(y.max_abs_diff(&yp) < 1e-12);
    }

    #[test]
    fn routing_is_well_formed(seed in any::<u64>(), dm in 1usize..10, ne in 1usize..10, k in 1usize..10, t in 1usize..12) {
        let k = k.min(ne);
        let mut rng = Rng::new(seed);
        let router = RouterWeights::<f64>::init(ne, dm, 1.0, &mut rng);
        let mut stats = ExpertLoadStats::new(ne);
        for _ in 0..t {
            let x: Vec<f64> = (0..dm).map(|_| rng.normal()).collect();
            let d = route(&x, &router, k, Activation::Softmax).unwrap();
            prop_assert_eq!(d.experts.len(), k);
            prop_assert!(d.experts.windows(2).all(|p| p[0] < p[1]) && d.experts.iter().all(|&i| i < ne));
            prop_assert!((d.scores.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            stats.record(&d);
        }
        let f = stats.dispatch_fraction();
        prop_assert!((f.iter().sum::<f64>() - k as f64).abs() < 1e-9);
        prop_assert!(f.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!((stats.mean_score().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(aux_load_balance_loss(&stats, 0.01, ne).unwrap() >= 0.0);
    }

    #[test]
    fn routing_ignores_a_logit_shift(seed in any::<u64>(), dm in 1usize..8, ne in 2usize..8, k in 1usize..8, c in -20.0f64..20.0) {
        let k = k.min(ne);
        let mut rng = Rng::new(seed);
        let router = RouterWeights::<f64>::init(ne, dm, 1.0, &mut rng);
        let x: Vec<f64> = (0..dm).map(|_| rng.normal()).collect();
        // An extra input fixed at 1 whose weight is `c` adds `c` to every logit.
        let shifted = RouterWeights::new(Tensor::from_fn(&[ne, dm + 1], |i| {
            let (r, j) = (i / (dm + 1), i % (dm + 1));
            if j < dm { router.weight.at(r, j) } else { c }
        }))
        .unwrap();
        let mut xs = x.clone();
        xs.push(1.0);
        let a = route(&x, &router, k, Activation::Softmax).unwrap();
        let b = route(&xs, &shifted, k, Activation::Softmax).unwrap();
        prop_assert_eq!(&a.experts, &b.experts);
        for (p, q) in a.scores.iter().zip(&b.scores) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_dispatch_minimizes_consistent_loss(counts in prop::collection::vec(0u32..6, 2..8)) {
        // One expert per token, so each score is 1 and P equals f.
        let ne = counts.len();
        let mut stats = ExpertLoadStats::<f64>::new(ne);
        for (i, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                stats.record(&RoutingDecision { experts: vec![i], scores: vec![1.0], logits: vec![0.0] });
            }
        }
        prop_assume!(stats.tokens > 0);
        let loss = aux_load_balance_loss(&stats, 0.1, ne).unwrap();
        prop_assert!(loss >= 0.1 - 1e-12);
        if counts.iter().all(|&c| c == counts[0]) {
            prop_assert!((loss - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn full_neuron_mone_is_moe(seed in any::<u64>(), dm in 1usize..10, de in 1usize..8, ne in 1usize..7, k in 1usize..7, a in 0usize..3) {
        let k = k.min(ne);
        let act = [Activation::Silu, Activation::Sigmoid, Activation::Softmax][a];
        let mut rng = Rng::new(seed);
        let layer = MoeLayerWeights::<f64>::init(dm, de, ne, seed % 2 == 0, 0.5, &mut rng);
        let x = Tensor::from_fn(&[3, dm], |_| rng.normal());
        let (y, es) = moe_layer_forward(&x, &layer, k, act).unwrap();
        let (z, es2, ns) = mone_layer_forward(&x, &layer, &mone_cfg(k, de, act)).unwrap();
        prop_assert_eq!(y, z);
        prop_assert_eq!(es, es2);
        prop_assert!(ng_lbl_loss(&ns, 0.01, de).unwrap() >= 0.0);
    }

    #[test]
    fn neuron_fractions_add_up(seed in any::<u64>(), de in 2usize..8, kn in 1usize..8) {
        let kn = kn.min(de);
        let mut rng = Rng::new(seed);
        let layer = MoeLayerWeights::<f64>::init(6, de, 4, true, 0.5, &mut rng);
        let x = Tensor::from_fn(&[7, 6], |_| rng.normal());
        let (_, _, ns) = mone_layer_forward(&x, &layer, &mone_cfg(2, kn, Activation::Silu)).unwrap();
        let f = ns.dispatch_fraction();
        for i in 0..4 {
            let want = kn as f64 * ns.expert_tokens[i] as f64 / 7.0;
            prop_assert!((f.row(i).iter().sum::<f64>() - want).abs() < 1e-12);
        }
        prop_assert_eq!(ns.expert_tokens.iter().sum::<u64>(), 14);
    }
}

#[test]
fn all_experts_equal_the_dense_mixture() {
    let mut rng = Rng::new(8);
    let (dm, de, ne) = (6, 5, 4);
    let layer = MoeLayerWeights::<f64>::init(dm, de, ne, true, 0.5, &mut rng);
    let x = Tensor::from_fn(&[5, dm], |_| rng.normal());
    let (y, _) = moe_layer_forward(&x, &layer, ne, Activation::Silu).unwrap();
    for t in 0..5 {
        let xt = Tensor::from_vec(x.row(t).to_vec());
        let logits = Tensor::from_vec((0..ne).map(|i| mone_core::numerics::dot(layer.router.weight.row(i), xt.data())).collect());
        let p = activation(&logits, Activation::Softmax).unwrap();
        let mut want = expert_forward(&xt, layer.shared.as_ref().unwrap(), Activation::Silu).unwrap().0.into_vec();
        for i in 0..ne {
            let (yi, _) = expert_forward(&xt, &layer.experts[i], Activation::Silu).unwrap();
            for (w, v) in want.iter_mut().zip(yi.data()) {
                *w += p.data()[i] * v;
            }
        }
        for (a, b) in y.row(t).iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
