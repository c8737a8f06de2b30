//! GLU experts and their neuron-granular decomposition.
//!
//! An expert computes `W_down · (act(W_gate·x) ⊙ (W_up·x))`. Writing the
//! gate output as `G`, the same map is a gate-weighted sum of rank-1 neuron
//! experts `A_k = W_down[:, k] ⊗ W_up[k, :]`:
//!
//! ```text
//! E(x) = Σ_k G[k] · A_k x
//! ```
//!
//! The execution path never materializes `A_k`; [`neuron_decompose`] and
//! [`decomposed_forward`] exist as the oracle for that identity.

use crate::error::{Error, Result};
use crate::numerics::{
    activate_in_place, activation_backward, axpy, dot, init_weights, matvec, matvec_t_acc,
    topk_indices, Activation, Element, Rng, Tensor,
};

/// Gate, up and down projections of one GLU expert.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpertWeights<T: Element = f64> {
    /// `d_expert × d_model`
    pub gate: Tensor<T>,
    /// `d_expert × d_model`
    pub up: Tensor<T>,
    /// `d_model × d_expert`
    pub down: Tensor<T>,
}

impl<T: Element> ExpertWeights<T> {
    pub fn new(gate: Tensor<T>, up: Tensor<T>, down: Tensor<T>) -> Result<Self> {
        let ok = gate.shape().len() == 2
            && up.shape() == gate.shape()
            && down.shape().len() == 2
            && down.shape()[0] == gate.shape()[1]
            && down.shape()[1] == gate.shape()[0]
            && gate.shape()[0] >= 1;
        if !ok {
            return Err(Error::Dimension(format!(
                "expert projections gate {:?}, up {:?}, down {:?} are inconsistent",
                gate.shape(),
                up.shape(),
                down.shape()
            )));
        }
        Ok(Self { gate, up, down })
    }

    pub fn init(d_model: usize, d_expert: usize, std: f64, rng: &mut Rng) -> Self {
        Self {
            gate: init_weights(&[d_expert, d_model], std, rng),
            up: init_weights(&[d_expert, d_model], std, rng),
            down: init_weights(&[d_model, d_expert], std, rng),
        }
    }

    pub fn zeros(d_model: usize, d_expert: usize) -> Self {
        Self {
            gate: Tensor::zeros(&[d_expert, d_model]),
            up: Tensor::zeros(&[d_expert, d_model]),
            down: Tensor::zeros(&[d_model, d_expert]),
        }
    }

    pub fn d_model(&self) -> usize {
        self.gate.shape()[1]
    }

    pub fn d_expert(&self) -> usize {
        self.gate.shape()[0]
    }

    /// Parameters per projection (`d_expert · d_model`).
    pub fn projection_size(&self) -> usize {
        self.gate.len()
    }

    pub fn param_count(&self) -> usize {
        3 * self.projection_size()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.d_model(), self.d_expert())
    }

    /// Reorders neurons: new neuron `j` is old neuron `perm[j]`.
    pub fn permute_neurons(&self, perm: &[usize]) -> Result<Self> {
        let (dm, de) = (self.d_model(), self.d_expert());
        if perm.len() != de {
            return Err(Error::Dimension(format!("permutation of length {} for {de} neurons", perm.len())));
        }
        let gate = Tensor::from_fn(&[de, dm], |i| self.gate.at(perm[i / dm], i % dm));
        let up = Tensor::from_fn(&[de, dm], |i| self.up.at(perm[i / dm], i % dm));
        let down = Tensor::from_fn(&[dm, de], |i| self.down.at(i / de, perm[i % de]));
        Self::new(gate, up, down)
    }

    pub(crate) fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.d_model() {
            return Err(Error::Dimension(format!(
                "expert expects d_model={}, got input of length {}",
                self.d_model(),
                x.len()
            )));
        }
        Ok(())
    }
}

/// Which neurons of an expert take part in a forward pass.
#[derive(Clone, Copy, Debug)]
pub enum NeuronPick<'a> {
    All,
    /// Top-`k` by gate magnitude.
    TopK(usize),
    /// A fixed ascending index set.
    Fixed(&'a [usize]),
}

/// Intermediate values of one GLU evaluation, kept for backward and
/// for statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct GluTrace<T: Element = f64> {
    /// Gate pre-activation `W_gate·x`.
    pub pre: Vec<T>,
    /// Gate output `G = act(W_gate·x)`, all `d_expert` entries.
    pub gate: Vec<T>,
    /// Ascending neuron indices used for the up/down projections.
    pub neurons: Vec<usize>,
    /// `W_up[k, :]·x` for each selected `k`.
    pub up: Vec<T>,
}

impl<T: Element> GluTrace<T> {
    pub fn selected_gates(&self) -> impl Iterator<Item = T> + '_ {
        self.neurons.iter().map(|&k| self.gate[k])
    }
}

/// Down-projection restricted to `idx`: `Σ_j row[idx[j]] · h[j]`, four lanes.
#[inline]
fn gather_dot<T: Element>(row: &[T], idx: &[usize], h: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let ci = idx.chunks_exact(4);
    let ch = h.chunks_exact(4);
    let (ri, rh) = (ci.remainder(), ch.remainder());
    for (i, v) in ci.zip(ch) {
        acc[0] = acc[0] + row[i[0]] * v[0];
        acc[1] = acc[1] + row[i[1]] * v[1];
        acc[2] = acc[2] + row[i[2]] * v[2];
        acc[3] = acc[3] + row[i[3]] * v[3];
    }
    let mut tail = T::zero();
    for (i, v) in ri.iter().zip(rh) {
        tail = tail + row[*i] * *v;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// GLU forward over a chosen neuron subset, writing the output into `y`.
///
/// The gate projection is always computed in full; only the selected rows
/// of `W_up` and columns of `W_down` are touched. Selecting every neuron
/// performs exactly the arithmetic of the dense expert.
pub fn glu_forward_into<T: Element>(
    x: &[T],
    w: &ExpertWeights<T>,
    act: Activation,
    pick: NeuronPick<'_>,
    y: &mut [T],
) -> Result<GluTrace<T>> {
    w.check_input(x)?;
    let de = w.d_expert();
    let mut pre = vec![T::zero(); de];
    matvec(w.gate.data(), x, &mut pre);
    let mut gate = pre.clone();
    activate_in_place(act, &mut gate)?;

    let neurons = match pick {
        NeuronPick::All => (0..de).collect(),
        NeuronPick::TopK(k) => {
            if k > de {
                return Err(Error::Config(format!(
                    "cannot select {k} neurons from an expert of {de}"
                )));
            }
            topk_indices(&gate, k, true)?
        }
        NeuronPick::Fixed(idx) => {
            if idx.iter().any(|&k| k >= de) {
                return Err(Error::Argument("neuron index out of range".into()));
            }
            idx.to_vec()
        }
    };

    let up: Vec<T> = neurons.iter().map(|&k| dot(w.up.row(k), x)).collect();
    let h: Vec<T> = neurons.iter().zip(&up).map(|(&k, &u)| gate[k] * u).collect();
    if neurons.len() == de {
        matvec(w.down.data(), &h, y);
    } else {
        for (yr, row) in y.iter_mut().zip(w.down.data().chunks_exact(de)) {
            *yr = gather_dot(row, &neurons, &h);
        }
    }
    Ok(GluTrace {
        pre,
        gate,
        neurons,
        up,
    })
}

/// Neuron-major copy of an expert's up and down projections for decoding:
/// row `k` holds `W_up[k, :]` followed by `W_down[:, k]`, so one neuron's
/// weights are a single contiguous `2·d_model` run.
pub fn pack_neurons<T: Element>(w: &ExpertWeights<T>) -> Tensor<T> {
    let (de, dm) = (w.d_expert(), w.d_model());
    let mut data = Vec::with_capacity(2 * de * dm);
    for k in 0..de {
        data.extend_from_slice(w.up.row(k));
        data.extend((0..dm).map(|j| w.down.data()[j * de + k]));
    }
    Tensor::new(&[de, 2 * dm], data).expect("packed shape matches its data")
}

/// Forward-only GLU for incremental decoding: adds `scale · E(x)` to `y`.
///
/// `packed` comes from [`pack_neurons`]. `keep` restricts the expert to its
/// top-`keep` neurons by `|G|`. Agrees with [`glu_forward_into`] up to
/// rounding.
pub fn glu_decode<T: Element>(
    x: &[T],
    w: &ExpertWeights<T>,
    packed: &Tensor<T>,
    act: Activation,
    keep: Option<usize>,
    scale: T,
    gate: &mut Vec<T>,
    y: &mut [T],
) -> Result<()> {
    w.check_input(x)?;
    let (de, dm) = (w.d_expert(), w.d_model());
    gate.clear();
    gate.resize(de, T::zero());
    matvec(w.gate.data(), x, gate);
    activate_in_place(act, gate)?;
    let idx: Vec<usize> = match keep {
        Some(k) if k < de => topk_indices(gate, k, true)?,
        _ => (0..de).collect(),
    };
    for &k in idx.iter().take(PREFETCH_AHEAD) {
        prefetch(packed.row(k));
    }
    for (j, &k) in idx.iter().enumerate() {
        if let Some(&next) = idx.get(j + PREFETCH_AHEAD) {
            prefetch(packed.row(next));
        }
        let (up, down) = packed.row(k).split_at(dm);
        axpy(scale * gate[k] * dot(up, x), down, y);
    }
    Ok(())
}

/// Neuron rows requested ahead of the one being computed.
const PREFETCH_AHEAD: usize = 16;

/// Hints the cache to start loading `v`; gathered neuron rows are too short
/// for the hardware stream prefetcher to lock on.
#[inline]
fn prefetch<T>(v: &[T]) {
    #[cfg(target_arch = "x86_64")]
    {
        use std::arch::x86_64::{_mm_prefetch, _MM_HINT_T0};
        let bytes = std::mem::size_of_val(v);
        let base = v.as_ptr() as *const i8;
        for off in (0..bytes).step_by(64) {
            // SAFETY: prefetch never faults and `off` stays inside `v`.
            unsafe { _mm_prefetch(base.add(off), _MM_HINT_T0) };
        }
    }
    #[cfg(not(target_arch = "x86_64"))]
    let _ = v;
}

/// Reverse pass of [`glu_forward_into`].
///
/// `d_gate_extra` carries additional cotangent on the selected gate values
/// (one entry per selected neuron), e.g. from a neuron load-balance loss.
/// Weight gradients accumulate into `grads`, the input gradient into `dx`.
pub fn glu_backward<T: Element>(
    x: &[T],
    w: &ExpertWeights<T>,
    act: Activation,
    trace: &GluTrace<T>,
    dy: &[T],
    d_gate_extra: Option<&[T]>,
    grads: &mut ExpertWeights<T>,
    dx: &mut [T],
) {
    let de = w.d_expert();
    let sel = &trace.neurons;
    let mut dh = vec![T::zero(); sel.len()];
    let down = w.down.data();
    let gdown = grads.down.data_mut();
    for (r, &dyr) in dy.iter().enumerate() {
        if dyr == T::zero() {
            continue;
        }
        let row = &down[r * de..(r + 1) * de];
        let grow = &mut gdown[r * de..(r + 1) * de];
        for (j, &k) in sel.iter().enumerate() {
            dh[j] = dh[j] + row[k] * dyr;
            grow[k] = grow[k] + dyr * trace.gate[k] * trace.up[j];
        }
    }

    let mut d_gate = vec![T::zero(); de];
    for (j, &k) in sel.iter().enumerate() {
        let mut dg = dh[j] * trace.up[j];
        if let Some(extra) = d_gate_extra {
            dg = dg + extra[j];
        }
        d_gate[k] = dg;
        let d_up = dh[j] * trace.gate[k];
        axpy(d_up, x, grads.up.row_mut(k));
        axpy(d_up, w.up.row(k), dx);
    }

    let mut d_pre = vec![T::zero(); de];
    activation_backward(act, &trace.pre, &trace.gate, &d_gate, &mut d_pre);
    let dm = x.len();
    let ggate = grads.gate.data_mut();
    for (k, &dp) in d_pre.iter().enumerate() {
        if dp != T::zero() {
            axpy(dp, x, &mut ggate[k * dm..(k + 1) * dm]);
        }
    }
    matvec_t_acc(w.gate.data(), &d_pre, dx);
}

/// Dense expert forward. Returns the output and the full gate vector `G`.
pub fn expert_forward<T: Element>(
    x: &Tensor<T>,
    w: &ExpertWeights<T>,
    internal_act: Activation,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let mut y = vec![T::zero(); w.d_model()];
    let trace = glu_forward_into(x.data(), w, internal_act, NeuronPick::All, &mut y)?;
    Ok((Tensor::from_vec(y), Tensor::from_vec(trace.gate)))
}

/// The always-on shared expert: dense SiLU GLU, no routing weight.
pub fn shared_expert_forward<T: Element>(x: &Tensor<T>, w: &ExpertWeights<T>) -> Result<Tensor<T>> {
    Ok(expert_forward(x, w, Activation::Silu)?.0)
}

/// Rank-1 neuron expert `A_k = W_down[:, k] ⊗ W_up[k, :]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuronExpert<T: Element = f64> {
    /// `d_model × d_model`
    pub matrix: Tensor<T>,
    pub index: usize,
}

/// Splits an expert into its `d_expert` neuron experts, in neuron order.
pub fn neuron_decompose<T: Element>(w: &ExpertWeights<T>) -> Vec<NeuronExpert<T>> {
    let (dm, de) = (w.d_model(), w.d_expert());
    (0..de)
        .map(|k| {
            let up = w.up.row(k);
            let matrix = Tensor::from_fn(&[dm, dm], |i| w.down.at(i / dm, k) * up[i % dm]);
            NeuronExpert { matrix, index: k }
        })
        .collect()
}

/// `Σ_k gates[k] · A_k x` by explicit summation over neuron experts.
pub fn neuron_sum<T: Element>(neurons: &[NeuronExpert<T>], gates: &[T], x: &Tensor<T>) -> Result<Tensor<T>> {
    if neurons.len() != gates.len() {
        return Err(Error::Dimension("one gate value per neuron expert required".into()));
    }
    let dm = x.len();
    let mut y = vec![T::zero(); dm];
    let mut ax = vec![T::zero(); dm];
    for (n, &g) in neurons.iter().zip(gates) {
        if n.matrix.shape() != [dm, dm] {
            return Err(Error::Dimension("neuron expert does not match input".into()));
        }
        matvec(n.matrix.data(), x.data(), &mut ax);
        axpy(g, &ax, &mut y);
    }
    Ok(Tensor::from_vec(y))
}

/// Oracle form of the SiLU expert: gate values times explicit neuron experts.
pub fn decomposed_forward<T: Element>(x: &Tensor<T>, w: &ExpertWeights<T>) -> Result<Tensor<T>> {
    w.check_input(x.data())?;
    let mut g = vec![T::zero(); w.d_expert()];
    matvec(w.gate.data(), x.data(), &mut g);
    activate_in_place(Activation::Silu, &mut g)?;
    neuron_sum(&neuron_decompose(w), &g, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, matmul, silu};

    fn random_expert(seed: u64, dm: usize, de: usize, std: f64) -> ExpertWeights<f64> {
        ExpertWeights::init(dm, de, std, &mut Rng::new(seed))
    }

    fn random_x(seed: u64, dm: usize) -> Tensor<f64> {
        init_weights(&[dm], 1.0, &mut Rng::new(seed))
    }

    fn rel_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        a.max_abs_diff(b) / a.max_abs().max(b.max_abs()).max(1e-300)
    }

    #[test]
    fn decode_kernel_matches_forward() {
        let w = random_expert(9, 7, 6, 0.4);
        let packed = pack_neurons(&w);
        let x = random_x(10, 7);
        for (keep, pick) in [(None, NeuronPick::All), (Some(2), NeuronPick::TopK(2)), (Some(6), NeuronPick::All)] {
            let mut want = vec![0.0; 7];
            glu_forward_into(x.data(), &w, Activation::Silu, pick, &mut want).unwrap();
            let mut got = vec![1.0; 7];
            glu_decode(x.data(), &w, &packed, Activation::Silu, keep, 0.5, &mut Vec::new(), &mut got).unwrap();
            for (g, w) in got.iter().zip(&want) {
                assert!((g - (1.0 + 0.5 * w)).abs() < 1e-14, "{keep:?}: {g} vs {w}");
            }
        }
    }

    #[test]
    fn zero_input_gives_zero() {
        let w = random_expert(1, 5, 3, 0.5);
        let (y, g) = expert_forward(&Tensor::zeros(&[5]), &w, Activation::Silu).unwrap();
        assert!(y.data().iter().all(|v| *v == 0.0));
        assert!(g.data().iter().all(|v| *v == 0.0));
        assert!(decomposed_forward(&Tensor::zeros(&[5]), &w).unwrap().max_abs() == 0.0);
    }

    #[test]
    fn scalar_expert() {
        let one = || Tensor::from_rows(&[vec![1.0]]).unwrap();
        let w = ExpertWeights::new(one(), one(), one()).unwrap();
        let (y, _) = expert_forward(&Tensor::from_vec(vec![1.0]), &w, Activation::Silu).unwrap();
        assert!((y.data()[0] - 0.731_058_578_630_004_9_f64).abs() < 1e-15);
        assert_eq!(y.data()[0], silu(1.0));
    }

    #[test]
    fn inconsistent_shapes_rejected() {
        let r = ExpertWeights::<f64>::new(Tensor::zeros(&[3, 4]), Tensor::zeros(&[3, 4]), Tensor::zeros(&[3, 4]));
        assert!(matches!(r, Err(Error::Dimension(_))));
        let w = random_expert(2, 4, 3, 0.1);
        assert!(expert_forward(&Tensor::zeros(&[5]), &w, Activation::Silu).is_err());
    }

    #[test]
    fn seed_42_expert_matches_decomposition() {
        let w = random_expert(42, 8, 6, 0.5);
        let x = random_x(43, 8);
        let (y, _) = expert_forward(&x, &w, Activation::Silu).unwrap();
        let oracle = decomposed_forward(&x, &w).unwrap();
        assert!(y.max_abs_diff(&oracle) < 1e-12);
    }

    #[test]
    fn hundred_random_pairs_match_decomposition() {
        for s in 0..100u64 {
            let mut rng = Rng::new(1000 + s);
            let dm = 1 + rng.below(12);
            let de = 1 + rng.below(8);
            let w = ExpertWeights::init(dm, de, 0.7, &mut rng);
            let x = init_weights(&[dm], 1.0, &mut rng);
            let (y, _) = expert_forward(&x, &w, Activation::Silu).unwrap();
            assert!(rel_diff(&y, &decomposed_forward(&x, &w).unwrap()) < 1e-10);
        }
    }

    #[test]
    fn single_neuron_decomposition_is_the_product() {
        let w = random_expert(5, 4, 1, 1.0);
        let parts = neuron_decompose(&w);
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].matrix, matmul(&w.down, &w.up).unwrap());
    }

    #[test]
    fn neuron_experts_sum_to_down_times_up() {
        let w = random_expert(6, 5, 4, 1.0);
        let parts = neuron_decompose(&w);
        let full = matmul(&w.down, &w.up).unwrap();
        let mut sum = Tensor::<f64>::zeros(&[5, 5]);
        for p in &parts {
            axpy(1.0, p.matrix.data(), sum.data_mut());
        }
        assert!(sum.max_abs_diff(&full) < 1e-14);
        assert!(parts.iter().enumerate().all(|(k, p)| p.index == k));
    }

    /// Upper bound on σ₂/σ₁ from 2×2 minors (Cauchy–Binet: Σ minor² ≥ σ₁²σ₂²)
    /// and a power-iteration estimate of σ₁.
    fn second_singular_ratio_bound(a: &Tensor<f64>) -> f64 {
        let n = a.shape()[0];
        let mut minors2 = 0.0;
        for i in 0..n {
            for k in i + 1..n {
                for j in 0..n {
                    for l in j + 1..n {
                        let m = a.at(i, j) * a.at(k, l) - a.at(i, l) * a.at(k, j);
                        minors2 += m * m;
                    }
                }
            }
        }
        let at = a.transpose().unwrap();
        let ata = matmul(&at, a).unwrap();
        let mut v = vec![1.0; n];
        let mut sigma1_sq = 0.0;
        for _ in 0..200 {
            let mut w = vec![0.0; n];
            matvec(ata.data(), &v, &mut w);
            let norm = dot(&w, &w).sqrt();
            sigma1_sq = norm / dot(&v, &v).sqrt();
            v = w.iter().map(|x| x / norm).collect();
        }
        minors2.sqrt() / sigma1_sq
    }

    #[test]
    fn neuron_experts_have_rank_one() {
        let w = random_expert(7, 6, 5, 1.0);
        for p in neuron_decompose(&w) {
            assert!(second_singular_ratio_bound(&p.matrix) < 1e-10);
        }
    }

    #[test]
    fn zeroing_one_gate_removes_its_neuron() {
        let w = random_expert(8, 6, 5, 0.8);
        let x = random_x(9, 6);
        let parts = neuron_decompose(&w);
        let mut g = vec![0.0; 5];
        matvec(w.gate.data(), x.data(), &mut g);
        g.iter_mut().for_each(|v| *v = silu(*v));
        let full = neuron_sum(&parts, &g, &x).unwrap();
        let k = 2;
        let mut masked_g = g.clone();
        masked_g[k] = 0.0;
        let masked = neuron_sum(&parts, &masked_g, &x).unwrap();
        let mut ax = vec![0.0; 6];
        matvec(parts[k].matrix.data(), x.data(), &mut ax);
        for r in 0..6 {
            let delta = masked.data()[r] - full.data()[r];
            assert!((delta + g[k] * ax[r]).abs() < 1e-12);
        }
    }

    #[test]
    fn shared_expert_is_dense_silu_expert() {
        let w = random_expert(10, 6, 4, 0.5);
        let x = random_x(11, 6);
        assert_eq!(shared_expert_forward(&x, &w).unwrap(), expert_forward(&x, &w, Activation::Silu).unwrap().0);
        assert_eq!(shared_expert_forward(&Tensor::zeros(&[6]), &w).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn gate_output_recomputes_independently() {
        let w = random_expert(12, 6, 4, 0.5);
        let x = random_x(13, 6);
        for act in [Activation::Silu, Activation::Sigmoid, Activation::Softmax] {
            let (_, g) = expert_forward(&x, &w, act).unwrap();
            let column = Tensor::new(&[6, 1], x.data().to_vec()).unwrap();
            let pre = matmul(&w.gate, &column).unwrap();
            let expect = crate::numerics::activation(&Tensor::from_vec(pre.into_vec()), act).unwrap();
            assert!(g.max_abs_diff(&expect) < 1e-15);
        }
    }

    #[test]
    fn output_is_homogeneous_in_down_projection() {
        let w = random_expert(14, 6, 4, 0.5);
        let x = random_x(15, 6);
        let (y, _) = expert_forward(&x, &w, Activation::Silu).unwrap();
        let mut scaled = w.clone();
        scaled.down = w.down.scale(2.0);
        let (y2, _) = expert_forward(&x, &scaled, Activation::Silu).unwrap();
        // Doubling is exact in binary floating point.
        assert_eq!(y2, y.scale(2.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let (dm, de) = (5, 6);
        let w = random_expert(16, dm, de, 0.7);
        let x = random_x(17, dm);
        let probe = random_x(18, dm);
        for act in [Activation::Silu, Activation::Sigmoid, Activation::Softmax] {
            for pick in [NeuronPick::All, NeuronPick::Fixed(&[0, 2, 5])] {
                let loss = |w: &ExpertWeights<f64>, x: &[f64]| {
                    let mut y = vec![0.0; dm];
                    glu_forward_into(x, w, act, pick, &mut y).unwrap();
                    dot(&y, probe.data())
                };
                let mut y = vec![0.0; dm];
                let trace = glu_forward_into(x.data(), &w, act, pick, &mut y).unwrap();
                let mut grads = w.zeros_like();
                let mut dx = vec![0.0; dm];
                glu_backward(x.data(), &w, act, &trace, probe.data(), None, &mut grads, &mut dx);

                let num_x = finite_diff_grad(|t| loss(&w, t.data()), &x, 1e-5).unwrap();
                for (a, n) in dx.iter().zip(num_x.data()) {
                    assert!((a - n).abs() < 1e-8, "{act} dx {a} vs {n}");
                }
                let num_gate = finite_diff_grad(
                    |t| {
                        let mut w2 = w.clone();
                        w2.gate = t.clone();
                        loss(&w2, x.data())
                    },
                    &w.gate,
                    1e-5,
                )
                .unwrap();
                assert!(num_gate.max_abs_diff(&grads.gate) < 1e-8, "{act} gate");
                let num_up = finite_diff_grad(
                    |t| {
                        let mut w2 = w.clone();
                        w2.up = t.clone();
                        loss(&w2, x.data())
                    },
                    &w.up,
                    1e-5,
                )
                .unwrap();
                assert!(num_up.max_abs_diff(&grads.up) < 1e-8, "{act} up");
                let num_down = finite_diff_grad(
                    |t| {
                        let mut w2 = w.clone();
                        w2.down = t.clone();
                        loss(&w2, x.data())
                    },
                    &w.down,
                    1e-5,
                )
                .unwrap();
                assert!(num_down.max_abs_diff(&grads.down) < 1e-8, "{act} down");
            }
        }
    }
}
