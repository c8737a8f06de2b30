use super::Tensor;
use crate::error::{Error, Result};

/// Central-difference gradient of a scalar function at `x`.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor<f64>, eps: f64) -> Result<Tensor<f64>>
where
    F: FnMut(&Tensor<f64>) -> f64,
{
    if !(eps > 0.0) {
        return Err(Error::Argument(format!("finite-difference step must be positive, got {eps}")));
    }
    let mut probe = x.clone();
    let mut grad = x.zeros_like();
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!("finite difference at coordinate {i}")));
        }
        grad.data_mut()[i] = (plus - minus) / (2.0 * eps);
    }
    Ok(grad)
}

/// Summary of an analytic-vs-numeric gradient comparison.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradComparison {
    /// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)`
    pub rel_l2: f64,
    /// `max_i |a_i − n_i| / max(|a_i|, |n_i|, floor)`
    pub max_rel: f64,
    pub max_abs: f64,
    pub count: usize,
}

impl GradComparison {
    pub fn new(analytic: &[f64], numeric: &[f64], floor: f64) -> Self {
        let mut diff2 = 0.0;
        let (mut a2, mut n2) = (0.0, 0.0);
        let (mut max_rel, mut max_abs) = (0.0f64, 0.0f64);
        for (a, n) in analytic.iter().zip(numeric) {
            let d = (a - n).abs();
            diff2 += d * d;
            a2 += a * a;
            n2 += n * n;
            max_abs = max_abs.max(d);
            max_rel = max_rel.max(d / a.abs().max(n.abs()).max(floor));
        }
        let denom = a2.sqrt().max(n2.sqrt());
        Self {
            rel_l2: if denom > 0.0 { diff2.sqrt() / denom } else { 0.0 },
            max_rel,
            max_abs,
            count: analytic.len(),
        }
    }

    pub fn merge(&mut self, other: &GradComparison) {
        self.max_rel = self.max_rel.max(other.max_rel);
        self.max_abs = self.max_abs.max(other.max_abs);
        self.rel_l2 = self.rel_l2.max(other.rel_l2);
        self.count += other.count;
    }
}
