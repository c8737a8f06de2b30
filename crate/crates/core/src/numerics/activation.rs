use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Element, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Silu,
    Sigmoid,
    /// Normalizes along the last axis; `-inf` entries are masked out.
    Softmax,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Silu => "silu",
            Activation::Sigmoid => "sigmoid",
            Activation::Softmax => "softmax",
        }
    }

    pub fn is_elementwise(self) -> bool {
        !matches!(self, Activation::Softmax)
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "silu" => Ok(Activation::Silu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "softmax" => Ok(Activation::Softmax),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

#[inline]
pub fn sigmoid<T: Element>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn silu<T: Element>(z: T) -> T {
    z * sigmoid(z)
}

#[inline]
pub fn silu_grad<T: Element>(z: T) -> T {
    let s = sigmoid(z);
    s * (T::one() + z * (T::one() - s))
}

/// In-place softmax of one row. Fails if every entry is masked.
pub fn softmax_in_place<T: Element>(row: &mut [T]) -> Result<()> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() || row.is_empty() {
        return Err(Error::DegenerateInput("softmax over an all-masked row".into()));
    }
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    let inv = T::one() / sum;
    for v in row.iter_mut() {
        *v = *v * inv;
    }
    Ok(())
}

/// Applies `kind` to one vector in place (softmax over the whole slice).
pub fn activate_in_place<T: Element>(kind: Activation, v: &mut [T]) -> Result<()> {
    match kind {
        Activation::Silu => v.iter_mut().for_each(|z| *z = silu(*z)),
        Activation::Sigmoid => v.iter_mut().for_each(|z| *z = sigmoid(*z)),
        Activation::Softmax => softmax_in_place(v)?,
    }
    Ok(())
}

/// Pullback of [`activate_in_place`]: given the pre-activation, the
/// activated output and the output cotangent, accumulates into `d_pre`.
pub fn activation_backward<T: Element>(
    kind: Activation,
    pre: &[T],
    out: &[T],
    d_out: &[T],
    d_pre: &mut [T],
) {
    match kind {
        Activation::Silu => {
            for i in 0..pre.len() {
                d_pre[i] = d_pre[i] + d_out[i] * silu_grad(pre[i]);
            }
        }
        Activation::Sigmoid => {
            for i in 0..pre.len() {
                d_pre[i] = d_pre[i] + d_out[i] * out[i] * (T::one() - out[i]);
            }
        }
        Activation::Softmax => softmax_backward_acc(out, d_out, d_pre),
    }
}

/// `d_pre += y ⊙ (dy − ⟨y, dy⟩)` for `y = softmax(pre)`.
pub fn softmax_backward_acc<T: Element>(y: &[T], dy: &[T], d_pre: &mut [T]) {
    let inner = y.iter().zip(dy).fold(T::zero(), |acc, (a, b)| acc + *a * *b);
    for i in 0..y.len() {
        d_pre[i] = d_pre[i] + y[i] * (dy[i] - inner);
    }
}

/// Tensor-level activation; softmax runs along the last axis.
pub fn activation<T: Element>(v: &Tensor<T>, kind: Activation) -> Result<Tensor<T>> {
    let mut out = v.clone();
    if kind == Activation::Softmax {
        let cols = v.cols();
        if cols == 0 {
            return Err(Error::DegenerateInput("softmax over an empty axis".into()));
        }
        for row in out.data_mut().chunks_exact_mut(cols) {
            softmax_in_place(row)?;
        }
    } else {
        activate_in_place(kind, out.data_mut())?;
    }
    out.ensure_finite(kind.name())
}
