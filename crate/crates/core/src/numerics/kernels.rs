//! Slice-level linear algebra.
//!
//! All reductions use a fixed accumulation order, so every kernel is
//! bit-reproducible for a given dtype and input.

use super::{Element, Tensor};
use crate::error::{Error, Result};

const LANES: usize = 8;

/// Inner product with eight interleaved partial sums.
#[inline]
pub fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail = tail + *x * *y;
    }
    // A sequential fold keeps the lanes in one vector register.
    acc.iter().fold(T::zero(), |s, v| s + *v) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Element>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * *xi;
    }
}

/// `out[r] = w[r, :] · x` for a row-major `w` with `x.len()` columns.
pub fn matvec<T: Element>(w: &[T], x: &[T], out: &mut [T]) {
    let cols = x.len();
    debug_assert_eq!(w.len(), cols * out.len());
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o = dot(row, x);
    }
}

/// `out += wᵀ · v` for a row-major `w` with `out.len()` columns.
pub fn matvec_t_acc<T: Element>(w: &[T], v: &[T], out: &mut [T]) {
    let cols = out.len();
    debug_assert_eq!(w.len(), cols * v.len());
    for (vi, row) in v.iter().zip(w.chunks_exact(cols)) {
        if *vi != T::zero() {
            axpy(*vi, row, out);
        }
    }
}

/// `g += a ⊗ b` where `g` is `a.len() × b.len()` row-major.
pub fn outer_acc<T: Element>(a: &[T], b: &[T], g: &mut [T]) {
    let cols = b.len();
    debug_assert_eq!(g.len(), a.len() * cols);
    for (ai, row) in a.iter().zip(g.chunks_exact_mut(cols)) {
        if *ai != T::zero() {
            axpy(*ai, b, row);
        }
    }
}

/// Standard matrix product of `a` (m×k) and `b` (k×n).
pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape().len() != 2 || b.shape().len() != 2 {
        return Err(Error::Dimension(format!(
            "matmul needs rank-2 operands, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul inner dimensions differ: {:?} · {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = Tensor::zeros(&[m, n]);
    let (ad, bd) = (a.data(), b.data());
    let od = out.data_mut();
    // i-p-j order: each output row is a fixed sequence of row updates.
    for i in 0..m {
        let orow = &mut od[i * n..(i + 1) * n];
        for p in 0..k {
            axpy(ad[i * k + p], &bd[p * n..(p + 1) * n], orow);
        }
    }
    out.ensure_finite("matmul")
}
