//! Thread-local accounting of live tensor bytes.
//!
//! Every [`Tensor`](super::Tensor) reports its buffer on construction and on
//! drop. Counters are per thread, so concurrent tests do not perturb each
//! other and a single-threaded bench reads an exact, repeatable peak.

use std::cell::Cell;

thread_local! {
    static LIVE: Cell<usize> = const { Cell::new(0) };
    static PEAK: Cell<usize> = const { Cell::new(0) };
}

pub(crate) fn track_alloc(bytes: usize) {
    LIVE.with(|live| {
        let now = live.get() + bytes;
        live.set(now);
        PEAK.with(|peak| {
            if now > peak.get() {
                peak.set(now);
            }
        });
    });
}

pub(crate) fn track_free(bytes: usize) {
    // A tensor built on another thread can be dropped here.
    LIVE.with(|live| live.set(live.get().saturating_sub(bytes)));
}

/// Bytes currently held by tensors created on this thread.
pub fn live_bytes() -> usize {
    LIVE.with(Cell::get)
}

/// High-water mark since the last [`reset_peak`].
pub fn peak_bytes() -> usize {
    PEAK.with(Cell::get)
}

/// Restart peak tracking from the current live size.
pub fn reset_peak() {
    let live = live_bytes();
    PEAK.with(|p| p.set(live));
}
