//! Allocation and MAC accounting for the profiler.
//!
//! Counters are thread-local: a forward/backward pass is confined to one
//! logical thread of control, and keeping the counters per thread makes a
//! measured profiling run race-free by construction. `live_bytes` tracks the
//! payload bytes of all tensors currently alive on this thread; `peak_bytes`
//! is its running maximum since the last reset. The MAC counter accumulates
//! multiply-accumulate operations executed by convolution kernels.

use std::cell::Cell;

thread_local! {
    static LIVE_BYTES: Cell<usize> = const { Cell::new(0) };
    static PEAK_BYTES: Cell<usize> = const { Cell::new(0) };
    static MACS: Cell<u64> = const { Cell::new(0) };
}

pub(crate) fn on_alloc(bytes: usize) {
    LIVE_BYTES.with(|l| {
        let live = l.get() + bytes;
        l.set(live);
        PEAK_BYTES.with(|p| {
            if live > p.get() {
                p.set(live);
            }
        });
    });
}

pub(crate) fn on_free(bytes: usize) {
    LIVE_BYTES.with(|l| l.set(l.get().saturating_sub(bytes)));
}

pub(crate) fn add_macs(n: u64) {
    MACS.with(|m| m.set(m.get() + n));
}

/// Payload bytes of all tensors currently alive on this thread.
pub fn live_bytes() -> usize {
    LIVE_BYTES.with(Cell::get)
}

/// Running maximum of `live_bytes` since the last [`reset_peak`].
pub fn peak_bytes() -> usize {
    PEAK_BYTES.with(Cell::get)
}

/// Forget the previous high-water mark; the new peak starts at the current
/// live figure.
pub fn reset_peak() {
    PEAK_BYTES.with(|p| p.set(live_bytes()));
}

/// Multiply-accumulate operations executed by conv kernels on this thread
/// since the last [`reset_macs`].
pub fn macs() -> u64 {
    MACS.with(Cell::get)
}

pub fn reset_macs() {
    MACS.with(|m| m.set(0));
}
