//! Per-thread live-buffer accounting.
//!
//! Every tensor buffer registers itself here on creation and deregisters on
//! drop. The counters are thread-local, so a computation that stays on one
//! thread (which every tape-based computation does) can measure its own peak
//! without interference from tests running in parallel.

use std::cell::Cell;

thread_local! {
    static LIVE: Cell<usize> = const { Cell::new(0) };
    static PEAK: Cell<usize> = const { Cell::new(0) };
}

pub(crate) fn on_alloc() {
    LIVE.with(|live| {
        let now = live.get() + 1;
        live.set(now);
        PEAK.with(|peak| {
            if now > peak.get() {
                peak.set(now);
            }
        });
    });
}

pub(crate) fn on_free() {
    LIVE.with(|live| live.set(live.get().saturating_sub(1)));
}

/// Number of tensor buffers currently alive on this thread.
pub fn live_buffers() -> usize {
    LIVE.with(Cell::get)
}

/// Highest [`live_buffers`] value seen since the last [`reset_peak`].
pub fn peak_buffers() -> usize {
    PEAK.with(Cell::get)
}

/// Reset the peak to the current live count.
pub fn reset_peak() {
    let now = live_buffers();
    PEAK.with(|peak| peak.set(now));
}
