//! Bookkeeping for toolkit-managed buffers.
//!
//! Peak-memory benchmarks count tensor payloads only, not process RSS: the
//! numbers are deterministic and unit-testable. Counters are thread-local so
//! parallel test threads cannot pollute each other's high-water marks; the
//! measured op is expected to allocate and drop its tensors on one thread.

use std::cell::Cell;

thread_local! {
    static CURRENT: Cell<i64> = const { Cell::new(0) };
    static PEAK: Cell<i64> = const { Cell::new(0) };
}

/// RAII token accounting for one tracked buffer.
#[derive(Debug)]
pub(crate) struct AllocGuard {
    bytes: usize,
}

impl AllocGuard {
    pub(crate) fn new(bytes: usize) -> Self {
        CURRENT.with(|c| {
            let now = c.get() + bytes as i64;
            c.set(now);
            PEAK.with(|p| {
                if now > p.get() {
                    p.set(now);
                }
            });
        });
        Self { bytes }
    }
}

impl Clone for AllocGuard {
    fn clone(&self) -> Self {
        Self::new(self.bytes)
    }
}

impl Drop for AllocGuard {
    fn drop(&mut self) {
        CURRENT.with(|c| c.set(c.get() - self.bytes as i64));
    }
}

/// Bytes of tracked tensor payloads currently live on this thread.
pub fn live_tracked_bytes() -> i64 {
    CURRENT.with(|c| c.get())
}

/// High-water mark since the last [`reset_peak_to_live`] on this thread.
pub fn peak_tracked_bytes() -> i64 {
    PEAK.with(|p| p.get())
}

/// Resets the high-water mark to the current live total.
pub fn reset_peak_to_live() {
    let live = live_tracked_bytes();
    PEAK.with(|p| p.set(live));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn guard_tracks_live_bytes() {
        let before = live_tracked_bytes();
        let t = Tensor::zeros(vec![100]);
        assert_eq!(live_tracked_bytes(), before + 800);
        drop(t);
        assert_eq!(live_tracked_bytes(), before);
    }

    #[test]
    fn clone_registers_its_own_buffer() {
        let before = live_tracked_bytes();
        let t = Tensor::zeros(vec![10]);
        let u = t.clone();
        assert_eq!(live_tracked_bytes(), before + 160);
        drop(t);
        drop(u);
        assert_eq!(live_tracked_bytes(), before);
    }
}
