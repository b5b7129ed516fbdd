//! Per-thread accounting of tensor-buffer bytes.
//!
//! Every [`Buffer`] registers its allocation with the owning thread's
//! counters. A training run executes on one thread, so the thread-local high
//! water mark is the peak tensor memory of that run.

use std::cell::Cell;
use std::ops::{Deref, DerefMut};

thread_local! {
    static CURRENT: Cell<usize> = const { Cell::new(0) };
    static PEAK: Cell<usize> = const { Cell::new(0) };
}

fn on_alloc(bytes: usize) {
    CURRENT.with(|c| {
        let now = c.get() + bytes;
        c.set(now);
        PEAK.with(|p| {
            if now > p.get() {
                p.set(now);
            }
        });
    });
}

fn on_free(bytes: usize) {
    // A buffer dropped on a thread other than the one that created it would
    // otherwise underflow.
    CURRENT.with(|c| c.set(c.get().saturating_sub(bytes)));
}

/// Bytes held by live tensor buffers on this thread.
pub fn current_bytes() -> usize {
    CURRENT.with(Cell::get)
}

/// High-water mark since the last [`reset_peak`].
pub fn peak_bytes() -> usize {
    PEAK.with(Cell::get)
}

/// Restart the high-water mark from the current live total.
pub fn reset_peak() {
    let now = current_bytes();
    PEAK.with(|p| p.set(now));
}

/// Contiguous `f64` storage whose lifetime is tracked by the allocation counters.
#[derive(Debug, PartialEq)]
pub struct Buffer(Vec<f64>);

impl Buffer {
    pub fn zeros(len: usize) -> Self {
        Self::from_vec(vec![0.0; len])
    }

    pub fn from_vec(v: Vec<f64>) -> Self {
        on_alloc(v.capacity() * std::mem::size_of::<f64>());
        Buffer(v)
    }

    pub fn into_vec(mut self) -> Vec<f64> {
        let v = std::mem::take(&mut self.0);
        on_free(v.capacity() * std::mem::size_of::<f64>());
        v
    }

    pub fn bytes(&self) -> usize {
        self.0.capacity() * std::mem::size_of::<f64>()
    }
}

impl Clone for Buffer {
    fn clone(&self) -> Self {
        Self::from_vec(self.0.clone())
    }
}

impl Drop for Buffer {
    fn drop(&mut self) {
        on_free(self.0.capacity() * std::mem::size_of::<f64>());
    }
}

impl Deref for Buffer {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Buffer {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}
