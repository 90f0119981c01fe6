//! Allocation instrumentation for numeric buffer types.
//!
//! Every heap allocation made by [`crate::linalg::DenseVector`] and
//! [`crate::params::ParamsView`] bumps a thread-local counter. The in-place
//! optimizer path is required to leave this counter untouched, which is how
//! the training-memory-equals-inference-memory contract is checked without an
//! external profiler. The counter is per-thread so concurrent clients (or
//! concurrent tests) never see each other's allocations. Objective internals
//! (forward-pass scratch) use plain `Vec<f64>` and are deliberately not
//! counted: they are inference memory.

use std::cell::Cell;

thread_local! {
    static BUFFER_ALLOCS: Cell<u64> = const { Cell::new(0) };
}

/// Record one buffer allocation. Called by the instrumented constructors.
#[inline]
pub(crate) fn note_buffer_alloc() {
    BUFFER_ALLOCS.with(|c| c.set(c.get() + 1));
}

/// Buffer allocations made by the current thread so far.
pub fn buffer_alloc_count() -> u64 {
    BUFFER_ALLOCS.with(Cell::get)
}
