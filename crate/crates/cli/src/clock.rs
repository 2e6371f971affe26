//! Injectable wall clock so timed regions can be asserted in tests.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

pub trait Clock: Send + Sync {
    fn now_seconds(&self) -> f64;
}

/// Monotonic process clock.
pub struct SystemClock {
    anchor: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self {
            anchor: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now_seconds(&self) -> f64 {
        self.anchor.elapsed().as_secs_f64()
    }
}

/// Test clock advanced explicitly.
pub struct ManualClock {
    nanos: AtomicU64,
}

impl ManualClock {
    pub fn new() -> Self {
        Self {
            nanos: AtomicU64::new(0),
        }
    }

    pub fn advance(&self, seconds: f64) {
        self.nanos
            .fetch_add((seconds * 1e9) as u64, Ordering::SeqCst);
    }
}

impl Default for ManualClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for ManualClock {
    fn now_seconds(&self) -> f64 {
        self.nanos.load(Ordering::SeqCst) as f64 / 1e9
    }
}

/// Mean seconds per call of `f` over `reps` timed runs, after `warmup`
/// untimed ones. Only the closure itself sits between the clock reads, so
/// anything the caller does outside (data generation, tuning) is excluded
/// from the measurement by construction.
pub fn measure<F: FnMut()>(clock: &dyn Clock, warmup: usize, reps: usize, mut f: F) -> f64 {
    for _ in 0..warmup {
        f();
    }
    let mut total = 0.0;
    for _ in 0..reps {
        let start = clock.now_seconds();
        f();
        total += clock.now_seconds() - start;
    }
    total / reps.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn measure_counts_only_the_timed_region() {
        let clock = ManualClock::new();
        // work outside the harness is invisible to it
        clock.advance(100.0);
        let mean = measure(&clock, 2, 5, || clock.advance(1.5));
        assert!((mean - 1.5).abs() < 1e-9, "mean was {mean}");
        // warmup calls advanced the clock but were not measured
        let raw = clock.now_seconds();
        assert!((raw - (100.0 + 7.0 * 1.5)).abs() < 1e-9);
    }
}
