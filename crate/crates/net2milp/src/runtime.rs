//! Wall clock and a scoped-thread executor for per-unit bound tightening.

use std::thread;
use std::time::Instant;

use net2milp_core::bounds::{Executor, UnitOutcome};
use net2milp_core::solver::bnb::Clock;

#[derive(Debug, Clone, Copy)]
pub struct StdClock(Instant);

impl StdClock {
    pub fn start() -> Self {
        Self(Instant::now())
    }
}

impl Clock for StdClock {
    fn elapsed_seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// Splits units into contiguous chunks, one per thread. Results come back
/// in unit order whatever the thread count.
#[derive(Debug, Clone, Copy)]
pub struct Threaded {
    pub threads: usize,
}

impl Executor for Threaded {
    fn map(&self, count: usize, run: &(dyn Fn(usize) -> UnitOutcome + Sync)) -> Vec<UnitOutcome> {
        let threads = self.threads.clamp(1, count.max(1));
        if threads == 1 {
            return (0..count).map(run).collect();
        }
        let chunk = count.div_ceil(threads);
        thread::scope(|s| {
            let handles: Vec<_> = (0..count)
                .step_by(chunk)
                .map(|start| s.spawn(move || (start..(start + chunk).min(count)).map(run).collect::<Vec<_>>()))
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("tightening worker panicked")).collect()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use net2milp_core::bounds::Interval;

    #[test]
    fn order_is_preserved() {
        let run = |i: usize| UnitOutcome::Tightened(Interval::point(i as f64));
        let serial = Threaded { threads: 1 }.map(23, &run);
        for threads in [2, 4, 7, 64] {
            assert_eq!(Threaded { threads }.map(23, &run), serial);
        }
        assert!(Threaded { threads: 4 }.map(0, &run).is_empty());
    }
}
