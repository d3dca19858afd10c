//! Run clocks. All readings are nanoseconds on a monotonic timeline.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

/// Spin instead of sleeping once the deadline is this close.
const SPIN_WINDOW_NS: u64 = 200_000;

pub trait Clock: Send + Sync {
    fn now_ns(&self) -> u64;

    /// Blocks until `now_ns() >= deadline_ns`.
    fn sleep_until(&self, deadline_ns: u64);

    /// True when time only moves when the run moves it. Simulated SUTs stamp
    /// completions arithmetically instead of sleeping.
    fn is_simulated(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone)]
pub struct MonotonicClock {
    origin: Instant,
}

impl MonotonicClock {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for MonotonicClock {
    fn now_ns(&self) -> u64 {
        self.origin.elapsed().as_nanos() as u64
    }

    fn sleep_until(&self, deadline_ns: u64) {
        loop {
            let now = self.now_ns();
            if now >= deadline_ns {
                return;
            }
            let remaining = deadline_ns - now;
            if remaining > SPIN_WINDOW_NS {
                std::thread::sleep(Duration::from_nanos(remaining - SPIN_WINDOW_NS));
            } else {
                std::hint::spin_loop();
            }
        }
    }
}

/// Discrete-event clock: `sleep_until` jumps straight to the deadline.
#[derive(Debug, Default)]
pub struct SimClock {
    now: AtomicU64,
}

impl SimClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance_to(&self, t_ns: u64) {
        self.now.fetch_max(t_ns, Ordering::SeqCst);
    }
}

impl Clock for SimClock {
    fn now_ns(&self) -> u64 {
        self.now.load(Ordering::SeqCst)
    }

    fn sleep_until(&self, deadline_ns: u64) {
        self.advance_to(deadline_ns);
    }

    fn is_simulated(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sim_clock_never_goes_back() {
        let c = SimClock::new();
        c.sleep_until(10);
        c.sleep_until(5);
        assert_eq!(c.now_ns(), 10);
    }

    #[test]
    fn monotonic_sleep_reaches_deadline() {
        let c = MonotonicClock::new();
        let target = c.now_ns() + 2_000_000;
        c.sleep_until(target);
        assert!(c.now_ns() >= target);
    }
}
