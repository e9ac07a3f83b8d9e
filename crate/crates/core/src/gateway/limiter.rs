//! Rate limiting primitives with a pluggable clock so the per-minute budget
//! is testable without wall-clock sleeps.

use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateLimitConfig {
    pub requests_per_minute: u32,
    pub max_in_flight: usize,
}

pub trait Clock: Send + Sync {
    /// Monotonic seconds since some fixed origin.
    fn monotonic_s(&self) -> f64;
    fn sleep_s(&self, seconds: f64);
}

pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        SystemClock { origin: Instant::now() }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn monotonic_s(&self) -> f64 {
        self.origin.elapsed().as_secs_f64()
    }

    fn sleep_s(&self, seconds: f64) {
        if seconds > 0.0 {
            std::thread::sleep(Duration::from_secs_f64(seconds));
        }
    }
}

/// Test clock: `sleep_s` advances virtual time instantly.
pub struct VirtualClock {
    now: Mutex<f64>,
}

impl VirtualClock {
    pub fn new() -> Self {
        VirtualClock { now: Mutex::new(0.0) }
    }

    pub fn advance(&self, seconds: f64) {
        *self.now.lock().unwrap() += seconds;
    }
}

impl Default for VirtualClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for VirtualClock {
    fn monotonic_s(&self) -> f64 {
        *self.now.lock().unwrap()
    }

    fn sleep_s(&self, seconds: f64) {
        if seconds > 0.0 {
            self.advance(seconds);
        }
    }
}

/// Enforces "at most `budget` acquisitions in any 60 s window" by tracking
/// the timestamps of recent acquisitions and sleeping past the oldest one.
pub struct SlidingWindowLimiter {
    budget: usize,
    window_s: f64,
    clock: Arc<dyn Clock>,
    recent: Mutex<VecDeque<f64>>,
}

impl SlidingWindowLimiter {
    pub fn new(requests_per_minute: u32, clock: Arc<dyn Clock>) -> Self {
        SlidingWindowLimiter {
            budget: requests_per_minute.max(1) as usize,
            window_s: 60.0,
            clock,
            recent: Mutex::new(VecDeque::new()),
        }
    }

    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut recent = self.recent.lock().unwrap();
                let now = self.clock.monotonic_s();
                while recent.front().map(|&t| now - t >= self.window_s).unwrap_or(false) {
                    recent.pop_front();
                }
                if recent.len() < self.budget {
                    recent.push_back(now);
                    return;
                }
                // lock released before sleeping
                recent.front().copied().unwrap() + self.window_s - now
            };
            self.clock.sleep_s(wait.max(1e-6));
        }
    }
}

/// Counting semaphore bounding concurrent backend calls.
pub struct InFlightGate {
    state: Mutex<usize>,
    freed: Condvar,
    capacity: usize,
}

pub struct InFlightSlot<'a> {
    gate: &'a InFlightGate,
}

impl InFlightGate {
    pub fn new(capacity: usize) -> Self {
        InFlightGate { state: Mutex::new(0), freed: Condvar::new(), capacity: capacity.max(1) }
    }

    pub fn enter(&self) -> InFlightSlot<'_> {
        let mut in_use = self.state.lock().unwrap();
        while *in_use >= self.capacity {
            in_use = self.freed.wait(in_use).unwrap();
        }
        *in_use += 1;
        InFlightSlot { gate: self }
    }
}

impl Drop for InFlightSlot<'_> {
    fn drop(&mut self) {
        let mut in_use = self.gate.state.lock().unwrap();
        *in_use -= 1;
        self.gate.freed.notify_one();
    }
}
