use std::time::{Duration, Instant};

use parking_lot::Mutex;

/// Token bucket admitting at most `rpm` requests per minute, with a burst of
/// one minute's worth of tokens.
#[derive(Debug)]
pub struct RateLimiter {
    capacity: f64,
    per_sec: f64,
    state: Mutex<Bucket>,
}

#[derive(Debug)]
struct Bucket {
    tokens: f64,
    last: Instant,
}

impl RateLimiter {
    pub fn per_minute(rpm: u32) -> Self {
        let rpm = rpm.max(1) as f64;
        Self {
            capacity: rpm,
            per_sec: rpm / 60.0,
            state: Mutex::new(Bucket {
                tokens: rpm,
                last: Instant::now(),
            }),
        }
    }

    /// Takes a token if one is available, otherwise returns how long to wait.
    pub fn try_acquire(&self) -> Result<(), Duration> {
        let mut b = self.state.lock();
        let now = Instant::now();
        let elapsed = now.duration_since(b.last).as_secs_f64();
        b.tokens = (b.tokens + elapsed * self.per_sec).min(self.capacity);
        b.last = now;
        if b.tokens >= 1.0 {
            b.tokens -= 1.0;
            Ok(())
        } else {
            Err(Duration::from_secs_f64((1.0 - b.tokens) / self.per_sec))
        }
    }

    /// Blocks until admitted.
    pub fn acquire(&self) {
        while let Err(wait) = self.try_acquire() {
            std::thread::sleep(wait);
        }
    }
}
