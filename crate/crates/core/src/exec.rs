//! Provider-call plumbing: bounded retries with exponential backoff, a token
//! bucket rate limiter and a bounded-concurrency parallel map.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use crate::config::RetryConfig;

/// Whether a failed call may succeed when repeated.
pub trait Retryable {
    fn is_transient(&self) -> bool;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl From<&RetryConfig> for RetryPolicy {
    fn from(c: &RetryConfig) -> Self {
        RetryPolicy { max_attempts: c.max_attempts.max(1), base_delay: Duration::from_millis(c.base_delay_ms) }
    }
}

impl RetryPolicy {
    pub fn delay_for(&self, attempt: u32) -> Duration {
        self.base_delay.saturating_mul(1u32 << attempt.min(16))
    }

    /// Calls `f` until it succeeds, fails permanently, or attempts run out.
    /// Returns the last error and the number of attempts made.
    pub fn run<T, E: Retryable>(&self, mut f: impl FnMut(u32) -> Result<T, E>) -> Result<T, (E, u32)> {
        let mut attempt = 0;
        loop {
            match f(attempt) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    attempt += 1;
                    if !e.is_transient() || attempt >= self.max_attempts {
                        return Err((e, attempt));
                    }
                    let d = self.delay_for(attempt - 1);
                    if !d.is_zero() {
                        std::thread::sleep(d);
                    }
                }
            }
        }
    }
}

/// Token bucket shared between worker threads. A rate of zero disables it.
#[derive(Debug)]
pub struct TokenBucket {
    rate: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn new(rate_per_sec: f64, burst: usize) -> Self {
        let capacity = burst.max(1) as f64;
        TokenBucket { rate: rate_per_sec, capacity, state: Mutex::new((capacity, Instant::now())) }
    }

    pub fn unlimited() -> Self {
        TokenBucket::new(0.0, 1)
    }

    /// Blocks until one token is available.
    pub fn acquire(&self) {
        if self.rate <= 0.0 {
            return;
        }
        loop {
            let wait = {
                let mut st = self.state.lock().expect("token bucket poisoned");
                let now = Instant::now();
                let refill = now.duration_since(st.1).as_secs_f64() * self.rate;
                st.0 = (st.0 + refill).min(self.capacity);
                st.1 = now;
                if st.0 >= 1.0 {
                    st.0 -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - st.0) / self.rate)
            };
            std::thread::sleep(wait);
        }
    }
}

/// Applies `f` to every item on at most `concurrency` threads, preserving order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], concurrency: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = concurrency.max(1).min(items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().expect("slot poisoned") = Some(r);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().expect("slot poisoned").expect("every slot filled")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug)]
    struct E(bool);
    impl Retryable for E {
        fn is_transient(&self) -> bool {
            self.0
        }
    }

    #[test]
    fn retries_transient_up_to_limit() {
        let p = RetryPolicy { max_attempts: 3, base_delay: Duration::ZERO };
        let mut calls = 0;
        let r: Result<(), _> = p.run(|_| {
            calls += 1;
            Err(E(true))
        });
        assert_eq!(calls, 3);
        assert_eq!(r.unwrap_err().1, 3);
    }

    #[test]
    fn permanent_errors_stop_immediately() {
        let p = RetryPolicy { max_attempts: 3, base_delay: Duration::ZERO };
        let mut calls = 0;
        let _ = p.run::<(), _>(|_| {
            calls += 1;
            Err(E(false))
        });
        assert_eq!(calls, 1);
    }

    #[test]
    fn succeeds_after_transient() {
        let p = RetryPolicy { max_attempts: 3, base_delay: Duration::ZERO };
        let r = p.run(|attempt| if attempt < 2 { Err(E(true)) } else { Ok(attempt) });
        assert_eq!(r.unwrap(), 2);
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy { max_attempts: 3, base_delay: Duration::from_millis(100) };
        assert_eq!(p.delay_for(0), Duration::from_millis(100));
        assert_eq!(p.delay_for(2), Duration::from_millis(400));
    }

    #[test]
    fn parallel_map_preserves_order() {
        let items: Vec<u64> = (0..200).collect();
        let out = parallel_map(&items, 8, |x| x * 2);
        assert_eq!(out, items.iter().map(|x| x * 2).collect::<Vec<_>>());
    }

    #[test]
    fn token_bucket_paces_calls() {
        let b = TokenBucket::new(200.0, 1);
        let t = Instant::now();
        for _ in 0..11 {
            b.acquire();
        }
        // 10 refills at 200/s need at least ~50 ms.
        assert!(t.elapsed() >= Duration::from_millis(45));
    }
}
