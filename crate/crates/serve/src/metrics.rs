use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::Mutex;

/// Request counters plus a sliding window of recent latencies.
#[derive(Debug)]
pub(crate) struct Metrics {
    pub requests: AtomicU64,
    pub errors: AtomicU64,
    pub cache_hits: AtomicU64,
    pub cache_misses: AtomicU64,
    pub skipped_history: AtomicU64,
    window: Mutex<VecDeque<f64>>,
    capacity: usize,
}

impl Metrics {
    pub fn new(capacity: usize) -> Self {
        Self {
            requests: AtomicU64::new(0),
            errors: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
            cache_misses: AtomicU64::new(0),
            skipped_history: AtomicU64::new(0),
            window: Mutex::new(VecDeque::with_capacity(capacity)),
            capacity: capacity.max(1),
        }
    }

    pub fn bump(counter: &AtomicU64, by: u64) {
        counter.fetch_add(by, Ordering::Relaxed);
    }

    pub fn get(counter: &AtomicU64) -> u64 {
        counter.load(Ordering::Relaxed)
    }

    pub fn record_latency(&self, ms: f64) {
        let mut w = self.window.lock();
        if w.len() == self.capacity {
            w.pop_front();
        }
        w.push_back(ms);
    }

    /// Nearest-rank quantiles of the window; zeros when empty.
    pub fn quantiles(&self, qs: &[f64]) -> Vec<f64> {
        let mut v: Vec<f64> = self.window.lock().iter().copied().collect();
        if v.is_empty() {
            return vec![0.0; qs.len()];
        }
        v.sort_by(f64::total_cmp);
        qs.iter()
            .map(|q| {
                let rank = (q * v.len() as f64).ceil().max(1.0) as usize;
                v[rank.min(v.len()) - 1]
            })
            .collect()
    }
}
