use std::sync::atomic::{AtomicU64, Ordering};

/// Running count of multiply-adds performed by matrix products.
///
/// Only `matmul`, batched matmul and `linear` report here; softmax,
/// normalization and elementwise work is not counted.
#[derive(Debug, Default)]
pub struct MAddCounter {
    total: AtomicU64,
}

impl MAddCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&self, madds: u64) {
        self.total.fetch_add(madds, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.total.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.total.store(0, Ordering::Relaxed);
    }
}
