//! Streaming mean and variance with an order-deterministic merge.

use rayon::prelude::*;

/// Trajectories folded sequentially before partial results merge.
pub const CHUNK: usize = 64;

/// Statistics of `f(0), ..., f(n - 1)` evaluated in parallel. Partial
/// results cover fixed index ranges and merge in index order, so the result
/// does not depend on the number of worker threads.
pub fn par_stats<E, F>(n: usize, f: F) -> Result<RunningStats, E>
where
    E: Send,
    F: Fn(usize) -> Result<f64, E> + Sync,
{
    let parts: Vec<Result<RunningStats, E>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = RunningStats::default();
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                acc.push(f(i)?);
            }
            Ok(acc)
        })
        .collect();
    let mut total = RunningStats::default();
    for part in parts {
        total.merge(&part?);
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Combine with another accumulator as if its samples were pushed after ours.
    pub fn merge(&mut self, other: &RunningStats) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        let w = other.count as f64 / n;
        self.mean += delta * w;
        self.m2 += other.m2 + delta * delta * self.count as f64 * w;
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> Option<f64> {
        (self.count > 1).then(|| self.m2 / (self.count - 1) as f64)
    }

    /// Standard error of the mean.
    pub fn stderr(&self) -> Option<f64> {
        self.variance().map(|v| (v / self.count as f64).sqrt())
    }
}
