use serde::{Deserialize, Serialize};

/// Lower edge of the first regular bucket (1 µs).
pub const MIN_TRACKED_NS: u64 = 1_000;
/// Upper edge of the last regular bucket (10 s).
pub const MAX_TRACKED_NS: u64 = 10_000_000_000;
/// Ratio between consecutive bucket edges.
pub const BUCKET_GROWTH: f64 = 1.05;

fn regular_buckets() -> usize {
    ((MAX_TRACKED_NS as f64 / MIN_TRACKED_NS as f64).ln() / BUCKET_GROWTH.ln()).ceil() as usize
}

/// Fixed log-bucket latency histogram, 1 µs – 10 s with 5% wide buckets.
///
/// Bucket 0 collects values below 1 µs, the last bucket values at or above
/// 10 s. Quantiles are reported as the geometric centre of their bucket
/// (clamped to the observed min/max), so the relative error inside the
/// tracked range stays below the bucket width.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyHistogram {
    counts: Vec<u64>,
    total: u64,
    min: u64,
    max: u64,
}

impl Default for LatencyHistogram {
    fn default() -> Self {
        LatencyHistogram {
            counts: vec![0; regular_buckets() + 2],
            total: 0,
            min: u64::MAX,
            max: 0,
        }
    }
}

impl LatencyHistogram {
    pub fn new() -> Self {
        Self::default()
    }

    fn bucket_of(&self, v: u64) -> usize {
        if v < MIN_TRACKED_NS {
            return 0;
        }
        if v >= MAX_TRACKED_NS {
            return self.counts.len() - 1;
        }
        let idx = ((v as f64 / MIN_TRACKED_NS as f64).ln() / BUCKET_GROWTH.ln()).floor() as usize;
        (1 + idx).min(self.counts.len() - 2)
    }

    fn bucket_edges(&self, bucket: usize) -> (f64, f64) {
        if bucket == 0 {
            return (0.0, MIN_TRACKED_NS as f64);
        }
        if bucket == self.counts.len() - 1 {
            return (MAX_TRACKED_NS as f64, self.max.max(MAX_TRACKED_NS) as f64);
        }
        let lo = MIN_TRACKED_NS as f64 * BUCKET_GROWTH.powi(bucket as i32 - 1);
        (lo, lo * BUCKET_GROWTH)
    }

    pub fn record(&mut self, value_ns: u64) {
        let b = self.bucket_of(value_ns);
        self.counts[b] += 1;
        self.total += 1;
        self.min = self.min.min(value_ns);
        self.max = self.max.max(value_ns);
    }

    pub fn count(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn min(&self) -> Option<u64> {
        (self.total > 0).then_some(self.min)
    }

    pub fn max(&self) -> Option<u64> {
        (self.total > 0).then_some(self.max)
    }

    /// Estimated `q`-quantile (`0 < q <= 1`) using the nearest-rank rule.
    pub fn quantile(&self, q: f64) -> Option<u64> {
        if self.total == 0 {
            return None;
        }
        let rank = ((q.clamp(0.0, 1.0) * self.total as f64).ceil() as u64).max(1);
        let mut seen = 0;
        for (b, &c) in self.counts.iter().enumerate() {
            seen += c;
            if seen >= rank {
                let (lo, hi) = self.bucket_edges(b);
                let lo = lo.max(self.min as f64);
                let hi = hi.min(self.max as f64);
                let centre = if lo > 0.0 { (lo * hi).sqrt() } else { (lo + hi) / 2.0 };
                return Some((centre.round() as u64).clamp(self.min, self.max));
            }
        }
        Some(self.max)
    }

    pub fn merge(&mut self, other: &LatencyHistogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
    }
}
