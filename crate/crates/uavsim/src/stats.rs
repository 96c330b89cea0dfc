//! Empirical distributions, percentiles, and summary emission shared by all
//! studies. A [`CdfSummary`] is a mergeable monoid: parallel workers build
//! partial summaries that are merged deterministically by worker index.

use serde::Serialize;

use crate::error::SimError;

/// Schema version stamped into every CSV/JSON emission.
pub const SCHEMA_VERSION: &str = "uavsim-csv-1";

/// Empirical distribution with percentile queries.
///
/// Samples are kept sorted ascending. Quantiles use the Hazen convention:
/// the k-th order statistic sits at probability (k - 0.5) / n, with linear
/// interpolation in between and clamping at the extremes.
#[derive(Debug, Clone, Default, Serialize)]
pub struct CdfSummary {
    samples: Vec<f64>,
}

impl CdfSummary {
    pub fn new() -> Self {
        Self { samples: Vec::new() }
    }

    /// Builds a summary from raw samples. Non-finite values are dropped
    /// (the -inf sentinel used for zero-power links is excluded here).
    pub fn from_samples(samples: impl IntoIterator<Item = f64>) -> Self {
        let mut s = Self::new();
        for x in samples {
            s.push(x);
        }
        s
    }

    pub fn push(&mut self, x: f64) {
        if x.is_finite() {
            let idx = self.samples.partition_point(|&v| v <= x);
            self.samples.insert(idx, x);
        }
    }

    /// Bulk insert: append finite values, then re-sort once.
    pub fn extend(&mut self, xs: &[f64]) {
        self.samples.extend(xs.iter().copied().filter(|x| x.is_finite()));
        self.samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Merges another summary into this one; equivalent to summarizing the
    /// concatenation of both sample sets.
    pub fn merge(&mut self, other: &CdfSummary) {
        self.samples.extend_from_slice(&other.samples);
        self.samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    }

    /// Hazen-convention empirical quantile, 0 < p < 1.
    pub fn percentile(&self, p: f64) -> Result<f64, SimError> {
        if self.samples.is_empty() {
            return Err(SimError::Config("percentile of empty summary".into()));
        }
        if !(0.0..=1.0).contains(&p) || p == 0.0 || p == 1.0 {
            return Err(SimError::Config(format!("percentile p={p} out of (0,1)")));
        }
        let n = self.samples.len() as f64;
        let h = p * n + 0.5; // Hazen plotting position inverse
        let k = h.floor();
        let frac = h - k;
        let lo = ((k as isize) - 1).clamp(0, self.samples.len() as isize - 1) as usize;
        let hi = (k as isize).clamp(0, self.samples.len() as isize - 1) as usize;
        Ok(self.samples[lo] * (1.0 - frac) + self.samples[hi] * frac)
    }

    pub fn median(&self) -> Result<f64, SimError> {
        self.percentile(0.5)
    }

    /// Fraction of samples strictly above the threshold.
    pub fn fraction_above(&self, threshold: f64) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let below = self.samples.partition_point(|&v| v <= threshold);
        (self.samples.len() - below) as f64 / self.samples.len() as f64
    }

    /// Empirical CDF value at x: fraction of samples <= x.
    pub fn cdf_at(&self, x: f64) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.partition_point(|&v| v <= x) as f64 / self.samples.len() as f64
    }

    /// Evenly indexed (value, cdf) pairs for emission, at most `max_points`.
    pub fn curve(&self, max_points: usize) -> Vec<(f64, f64)> {
        let n = self.samples.len();
        if n == 0 {
            return Vec::new();
        }
        let step = (n / max_points).max(1);
        let mut pts: Vec<(f64, f64)> = (0..n)
            .step_by(step)
            .map(|i| (self.samples[i], (i + 1) as f64 / n as f64))
            .collect();
        if pts.last().map(|p| p.0) != Some(self.samples[n - 1]) {
            pts.push((self.samples[n - 1], 1.0));
        }
        pts
    }
}

/// True iff `a` stochastically dominates `b` up to `tolerance`:
/// CDF_a(x) <= CDF_b(x) + tolerance on the merged support grid.
pub fn stochastic_dominance(a: &CdfSummary, b: &CdfSummary, tolerance: f64) -> bool {
    assert!(!a.is_empty() && !b.is_empty(), "dominance of empty summary");
    let grid = a.samples.iter().chain(b.samples.iter());
    for &x in grid {
        if a.cdf_at(x) > b.cdf_at(x) + tolerance {
            return false;
        }
    }
    true
}

/// Kolmogorov-Smirnov distance between two empirical distributions.
pub fn ks_distance(a: &CdfSummary, b: &CdfSummary) -> f64 {
    let mut d: f64 = 0.0;
    for &x in a.samples.iter().chain(b.samples.iter()) {
        d = d.max((a.cdf_at(x) - b.cdf_at(x)).abs());
    }
    d
}
