//! Online cost and variance estimators, plus normality summaries.
//!
//! While a solver walks its iterates `v_0, v_1, ..`, each incoming sample
//! `X_k` is scored against the potential from before the step,
//! `h_k = h(X_k, v_{k-1})`. Averaging the negated scores gives the running
//! cost estimate
//!
//! ```text
//! W_hat_n = -(1/n) * sum_{k=1..n} h_k
//! ```
//!
//! and the same stream yields the running variance of the scores. Both are
//! maintained from two compensated accumulators (sum and sum of squares);
//! the variance is clamped at zero because the difference of the two
//! moments can round slightly negative when the scores barely vary.
//!
//! [`normality_stats`] post-processes a batch of standardized terminal
//! errors from replicated runs into the summary used to judge asymptotic
//! normality: sample mean and standard deviation, the Kolmogorov-Smirnov
//! distance to the standard normal, and a histogram.

use alloc::vec::Vec;
use libm::{erf, sqrt};

use crate::numeric::NeumaierSum;
use crate::Error;

/// Running mean/variance accumulator over per-sample scores.
#[derive(Debug, Clone, Default)]
pub struct RunningEstimators {
    n: u64,
    sum_h: NeumaierSum,
    sum_h2: NeumaierSum,
}

impl RunningEstimators {
    pub fn new() -> Self {
        Self::default()
    }

    /// Observations folded in so far.
    pub fn count(&self) -> u64 {
        self.n
    }

    /// Records one per-sample score.
    pub fn update(&mut self, h: f64) {
        self.sum_h.add(h);
        self.sum_h2.add(h * h);
        self.n += 1;
    }

    /// Running cost estimate; `None` before the first observation.
    pub fn w_hat(&self) -> Option<f64> {
        if self.n == 0 {
            return None;
        }
        Some(-self.sum_h.value() / self.n as f64)
    }

    /// Running variance of the scores, clamped at zero; `None` before the
    /// first observation.
    pub fn sigma2_hat(&self) -> Option<f64> {
        if self.n == 0 {
            return None;
        }
        let n = self.n as f64;
        let mean = self.sum_h.value() / n;
        let raw = self.sum_h2.value() / n - mean * mean;
        Some(raw.max(0.0))
    }
}

/// One histogram cell of a normality summary.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Count normalized so the histogram integrates to one.
    pub density: f64,
}

/// Distribution summary of a batch of standardized values.
#[derive(Debug, Clone)]
pub struct NormalitySummary {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 in the denominator).
    pub std: f64,
    /// Kolmogorov-Smirnov distance to the standard normal.
    pub ks_stat: f64,
    pub bins: Vec<HistogramBin>,
}

/// Standard normal cumulative distribution function.
pub fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / core::f64::consts::SQRT_2))
}

/// Summarizes a batch of values against the standard normal.
///
/// Requires at least 30 values (below that the summary says nothing) and a
/// positive bin count. Values must all be finite.
pub fn normality_stats(values: &[f64], bin_count: usize) -> Result<NormalitySummary, Error> {
    const MIN_VALUES: usize = 30;
    let n = values.len();
    if n < MIN_VALUES {
        return Err(Error::TooFewValues { needed: MIN_VALUES, got: n });
    }
    if bin_count == 0 {
        return Err(Error::InvalidParameter("bin count must be positive"));
    }
    for &x in values {
        if !x.is_finite() {
            return Err(Error::NonFinite("normality batch"));
        }
    }

    let mut sum = NeumaierSum::new();
    for &x in values {
        sum.add(x);
    }
    let mean = sum.value() / n as f64;
    let mut sq = NeumaierSum::new();
    for &x in values {
        let d = x - mean;
        sq.add(d * d);
    }
    let std = sqrt(sq.value() / (n as f64 - 1.0));

    // KS distance against the exact normal CDF on the sorted sample.
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values compare"));
    let mut ks: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let cdf = standard_normal_cdf(x);
        let below = i as f64 / n as f64;
        let above = (i + 1) as f64 / n as f64;
        ks = ks.max(libm::fabs(cdf - below)).max(libm::fabs(above - cdf));
    }

    let lo = sorted[0];
    let hi = sorted[n - 1];
    let span = hi - lo;
    let bins = if span > 0.0 {
        let width = span / bin_count as f64;
        let mut counts = alloc::vec![0usize; bin_count];
        for &x in values {
            let idx = (((x - lo) / width) as usize).min(bin_count - 1);
            counts[idx] += 1;
        }
        counts
            .iter()
            .enumerate()
            .map(|(i, &count)| HistogramBin {
                lo: lo + width * i as f64,
                hi: lo + width * (i + 1) as f64,
                count,
                density: count as f64 / (n as f64 * width),
            })
            .collect()
    } else {
        // Every value identical: one degenerate cell carrying all mass.
        alloc::vec![HistogramBin { lo, hi, count: n, density: 0.0 }]
    };

    Ok(NormalitySummary { count: n, mean, std, ks_stat: ks, bins })
}
