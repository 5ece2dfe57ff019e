//! Scalar floating-point helpers: compensated summation and a stable
//! log-sum-exp.
//!
//! Everything downstream that accumulates many terms (objective values,
//! inner products with probability vectors, empirical moments) runs through
//! [`NeumaierSum`] in a fixed order, which keeps results reproducible and
//! immune to catastrophic cancellation at the magnitudes this crate sees.

use libm::{exp, fabs, log};

/// Compensated accumulator (Neumaier's variant of Kahan summation).
///
/// Tracks a running compensation term alongside the partial sum so that
/// adding values of wildly different magnitude, in either order, loses far
/// less precision than a bare `+=` loop. Addition order still matters for
/// bit-level reproducibility, so callers feed terms in a fixed order.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    compensation: f64,
}

impl NeumaierSum {
    pub const fn new() -> Self {
        Self { sum: 0.0, compensation: 0.0 }
    }

    /// Folds one term into the running sum.
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if fabs(self.sum) >= fabs(value) {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    /// The compensated total of everything added so far.
    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// `log(sum_i exp(z_i))`, evaluated with the max shifted out so that inputs
/// anywhere in the representable range (say `|z_i|` up to `1e6` and beyond)
/// neither overflow nor collapse to `-inf`.
///
/// An empty slice or all-`-inf` input yields `-inf`, the log of an empty
/// sum. Inputs must not contain NaN.
pub fn log_sum_exp(z: &[f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for &zi in z {
        if zi > max {
            max = zi;
        }
    }
    if !max.is_finite() {
        // Either empty / all -inf (the sum is zero) or a +inf dominates.
        return max;
    }
    let mut sum = NeumaierSum::new();
    for &zi in z {
        sum.add(exp(zi - max));
    }
    max + log(sum.value())
}
