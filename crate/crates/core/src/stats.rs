//! Monte Carlo summaries.

use crate::math::sqrt;

/// A Monte Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiskEstimate {
    pub value: f64,
    pub std_err: f64,
    pub n_mc: usize,
}

impl RiskEstimate {
    pub fn exact(value: f64) -> Self {
        Self { value, std_err: 0.0, n_mc: 0 }
    }

    /// Combined standard error of the difference with an independent estimate.
    pub fn combined_se(&self, other: &RiskEstimate) -> f64 {
        sqrt(self.std_err * self.std_err + other.std_err * other.std_err)
    }
}

/// Streaming mean and variance (Welford).
#[derive(Clone, Copy, Debug, Default)]
pub struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std_err(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            sqrt(self.variance() / self.n as f64)
        }
    }

    pub fn estimate(&self) -> RiskEstimate {
        RiskEstimate { value: self.mean, std_err: self.std_err(), n_mc: self.n }
    }
}

/// Mean and standard error of a slice.
pub fn summarize(xs: &[f64]) -> RiskEstimate {
    let mut w = Welford::new();
    for &x in xs {
        w.push(x);
    }
    w.estimate()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welford_matches_two_pass() {
        let xs = [1.0, 2.5, -0.5, 4.0, 3.0];
        let e = summarize(&xs);
        let mean = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 4.0;
        assert!((e.value - mean).abs() < 1e-15);
        assert!((e.std_err - (var / 5.0).sqrt()).abs() < 1e-15);
    }
}
