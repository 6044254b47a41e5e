//! Streaming mean / variance / standard error.
//!
//! The standard error (sample standard deviation over `sqrt(n)`) is what the
//! analyst reports as the data-quality signal of a measurement.

use serde::{Deserialize, Serialize};

/// Welford accumulator with Chan et al. pairwise merge.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StatAccumulator {
    n: u64,
    mean: f64,
    m2: f64,
}

impl StatAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_slice(xs: &[f64]) -> Self {
        let mut acc = Self::new();
        acc.extend(xs.iter().copied());
        acc
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Sum of squared deviations from the mean.
    pub fn m2(&self) -> f64 {
        self.m2
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn update(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
        // Rounding can push m2 a hair below zero on near-constant input.
        if self.m2 < 0.0 {
            self.m2 = 0.0;
        }
    }

    pub fn extend<I: IntoIterator<Item = f64>>(&mut self, xs: I) {
        for x in xs {
            self.update(x);
        }
    }

    /// Sample variance, `None` below two observations.
    pub fn variance(&self) -> Option<f64> {
        (self.n >= 2).then(|| self.m2 / (self.n - 1) as f64)
    }

    pub fn std_dev(&self) -> Option<f64> {
        self.variance().map(f64::sqrt)
    }

    /// Standard error of the mean; `f64::INFINITY` while fewer than two
    /// observations exist so that "no data yet" never satisfies a threshold.
    pub fn stderr(&self) -> f64 {
        match self.std_dev() {
            Some(sd) => sd / (self.n as f64).sqrt(),
            None => f64::INFINITY,
        }
    }

    /// Combine two accumulators as if one had seen both sequences.
    pub fn merge(&self, other: &Self) -> Self {
        if other.n == 0 {
            return *self;
        }
        if self.n == 0 {
            return *other;
        }
        let n = self.n + other.n;
        let (na, nb, nf) = (self.n as f64, other.n as f64, n as f64);
        let delta = other.mean - self.mean;
        // Written so that merge(a, b) == merge(b, a) bit-for-bit.
        let mean = (na * self.mean + nb * other.mean) / nf;
        let m2 = self.m2 + other.m2 + delta * delta * (na * nb) / nf;
        Self { n, mean, m2 }
    }
}

impl FromIterator<f64> for StatAccumulator {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = Self::new();
        acc.extend(iter);
        acc
    }
}
