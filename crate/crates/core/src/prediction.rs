//! Per-point predictive distributions shared by every UQ backend.

use serde::{Deserialize, Serialize};

use crate::stats::{mean, population_std};

/// Predictive distribution of one test point, in kW/m².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    /// Member or posterior outputs; empty when the backend reports moments directly.
    pub samples: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation (divisor n) of the samples.
    pub std: f64,
    /// 100·std/|mean|, percent.
    pub rstd: f64,
    /// mean ∓ 2·std.
    pub interval_2sigma: (f64, f64),
    /// Set for single-valued predictions that carry no uncertainty at all.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub deterministic: bool,
}

impl PredictionSet {
    pub fn from_samples(samples: Vec<f64>) -> Self {
        let m = mean(&samples);
        let s = population_std(&samples, m);
        let mut p = Self::from_moments(m, s);
        p.samples = samples;
        p
    }

    pub fn from_moments(mean: f64, std: f64) -> Self {
        Self {
            samples: Vec::new(),
            mean,
            std,
            rstd: 100.0 * std / mean.abs(),
            interval_2sigma: (mean - 2.0 * std, mean + 2.0 * std),
            deterministic: false,
        }
    }

    /// A single value without uncertainty (stand-alone correlations).
    pub fn point(value: f64) -> Self {
        Self {
            deterministic: true,
            ..Self::from_moments(value, 0.0)
        }
    }

    /// Adds a constant to every sample (or to the mean when there are none).
    pub fn shifted(&self, offset: f64) -> Self {
        if self.samples.is_empty() {
            Self {
                deterministic: self.deterministic,
                ..Self::from_moments(self.mean + offset, self.std)
            }
        } else {
            Self::from_samples(self.samples.iter().map(|s| s + offset).collect())
        }
    }

    /// Drops the raw samples, keeping the moments.
    pub fn without_samples(mut self) -> Self {
        self.samples = Vec::new();
        self
    }
}
