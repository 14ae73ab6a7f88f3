//! Complex baseband signal carrier type.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// A sequence of complex baseband samples with a sample-rate annotation.
///
/// This is the universal payload between pipeline stages: the waveform
/// module produces it, every channel stage maps it to a new one, and the
/// receivers consume it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexSignal {
    pub samples: Vec<Complex64>,
    pub sample_rate_hz: f64,
}

impl ComplexSignal {
    pub fn new(samples: Vec<Complex64>, sample_rate_hz: f64) -> Self {
        Self {
            samples,
            sample_rate_hz,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Total energy, `sum |x[n]|^2`.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum()
    }

    /// Mean power, `energy / len`. Zero for an empty signal.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            self.energy() / self.samples.len() as f64
        }
    }

    /// Map every sample, keeping the sample rate.
    pub fn map<F: FnMut(Complex64) -> Complex64>(&self, f: F) -> Self {
        Self {
            samples: self.samples.iter().copied().map(f).collect(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.samples
            .iter()
            .all(|s| s.re.is_finite() && s.im.is_finite())
    }
}
