use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SampleRng;

/// Axis-aligned box `[lo_1, hi_1] x ... x [lo_D, hi_D]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let b = Self { lo, hi };
        b.validate()?;
        Ok(b)
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.is_empty() || self.lo.len() != self.hi.len() {
            return Err(Error::Config(format!(
                "box bounds must be nonempty and of equal length (got {} and {})",
                self.lo.len(),
                self.hi.len()
            )));
        }
        for (d, (l, h)) in self.lo.iter().zip(&self.hi).enumerate() {
            if !(l.is_finite() && h.is_finite() && l < h) {
                return Err(Error::Config(format!(
                    "empty box: side {} is [{l}, {h}]",
                    d + 1
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    pub fn sample(&self, rng: &mut SampleRng) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| rng.uniform_in(l, h))
            .collect()
    }

    /// Largest `|x_d|` over the box, coordinate `d` 0-based.
    pub fn max_abs(&self, d: usize) -> f64 {
        self.lo[d].abs().max(self.hi[d].abs())
    }
}
