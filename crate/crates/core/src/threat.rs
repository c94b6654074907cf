//! Single-sensor report attacker.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    /// No attack; reports pass through.
    None,
    /// The target's report is replaced by `g ~ N(0, amplitude)`.
    Replace,
    /// `g ~ N(0, amplitude)` is added to the target's report.
    Additive,
}

/// Attacker behaviour against one target sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackerConfig {
    /// Zero-based sensor index.
    pub target: usize,
    pub mode: AttackMode,
    /// Per-slot probability that the attack fires.
    pub frequency: f64,
    /// Variance of the injected Gaussian.
    pub amplitude: f64,
}

impl AttackerConfig {
    pub fn new(target: usize, mode: AttackMode, frequency: f64, amplitude: f64) -> Result<Self> {
        let cfg = Self {
            target,
            mode,
            frequency,
            amplitude,
        };
        cfg.validate(None)?;
        Ok(cfg)
    }

    pub fn none() -> Self {
        Self {
            target: 0,
            mode: AttackMode::None,
            frequency: 0.0,
            amplitude: 0.0,
        }
    }

    /// Checks parameter ranges and, when given, the target against the sensor count.
    pub fn validate(&self, n_sensors: Option<usize>) -> Result<()> {
        if !(0.0..=1.0).contains(&self.frequency) {
            return Err(Error::config(
                "attacker.frequency",
                format!("must lie in [0, 1], got {}", self.frequency),
            ));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::config(
                "attacker.amplitude",
                format!("must be finite and >= 0, got {}", self.amplitude),
            ));
        }
        if let Some(count) = n_sensors {
            if self.target >= count {
                return Err(Error::InvalidSensor {
                    index: self.target,
                    count,
                });
            }
        }
        Ok(())
    }

    /// Possibly corrupts the target entry of `y` in place. Returns the injected
    /// value when the attack fired this slot, `None` otherwise.
    ///
    /// Entries other than the target are never touched.
    pub fn corrupt<R: Rng + ?Sized>(&self, y: &mut DVector<f64>, rng: &mut R) -> Option<f64> {
        if self.mode == AttackMode::None || self.target >= y.len() {
            return None;
        }
        if !rng.random_bool(self.frequency) {
            return None;
        }
        let g = Normal::new(0.0, self.amplitude.sqrt())
            .expect("amplitude validated")
            .sample(rng);
        match self.mode {
            AttackMode::Replace => y[self.target] = g,
            AttackMode::Additive => y[self.target] += g,
            AttackMode::None => unreachable!(),
        }
        Some(g)
    }
}
