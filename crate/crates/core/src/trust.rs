//! Bayesian suspicious levels.
//!
//! Each sensor accumulates the log-density of its reports under the
//! honest-sensor predictive distribution. With an identical (cancelling)
//! attacker likelihood, the posterior that sensor `n` is the attacker is
//!
//! ```text
//! pi_n = exp(-l_n) / (prior_odds + sum_m exp(-l_m))
//! ```
//!
//! where `prior_odds` is the prior ratio P(no attacker) / P(one attacker).
//! `prior_odds = 0` is the "there is exactly one attacker" model.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::estimator::PredictiveDistribution;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Log-density of `N(mean, var)` at `y`.
pub fn gaussian_log_density(y: f64, mean: f64, var: f64) -> f64 {
    let d = y - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

/// Per-sensor honest log-likelihoods and the suspicious levels derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct TrustState {
    loglik: Vec<f64>,
    pi: Vec<f64>,
    prior_odds: f64,
    forgetting: f64,
}

impl TrustState {
    /// `forgetting = 1` keeps the full history; smaller values discount old
    /// slots geometrically so a sensor can regain trust.
    pub fn new(n_sensors: usize, prior_odds: f64, forgetting: f64) -> Result<Self> {
        if n_sensors == 0 {
            return Err(Error::config("sensors", "need at least one sensor"));
        }
        if !(prior_odds >= 0.0 && prior_odds.is_finite()) {
            return Err(Error::config("prior_odds", format!("must be finite and >= 0, got {prior_odds}")));
        }
        if !(forgetting > 0.0 && forgetting <= 1.0) {
            return Err(Error::config("forgetting", format!("must lie in (0, 1], got {forgetting}")));
        }
        let loglik = vec![0.0; n_sensors];
        let pi = suspicious_levels(&loglik, prior_odds);
        Ok(Self {
            loglik,
            pi,
            prior_odds,
            forgetting,
        })
    }

    /// Restores a state from accumulated log-likelihoods.
    pub fn from_loglik(loglik: Vec<f64>, prior_odds: f64) -> Result<Self> {
        let mut state = Self::new(loglik.len(), prior_odds, 1.0)?;
        if loglik.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite("log-likelihood".into()));
        }
        state.pi = suspicious_levels(&loglik, prior_odds);
        state.loglik = loglik;
        Ok(state)
    }

    pub fn loglik(&self) -> &[f64] {
        &self.loglik
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn prior_odds(&self) -> f64 {
        self.prior_odds
    }

    /// Posterior probability that no sensor is attacking, `1 - sum pi`.
    pub fn no_attacker_probability(&self) -> f64 {
        (1.0 - self.pi.iter().sum::<f64>()).max(0.0)
    }

    /// Folds one slot of reports into the log-likelihoods. A slot containing a
    /// non-finite density is rejected and the state is left untouched.
    pub fn slot_update(&mut self, preds: &[PredictiveDistribution], y: &DVector<f64>) -> Result<()> {
        let n = self.loglik.len();
        if preds.len() != n {
            return Err(Error::dim("predictive distributions", n, preds.len()));
        }
        if y.len() != n {
            return Err(Error::dim("observation", n, y.len()));
        }
        let mut increments = Vec::with_capacity(n);
        for (i, p) in preds.iter().enumerate() {
            if p.sensor != i {
                return Err(Error::InvalidSensor { index: p.sensor, count: n });
            }
            let inc = if p.var > 0.0 {
                gaussian_log_density(y[i], p.mean, p.var)
            } else {
                f64::NAN
            };
            if !inc.is_finite() {
                log::warn!(
                    "rejecting trust update: sensor {} report {} against N({}, {})",
                    i + 1,
                    y[i],
                    p.mean,
                    p.var
                );
                return Err(Error::NonFinite(format!("log-density of sensor {}", i + 1)));
            }
            increments.push(inc);
        }
        for (l, inc) in self.loglik.iter_mut().zip(increments) {
            *l = self.forgetting * *l + inc;
        }
        self.pi = suspicious_levels(&self.loglik, self.prior_odds);
        Ok(())
    }

    /// Smallest-index sensor whose suspicious level exceeds `threshold`.
    pub fn detect(&self, threshold: f64) -> Option<usize> {
        detect(&self.pi, threshold)
    }
}

/// `pi_n = exp(-l_n) / (prior_odds + sum_m exp(-l_m))`, evaluated in the log
/// domain so that sums over thousands of slots neither overflow nor underflow
/// to an undefined ratio.
pub fn suspicious_levels(loglik: &[f64], prior_odds: f64) -> Vec<f64> {
    let log_prior = if prior_odds > 0.0 {
        prior_odds.ln()
    } else {
        f64::NEG_INFINITY
    };
    let shift = loglik
        .iter()
        .map(|l| -l)
        .fold(log_prior, f64::max);
    let weights: Vec<f64> = loglik.iter().map(|l| (-l - shift).exp()).collect();
    let denom = (log_prior - shift).exp() + weights.iter().sum::<f64>();
    weights.into_iter().map(|w| w / denom).collect()
}

/// Smallest index with `pi[n] > threshold`.
pub fn detect(pi: &[f64], threshold: f64) -> Option<usize> {
    pi.iter().position(|&p| p > threshold)
}
