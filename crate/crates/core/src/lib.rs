//! Trust-weighted secure control of a linear plant whose sensor reports may
//! be forged by a single attacker.
//!
//! A bank of leave-one-out Kalman filters predicts each sensor's report from
//! the others, the prediction likelihoods feed a Bayesian suspicious level per
//! sensor, and an LQR controller acts on a suspicion-weighted state estimate.

pub mod cli;
pub mod controller;
pub mod error;
pub mod estimator;
pub mod linsys;
pub mod metrics;
pub mod sim;
pub mod threat;
pub mod trust;

pub use error::{Error, Result};
