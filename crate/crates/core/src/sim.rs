//! Closed-loop realizations: plant, attacker, filter bank, trust evaluator
//! and LQR controller coupled slot by slot.

use std::sync::Arc;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{running_cost, solve_dare, weighted_estimate, LqrConfig, LqrSolution};
use crate::error::{Error, Result};
use crate::estimator::{FilterBank, DEFAULT_INITIAL_VARIANCE};
use crate::linsys::{case_study_model, LinearSystemModel, PlantState};
use crate::threat::{AttackMode, AttackerConfig};
use crate::trust::{suspicious_levels, TrustState};

pub const DEFAULT_DETECTION_THRESHOLD: f64 = 0.7;
pub const DEFAULT_HORIZON: usize = 200;

/// Which state estimate drives the controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    /// Believe every report: use the all-sensor filter.
    FullTrust,
    /// Suspicion-weighted average of the leave-one-out estimates.
    Weighted,
    /// All-sensor filter until a detection, then permanently drop the
    /// detected sensor.
    OmitDetected,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub model: Arc<LinearSystemModel>,
    pub lqr: LqrConfig,
    pub attacker: AttackerConfig,
    pub horizon: usize,
    pub seed: u64,
    pub control_mode: ControlMode,
    pub prior_odds: f64,
    pub detection_threshold: f64,
    /// Prior variance of the initial plant state and of the filters' initial estimate.
    pub initial_variance: f64,
    pub forgetting: f64,
    /// Give the full-observation filter weight `1 - sum pi` in the weighted estimate.
    pub include_full_filter_weight: bool,
}

impl SimConfig {
    /// Case-study plant with `Q = I`, `Pc = 0.01 I` and default settings.
    pub fn case_study(attacker: AttackerConfig) -> Self {
        let model = Arc::new(case_study_model());
        let lqr = LqrConfig::scaled_identity(model.n_states(), model.n_inputs(), 1.0, 0.01)
            .expect("identity weights are positive definite");
        Self::new(model, lqr, attacker)
    }

    pub fn new(model: Arc<LinearSystemModel>, lqr: LqrConfig, attacker: AttackerConfig) -> Self {
        Self {
            model,
            lqr,
            attacker,
            horizon: DEFAULT_HORIZON,
            seed: 0,
            control_mode: ControlMode::Weighted,
            prior_odds: 0.0,
            detection_threshold: DEFAULT_DETECTION_THRESHOLD,
            initial_variance: DEFAULT_INITIAL_VARIANCE,
            forgetting: 1.0,
            include_full_filter_weight: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::config("horizon", "must be at least 1"));
        }
        if !(self.detection_threshold > 0.0 && self.detection_threshold < 1.0) {
            return Err(Error::config(
                "detection_threshold",
                format!("must lie in (0, 1), got {}", self.detection_threshold),
            ));
        }
        if !(self.initial_variance > 0.0 && self.initial_variance.is_finite()) {
            return Err(Error::config(
                "initial_variance",
                format!("must be finite and > 0, got {}", self.initial_variance),
            ));
        }
        self.attacker.validate(Some(self.model.n_sensors()))?;
        // surfaces prior_odds / forgetting range errors
        TrustState::new(self.model.n_sensors(), self.prior_odds, self.forgetting)?;
        Ok(())
    }
}

/// Telemetry of one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotRecord {
    pub t: u64,
    pub pi: Vec<f64>,
    pub cost: f64,
    pub state_norm: f64,
    pub attacked: bool,
    pub detection: Option<usize>,
}

/// Outcome of one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub seed: u64,
    pub records: Vec<SlotRecord>,
    pub total_cost: f64,
    /// First slot at which some sensor crossed the threshold, and which one.
    pub first_detection: Option<(u64, usize)>,
    /// The first detection named a sensor that is not the attacker.
    pub false_alarm: bool,
}

impl ExperimentResult {
    pub fn horizon(&self) -> usize {
        self.records.len()
    }
}

/// A configuration with its Riccati solution, ready to run realizations.
#[derive(Debug, Clone)]
pub struct Simulation {
    cfg: SimConfig,
    lqr: Arc<LqrSolution>,
}

impl Simulation {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        let lqr = Arc::new(solve_dare(&cfg.model, &cfg.lqr)?);
        Ok(Self { cfg, lqr })
    }

    /// Reuses an existing solution; the caller guarantees it belongs to
    /// `cfg.model` and `cfg.lqr`.
    pub fn with_solution(cfg: SimConfig, lqr: Arc<LqrSolution>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, lqr })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn solution(&self) -> &Arc<LqrSolution> {
        &self.lqr
    }

    /// Runs the realization seeded by `cfg.seed`.
    pub fn run(&self) -> Result<ExperimentResult> {
        self.run_seeded(self.cfg.seed)
    }

    /// Runs one realization. Per slot: observe, corrupt, filter update, trust
    /// update, control, cost, plant step, filter predict.
    pub fn run_seeded(&self, seed: u64) -> Result<ExperimentResult> {
        let cfg = &self.cfg;
        let model = &cfg.model;
        let mut plant_rng = ChaCha8Rng::seed_from_u64(seed);
        let mut attack_rng = ChaCha8Rng::seed_from_u64(seed);
        attack_rng.set_stream(1);

        let sd0 = cfg.initial_variance.sqrt();
        let x0 = DVector::from_fn(model.n_states(), |_, _| {
            sd0 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut plant_rng)
        });
        let mut state = PlantState::new(x0);
        let mut bank = FilterBank::new(model.clone(), cfg.initial_variance)?;
        let mut trust = TrustState::new(model.n_sensors(), cfg.prior_odds, cfg.forgetting)?;

        let mut records = Vec::with_capacity(cfg.horizon);
        let mut total_cost = 0.0;
        let mut first_detection = None;
        let mut omitted: Option<usize> = None;

        for t in 0..cfg.horizon as u64 {
            let mut y = model.observe(&state, &mut plant_rng)?;
            let attacked = cfg.attacker.corrupt(&mut y, &mut attack_rng).is_some();
            bank.update(&y)?;
            let preds = bank.predictive_all()?;
            trust.slot_update(&preds, &y)?;
            let detection = trust.detect(cfg.detection_threshold);
            if first_detection.is_none() {
                first_detection = detection.map(|n| (t, n));
            }

            let xhat = match cfg.control_mode {
                ControlMode::FullTrust => bank.full().mean.clone(),
                ControlMode::Weighted => {
                    let estimate = if cfg.include_full_filter_weight {
                        weighted_estimate(&bank, trust.pi(), Some(trust.no_attacker_probability()))
                    } else {
                        // pi / sum(pi) does not depend on prior_odds; the
                        // one-attacker levels avoid underflow when prior_odds > 0
                        weighted_estimate(&bank, &suspicious_levels(trust.loglik(), 0.0), None)
                    };
                    match estimate {
                        Ok(x) => x,
                        Err(Error::ZeroWeights) => bank.full().mean.clone(),
                        Err(e) => return Err(e),
                    }
                }
                ControlMode::OmitDetected => {
                    if omitted.is_none() {
                        omitted = detection;
                    }
                    match omitted.and_then(|n| bank.member(n)) {
                        Some(member) => member.mean.clone(),
                        None => bank.full().mean.clone(),
                    }
                }
            };
            let u = self.lqr.act(&xhat);
            let cost = running_cost(&state.x, &u, &cfg.lqr, t);
            total_cost += cost;
            records.push(SlotRecord {
                t,
                pi: trust.pi().to_vec(),
                cost,
                state_norm: state.x.norm(),
                attacked,
                detection,
            });

            state = model.step(&state, &u, &mut plant_rng)?;
            bank.predict(&u)?;
        }

        let false_alarm = match first_detection {
            Some((_, n)) => cfg.attacker.mode == AttackMode::None || n != cfg.attacker.target,
            None => false,
        };
        Ok(ExperimentResult {
            seed,
            records,
            total_cost,
            first_detection,
            false_alarm,
        })
    }

    /// Runs `realizations` independent realizations with seeds
    /// `derive_seed(seed_base, r)`. Failures are kept per realization.
    pub fn run_batch(&self, realizations: usize, seed_base: u64) -> Vec<Result<ExperimentResult>> {
        (0..realizations)
            .into_par_iter()
            .map(|r| self.run_seeded(derive_seed(seed_base, r as u64)))
            .collect()
    }
}

/// One realization of `cfg`, seeded by `cfg.seed`.
pub fn run(cfg: &SimConfig) -> Result<ExperimentResult> {
    Simulation::new(cfg.clone())?.run()
}

/// A batch of realizations. Setup failures (invalid config, unsolvable
/// Riccati equation) abort; per-realization failures are recorded.
pub fn run_batch(
    cfg: &SimConfig,
    realizations: usize,
    seed_base: u64,
) -> Result<Vec<Result<ExperimentResult>>> {
    if realizations == 0 {
        return Err(Error::config("realizations", "must be at least 1"));
    }
    Ok(Simulation::new(cfg.clone())?.run_batch(realizations, seed_base))
}

/// Seed of realization `index` in a batch seeded by `base` (splitmix64 mix).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(base ^ mix(index))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(mode: ControlMode, attacker: AttackerConfig) -> SimConfig {
        let mut cfg = SimConfig::case_study(attacker);
        cfg.control_mode = mode;
        cfg.horizon = 50;
        cfg.seed = 4;
        cfg
    }

    #[test]
    fn horizon_one_yields_one_record() {
        let mut cfg = quick(ControlMode::Weighted, AttackerConfig::none());
        cfg.horizon = 1;
        let res = run(&cfg).unwrap();
        assert_eq!(res.records.len(), 1);
        assert_eq!(res.records[0].t, 0);
    }

    #[test]
    fn runs_are_deterministic() {
        let attacker = AttackerConfig::new(0, AttackMode::Replace, 0.2, 0.1).unwrap();
        let cfg = quick(ControlMode::Weighted, attacker);
        assert_eq!(run(&cfg).unwrap(), run(&cfg).unwrap());
        let mut other = cfg.clone();
        other.seed = 5;
        assert_ne!(run(&cfg).unwrap().total_cost, run(&other).unwrap().total_cost);
    }

    #[test]
    fn total_cost_is_sum_of_slot_costs() {
        let attacker = AttackerConfig::new(0, AttackMode::Additive, 0.3, 100.0).unwrap();
        let res = run(&quick(ControlMode::FullTrust, attacker)).unwrap();
        let sum: f64 = res.records.iter().map(|r| r.cost).sum();
        assert!((sum - res.total_cost).abs() <= 1e-6 * res.total_cost.abs());
        assert!(res.records.windows(2).all(|w| w[1].t == w[0].t + 1));
    }

    #[test]
    fn plant_realization_is_independent_of_attack_stream() {
        // with no attack, every control mode sees identical reports at slot 0
        let a = run(&quick(ControlMode::FullTrust, AttackerConfig::none())).unwrap();
        let b = run(&quick(ControlMode::Weighted, AttackerConfig::none())).unwrap();
        assert_eq!(a.records[0].state_norm, b.records[0].state_norm);
        assert_eq!(a.records[0].pi, b.records[0].pi);
    }

    #[test]
    fn batch_matches_single_runs() {
        let attacker = AttackerConfig::new(0, AttackMode::Replace, 0.2, 0.1).unwrap();
        let cfg = quick(ControlMode::Weighted, attacker);
        let batch = run_batch(&cfg, 3, 17).unwrap();
        for (r, res) in batch.iter().enumerate() {
            let mut single = cfg.clone();
            single.seed = derive_seed(17, r as u64);
            assert_eq!(res.as_ref().unwrap(), &run(&single).unwrap());
        }
        assert!(run_batch(&cfg, 0, 1).is_err());
    }

    #[test]
    fn omit_detected_switches_permanently() {
        let attacker = AttackerConfig::new(0, AttackMode::Additive, 0.5, 100.0).unwrap();
        let mut cfg = quick(ControlMode::OmitDetected, attacker);
        cfg.horizon = 200;
        let res = run(&cfg).unwrap();
        assert!(res.first_detection.is_some());
    }

    #[test]
    fn rejects_invalid_config() {
        let mut cfg = quick(ControlMode::Weighted, AttackerConfig::none());
        cfg.horizon = 0;
        assert!(run(&cfg).is_err());
        let mut cfg = quick(ControlMode::Weighted, AttackerConfig::none());
        cfg.detection_threshold = 1.0;
        assert!(run(&cfg).is_err());
        let mut cfg = quick(ControlMode::Weighted, AttackerConfig::none());
        cfg.attacker.target = 7;
        cfg.attacker.mode = AttackMode::Replace;
        assert!(run(&cfg).is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|r| derive_seed(42, r)).collect();
        assert_eq!(seeds.len(), 1000);
    }
}
