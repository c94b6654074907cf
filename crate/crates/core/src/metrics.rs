//! Batch aggregation: detection statistics, detection-time CDFs, ROC sweeps,
//! average costs and their CSV encodings.

use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::sim::{ControlMode, ExperimentResult, SimConfig, Simulation};

/// How a realization's first detection turned out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectionOutcome {
    /// The attacker was named first, at this slot.
    Detected(u64),
    /// An honest sensor was named first, at this slot.
    FalseAlarm(u64),
    /// Nobody crossed the threshold within the horizon.
    Undetected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionStats {
    pub outcomes: Vec<DetectionOutcome>,
}

impl DetectionStats {
    pub fn from_results<'a>(results: impl IntoIterator<Item = &'a ExperimentResult>) -> Self {
        let outcomes = results
            .into_iter()
            .map(|r| match r.first_detection {
                Some((t, _)) if r.false_alarm => DetectionOutcome::FalseAlarm(t),
                Some((t, _)) => DetectionOutcome::Detected(t),
                None => DetectionOutcome::Undetected,
            })
            .collect();
        Self { outcomes }
    }

    pub fn realizations(&self) -> usize {
        self.outcomes.len()
    }

    /// Slot of first correct detection per realization.
    pub fn detection_times(&self) -> Vec<Option<u64>> {
        self.outcomes
            .iter()
            .map(|o| match o {
                DetectionOutcome::Detected(t) => Some(*t),
                _ => None,
            })
            .collect()
    }

    pub fn detected(&self) -> usize {
        self.count(|o| matches!(o, DetectionOutcome::Detected(_)))
    }

    pub fn false_alarms(&self) -> usize {
        self.count(|o| matches!(o, DetectionOutcome::FalseAlarm(_)))
    }

    pub fn undetected(&self) -> usize {
        self.count(|o| matches!(o, DetectionOutcome::Undetected))
    }

    pub fn false_alarm_rate(&self) -> f64 {
        ratio(self.false_alarms(), self.realizations())
    }

    /// Share of non-false-alarm realizations that never detected the attacker.
    pub fn undetected_fraction(&self) -> f64 {
        ratio(self.undetected(), self.realizations() - self.false_alarms())
    }

    /// Mean slot of correct detection; false alarms and misses excluded.
    pub fn mean_delay(&self) -> Option<f64> {
        let times: Vec<u64> = self.detection_times().into_iter().flatten().collect();
        if times.is_empty() {
            None
        } else {
            Some(times.iter().sum::<u64>() as f64 / times.len() as f64)
        }
    }

    fn count(&self, pred: impl Fn(&DetectionOutcome) -> bool) -> usize {
        self.outcomes.iter().filter(|o| pred(o)).count()
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Empirical CDF of the correct-detection slot over realizations without a
/// false alarm, evaluated at slots `0..horizon`.
pub fn detection_cdf(stats: &DetectionStats, horizon: usize) -> Vec<(u64, f64)> {
    let eligible = stats.realizations() - stats.false_alarms();
    let mut counts = vec![0usize; horizon];
    for t in stats.detection_times().into_iter().flatten() {
        if (t as usize) < horizon {
            counts[t as usize] += 1;
        }
    }
    let mut running = 0;
    counts
        .into_iter()
        .enumerate()
        .map(|(slot, c)| {
            running += c;
            (slot as u64, ratio(running, eligible))
        })
        .collect()
}

/// One point of the delay / false-alarm trade-off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub mean_delay: Option<f64>,
    pub false_alarm_rate: f64,
    pub undetected_fraction: f64,
}

impl RocPoint {
    pub fn from_stats(threshold: f64, stats: &DetectionStats) -> Self {
        Self {
            threshold,
            mean_delay: stats.mean_delay(),
            false_alarm_rate: stats.false_alarm_rate(),
            undetected_fraction: stats.undetected_fraction(),
        }
    }
}

/// Successful realizations of a batch; errors are logged and dropped.
pub fn successes(batch: Vec<Result<ExperimentResult>>) -> Vec<ExperimentResult> {
    batch
        .into_iter()
        .filter_map(|r| match r {
            Ok(res) => Some(res),
            Err(e) => {
                log::warn!("realization failed: {e}");
                None
            }
        })
        .collect()
}

/// Runs one batch per detection threshold, all with the same realization
/// seeds so the points are paired.
pub fn roc_sweep(
    cfg: &SimConfig,
    thresholds: &[f64],
    realizations: usize,
    seed_base: u64,
) -> Result<Vec<RocPoint>> {
    if realizations == 0 {
        return Err(Error::config("realizations", "must be at least 1"));
    }
    let base = Simulation::new(cfg.clone())?;
    thresholds
        .iter()
        .map(|&threshold| {
            let mut c = cfg.clone();
            c.detection_threshold = threshold;
            let sim = Simulation::with_solution(c, Arc::clone(base.solution()))?;
            let results = successes(sim.run_batch(realizations, seed_base));
            Ok(RocPoint::from_stats(threshold, &DetectionStats::from_results(&results)))
        })
        .collect()
}

/// Mean over realizations of the per-slot average cost. NaN for an empty batch.
pub fn average_cost(results: &[ExperimentResult]) -> f64 {
    if results.is_empty() {
        return f64::NAN;
    }
    results
        .iter()
        .map(|r| r.total_cost / r.horizon().max(1) as f64)
        .sum::<f64>()
        / results.len() as f64
}

/// Average cost of the configured controller next to the full-trust baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostPoint {
    pub frequency: f64,
    pub amplitude: f64,
    pub cost: f64,
    pub full_trust_cost: f64,
}

/// Which attacker parameter a cost sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostAxis {
    Frequency,
    Amplitude,
}

/// For every sweep value, runs the configured control mode and the
/// full-trust baseline on the same realization seeds.
pub fn cost_sweep(
    cfg: &SimConfig,
    axis: CostAxis,
    values: &[f64],
    realizations: usize,
    seed_base: u64,
) -> Result<Vec<CostPoint>> {
    if realizations == 0 {
        return Err(Error::config("realizations", "must be at least 1"));
    }
    let base = Simulation::new(cfg.clone())?;
    values
        .iter()
        .map(|&value| {
            let mut c = cfg.clone();
            match axis {
                CostAxis::Frequency => c.attacker.frequency = value,
                CostAxis::Amplitude => c.attacker.amplitude = value,
            }
            let mut baseline = c.clone();
            baseline.control_mode = ControlMode::FullTrust;
            let run = |cfg: SimConfig| -> Result<f64> {
                let sim = Simulation::with_solution(cfg, Arc::clone(base.solution()))?;
                let ok = successes(sim.run_batch(realizations, seed_base));
                if ok.is_empty() {
                    return Err(Error::config("realizations", "every realization failed"));
                }
                Ok(average_cost(&ok))
            };
            Ok(CostPoint {
                frequency: c.attacker.frequency,
                amplitude: c.attacker.amplitude,
                cost: run(c)?,
                full_trust_cost: run(baseline)?,
            })
        })
        .collect()
}

fn write_comments<W: Write>(w: &mut W, comments: &[String]) -> std::io::Result<()> {
    for line in comments {
        writeln!(w, "# {line}")?;
    }
    Ok(())
}

/// Shortest round-trip form; exponent notation for very large or small magnitudes.
fn num(x: f64) -> String {
    format!("{x:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// `t,pi_1..pi_N,cost,state_norm,attacked`, one row per slot.
pub fn write_trace_csv<W: Write>(w: &mut W, result: &ExperimentResult, comments: &[String]) -> std::io::Result<()> {
    write_comments(w, comments)?;
    let n = result.records.first().map_or(0, |r| r.pi.len());
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("pi_{i}")));
    header.extend(["cost", "state_norm", "attacked"].map(String::from));
    out.write_record(&header)?;
    for r in &result.records {
        let mut row = vec![r.t.to_string()];
        row.extend(r.pi.iter().copied().map(num));
        row.push(num(r.cost));
        row.push(num(r.state_norm));
        row.push(u8::from(r.attacked).to_string());
        out.write_record(&row)?;
    }
    out.flush()
}

/// `slot,fraction`, one row per slot.
pub fn write_cdf_csv<W: Write>(w: &mut W, cdf: &[(u64, f64)], comments: &[String]) -> std::io::Result<()> {
    write_comments(w, comments)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["slot", "fraction"])?;
    for (slot, frac) in cdf {
        out.write_record([slot.to_string(), num(*frac)])?;
    }
    out.flush()
}

/// `threshold,mean_delay,false_alarm_rate`, one row per threshold. An empty
/// `mean_delay` means no correct detection at that threshold.
pub fn write_roc_csv<W: Write>(w: &mut W, points: &[RocPoint], comments: &[String]) -> std::io::Result<()> {
    write_comments(w, comments)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["threshold", "mean_delay", "false_alarm_rate"])?;
    for p in points {
        out.write_record([
            num(p.threshold),
            opt(p.mean_delay),
            num(p.false_alarm_rate),
        ])?;
    }
    out.flush()
}

/// `frequency,amplitude,cost,full_trust_cost`, one row per sweep point.
pub fn write_cost_csv<W: Write>(w: &mut W, points: &[CostPoint], comments: &[String]) -> std::io::Result<()> {
    write_comments(w, comments)?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["frequency", "amplitude", "cost", "full_trust_cost"])?;
    for p in points {
        out.write_record([
            num(p.frequency),
            num(p.amplitude),
            num(p.cost),
            num(p.full_trust_cost),
        ])?;
    }
    out.flush()
}
