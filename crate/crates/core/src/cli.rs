//! Experiment spec files and their execution.
//!
//! A spec is one JSON object:
//!
//! ```json
//! {
//!   "kind": "roc",
//!   "sim": { "model": "case_study", "attacker": { "target": 1, "mode": "replace",
//!            "frequency": 0.2, "amplitude": 0.1 } },
//!   "sweep": [0.5, 0.6, 0.7, 0.8, 0.9],
//!   "realizations": 200,
//!   "output": "roc.csv"
//! }
//! ```
//!
//! Unknown keys are rejected. Attacker targets are 1-based in files.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::{json, Value};

use crate::controller::LqrConfig;
use crate::error::Error;
use crate::linsys::{
    ContinuousCaseStudy, LinearSystemModel, DEFAULT_DT, DEFAULT_MEASUREMENT_NOISE,
    DEFAULT_PROCESS_NOISE,
};
use crate::metrics::{self, CostAxis, DetectionStats};
use crate::sim::{ControlMode, SimConfig, Simulation, DEFAULT_DETECTION_THRESHOLD, DEFAULT_HORIZON};
use crate::threat::{AttackMode, AttackerConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// A failure, split by the exit code it maps to.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn invalid(field: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("invalid value for `{field}`: {reason}"))
}

/// Library errors raised while building or validating a config.
fn from_setup(e: Error) -> CliError {
    match e {
        Error::Config { field, reason } => invalid(&format!("sim.{field}"), reason),
        Error::InvalidSensor { index, count } => invalid(
            "sim.attacker.target",
            format!("sensor {} does not exist ({count} sensors)", index + 1),
        ),
        other => CliError::Validation(other.to_string()),
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Trace,
    Cdf,
    Roc,
    CostVsFrequency,
    CostVsAmplitude,
}

impl ExperimentKind {
    pub fn needs_sweep(self) -> bool {
        matches!(
            self,
            ExperimentKind::Roc | ExperimentKind::CostVsFrequency | ExperimentKind::CostVsAmplitude
        )
    }

    fn name(self) -> &'static str {
        match self {
            ExperimentKind::Trace => "trace",
            ExperimentKind::Cdf => "cdf",
            ExperimentKind::Roc => "roc",
            ExperimentKind::CostVsFrequency => "cost_vs_frequency",
            ExperimentKind::CostVsAmplitude => "cost_vs_amplitude",
        }
    }
}

/// A matrix given either densely (list of rows) or as a multiple of the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Dense(Vec<Vec<f64>>),
}

impl MatrixSpec {
    /// An `n x n` matrix; scalars expand to multiples of the identity.
    fn resolve(&self, field: &str, n: usize) -> CliResult<DMatrix<f64>> {
        let m = self.square(field, n)?;
        if m.nrows() != n {
            return Err(invalid(field, format!("expected {n}x{n}, got {}x{}", m.nrows(), m.ncols())));
        }
        Ok(m)
    }

    /// A square matrix of any size; scalars expand to `n x n`.
    fn square(&self, field: &str, n: usize) -> CliResult<DMatrix<f64>> {
        if let MatrixSpec::Scalar(s) = self {
            return Ok(DMatrix::identity(n, n) * *s);
        }
        let m = self.dense(field)?;
        if !m.is_square() {
            return Err(invalid(field, format!("must be square, got {}x{}", m.nrows(), m.ncols())));
        }
        Ok(m)
    }

    fn dense(&self, field: &str) -> CliResult<DMatrix<f64>> {
        let rows = match self {
            MatrixSpec::Scalar(_) => return Err(invalid(field, "must be a dense matrix")),
            MatrixSpec::Dense(rows) => rows,
        };
        let cols = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
            return Err(invalid(field, "rows must be non-empty and of equal length"));
        }
        Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
    }

    fn from_matrix(m: &DMatrix<f64>) -> Self {
        MatrixSpec::Dense(m.row_iter().map(|r| r.iter().copied().collect()).collect())
    }
}

/// Continuous-time grid parameters. `M` and `K` default to the built-in grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseStudySpec {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    pub m: Option<MatrixSpec>,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<MatrixSpec>,
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

/// Model file contents. With `case_study` present, `W` is the continuous
/// process-noise level (scaled by `dt^2`) and `A`, `B`, `C` must be absent.
/// Otherwise all five matrices are required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case_study: Option<CaseStudySpec>,
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<MatrixSpec>,
    #[serde(rename = "B", default, skip_serializing_if = "Option::is_none")]
    pub b: Option<MatrixSpec>,
    #[serde(rename = "C", default, skip_serializing_if = "Option::is_none")]
    pub c: Option<MatrixSpec>,
    #[serde(rename = "W", default, skip_serializing_if = "Option::is_none")]
    pub w: Option<MatrixSpec>,
    #[serde(rename = "V", default, skip_serializing_if = "Option::is_none")]
    pub v: Option<MatrixSpec>,
}

impl ModelFile {
    fn case_study_defaults() -> Self {
        Self {
            path: None,
            case_study: Some(CaseStudySpec {
                dt: DEFAULT_DT,
                m: None,
                k: None,
            }),
            a: None,
            b: None,
            c: None,
            w: Some(MatrixSpec::Scalar(DEFAULT_PROCESS_NOISE)),
            v: Some(MatrixSpec::Scalar(DEFAULT_MEASUREMENT_NOISE)),
        }
    }

    /// Explicit form of a built model, as printed by `show-model`.
    pub fn from_model(model: &LinearSystemModel) -> Self {
        Self {
            path: None,
            case_study: None,
            a: Some(MatrixSpec::from_matrix(model.a())),
            b: Some(MatrixSpec::from_matrix(model.b())),
            c: Some(MatrixSpec::from_matrix(model.c())),
            w: Some(MatrixSpec::from_matrix(model.w())),
            v: Some(MatrixSpec::from_matrix(model.v())),
        }
    }

    /// Pretty JSON with one matrix row per line.
    pub fn to_pretty_json(&self) -> String {
        let value = serde_json::to_value(self).expect("model serializes");
        let entries: Vec<String> = value
            .as_object()
            .expect("model serializes to an object")
            .iter()
            .map(|(key, v)| match v {
                Value::Array(rows) => {
                    let rows: Vec<String> = rows.iter().map(|r| format!("    {r}")).collect();
                    format!("  {key:?}: [\n{}\n  ]", rows.join(",\n"))
                }
                other => format!("  {key:?}: {other}"),
            })
            .collect();
        format!("{{\n{}\n}}", entries.join(",\n"))
    }

    pub fn build(&self) -> CliResult<LinearSystemModel> {
        if let Some(cs) = &self.case_study {
            if self.a.is_some() || self.b.is_some() || self.c.is_some() {
                return Err(invalid("sim.model", "A, B and C cannot be combined with case_study"));
            }
            let mut grid = ContinuousCaseStudy::grid(cs.dt);
            if let Some(m) = &cs.m {
                grid.m = m.square("sim.model.case_study.M", grid.m.nrows())?;
            }
            if let Some(k) = &cs.k {
                grid.k = k.square("sim.model.case_study.K", grid.m.nrows())?;
            }
            let n = grid.m.nrows();
            let w = self.w.as_ref().map_or(Ok(DMatrix::identity(n, n) * DEFAULT_PROCESS_NOISE), |w| {
                w.resolve("sim.model.W", n)
            })?;
            let v = self.v.as_ref().map_or(Ok(DMatrix::identity(n, n) * DEFAULT_MEASUREMENT_NOISE), |v| {
                v.resolve("sim.model.V", n)
            })?;
            return grid.build(&w, &v).map_err(from_setup);
        }
        let need = |m: &Option<MatrixSpec>, name: &str| {
            m.clone()
                .ok_or_else(|| invalid(&format!("sim.model.{name}"), "required without case_study"))
        };
        let a = need(&self.a, "A")?.dense("sim.model.A")?;
        let b = need(&self.b, "B")?.dense("sim.model.B")?;
        let c = need(&self.c, "C")?.dense("sim.model.C")?;
        let w = need(&self.w, "W")?.resolve("sim.model.W", a.nrows())?;
        let v = need(&self.v, "V")?.resolve("sim.model.V", c.nrows())?;
        LinearSystemModel::new(a, b, c, w, v).map_err(from_setup)
    }
}

/// `"case_study"` or a model object.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ModelRef {
    Name(String),
    File(ModelFile),
}

impl<'de> Deserialize<'de> for ModelRef {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match Value::deserialize(d)? {
            Value::String(s) => Ok(ModelRef::Name(s)),
            v @ Value::Object(_) => serde_json::from_value(v).map(ModelRef::File).map_err(D::Error::custom),
            other => Err(D::Error::custom(format!(
                "expected \"case_study\" or a model object, got {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqrSpec {
    #[serde(default = "one")]
    pub q: MatrixSpec,
    #[serde(default = "default_pc")]
    pub pc: MatrixSpec,
    #[serde(default = "one_f")]
    pub beta: f64,
}

impl Default for LqrSpec {
    fn default() -> Self {
        Self {
            q: one(),
            pc: default_pc(),
            beta: 1.0,
        }
    }
}

fn one() -> MatrixSpec {
    MatrixSpec::Scalar(1.0)
}

fn default_pc() -> MatrixSpec {
    MatrixSpec::Scalar(0.01)
}

fn one_f() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackerSpec {
    /// 1-based sensor index.
    #[serde(default = "one_usize")]
    pub target: usize,
    #[serde(default = "no_attack")]
    pub mode: AttackMode,
    #[serde(default)]
    pub frequency: f64,
    #[serde(default)]
    pub amplitude: f64,
}

impl Default for AttackerSpec {
    fn default() -> Self {
        Self {
            target: 1,
            mode: AttackMode::None,
            frequency: 0.0,
            amplitude: 0.0,
        }
    }
}

fn one_usize() -> usize {
    1
}

fn no_attack() -> AttackMode {
    AttackMode::None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub model: ModelRef,
    #[serde(default)]
    pub lqr: LqrSpec,
    #[serde(default)]
    pub attacker: AttackerSpec,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "weighted")]
    pub control_mode: ControlMode,
    #[serde(default)]
    pub prior_odds: f64,
    #[serde(default = "default_threshold")]
    pub detection_threshold: f64,
    #[serde(default = "one_f")]
    pub initial_variance: f64,
    #[serde(default = "one_f")]
    pub forgetting: f64,
    #[serde(default)]
    pub include_full_filter_weight: bool,
}

fn default_horizon() -> usize {
    DEFAULT_HORIZON
}

fn weighted() -> ControlMode {
    ControlMode::Weighted
}

fn default_threshold() -> f64 {
    DEFAULT_DETECTION_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub sim: SimSpec,
    /// Thresholds for `roc`, frequencies or amplitudes for the cost kinds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realizations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

/// Reads, normalizes and validates a spec file. Model paths are resolved
/// relative to the spec's directory.
pub fn parse_spec(path: &Path) -> CliResult<ExperimentSpec> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_spec_str(&text, base)
}

pub fn parse_spec_str(text: &str, base_dir: &Path) -> CliResult<ExperimentSpec> {
    let mut spec: ExperimentSpec =
        serde_json::from_str(text).map_err(|e| CliError::Validation(format!("malformed spec: {e}")))?;
    spec.sim.model = normalize_model(&spec.sim.model, base_dir)?;
    if spec.realizations.is_none() {
        spec.realizations = Some(if spec.kind == ExperimentKind::Trace { 1 } else { 100 });
    }
    if spec.output.is_none() {
        spec.output = Some(PathBuf::from(format!("{}.csv", spec.kind.name())));
    }
    spec.validate()?;
    Ok(spec)
}

fn normalize_model(model: &ModelRef, base_dir: &Path) -> CliResult<ModelRef> {
    let file = match model {
        ModelRef::Name(name) if name == "case_study" => ModelFile::case_study_defaults(),
        ModelRef::Name(name) => {
            return Err(invalid("sim.model", format!("unknown built-in model {name:?}")));
        }
        ModelRef::File(f) if f.path.is_some() => {
            let p = base_dir.join(f.path.as_ref().unwrap());
            let text = fs::read_to_string(&p)
                .map_err(|e| invalid("sim.model.path", format!("cannot read {}: {e}", p.display())))?;
            let loaded: ModelFile = serde_json::from_str(&text)
                .map_err(|e| invalid("sim.model.path", format!("{}: {e}", p.display())))?;
            if loaded.path.is_some() {
                return Err(invalid("sim.model.path", "model files cannot reference other files"));
            }
            let inline = [&f.a, &f.b, &f.c, &f.w, &f.v].iter().any(|m| m.is_some());
            if inline || f.case_study.is_some() {
                return Err(invalid("sim.model", "`path` cannot be combined with inline matrices"));
            }
            loaded
        }
        ModelRef::File(f) => f.clone(),
    };
    let mut file = file;
    if file.case_study.is_some() {
        file.w.get_or_insert(MatrixSpec::Scalar(DEFAULT_PROCESS_NOISE));
        file.v.get_or_insert(MatrixSpec::Scalar(DEFAULT_MEASUREMENT_NOISE));
    }
    Ok(ModelRef::File(file))
}

impl ExperimentSpec {
    pub fn validate(&self) -> CliResult<()> {
        self.sim_config()?;
        match (self.kind.needs_sweep(), &self.sweep) {
            (true, None) => return Err(invalid("sweep", format!("required for kind {}", self.kind.name()))),
            (true, Some(v)) if v.is_empty() => return Err(invalid("sweep", "must not be empty")),
            (false, Some(_)) => {
                return Err(invalid("sweep", format!("not allowed for kind {}", self.kind.name())))
            }
            _ => {}
        }
        for (i, &x) in self.sweep.iter().flatten().enumerate() {
            let ok = match self.kind {
                ExperimentKind::Roc => x > 0.0 && x < 1.0,
                ExperimentKind::CostVsFrequency => (0.0..=1.0).contains(&x),
                _ => x >= 0.0 && x.is_finite(),
            };
            if !ok {
                return Err(invalid(&format!("sweep[{i}]"), format!("{x} is out of range")));
            }
        }
        if self.realizations == Some(0) {
            return Err(invalid("realizations", "must be at least 1"));
        }
        Ok(())
    }

    pub fn realizations(&self) -> usize {
        self.realizations.unwrap_or(1)
    }

    pub fn output(&self) -> PathBuf {
        self.output.clone().unwrap_or_else(|| PathBuf::from(format!("{}.csv", self.kind.name())))
    }

    /// Builds the library configuration described by `sim`.
    pub fn sim_config(&self) -> CliResult<SimConfig> {
        let s = &self.sim;
        let model = match &s.model {
            ModelRef::File(f) => f.build()?,
            ModelRef::Name(_) => ModelFile::case_study_defaults().build()?,
        };
        let lqr = LqrConfig::new(
            s.lqr.q.resolve("sim.lqr.q", model.n_states())?,
            s.lqr.pc.resolve("sim.lqr.pc", model.n_inputs())?,
            s.lqr.beta,
        )
        .map_err(|e| match e {
            Error::Config { field, reason } => invalid(&format!("sim.lqr.{field}"), reason),
            other => from_setup(other),
        })?;
        if s.attacker.target == 0 {
            return Err(invalid("sim.attacker.target", "sensors are numbered from 1"));
        }
        let attacker = AttackerConfig {
            target: s.attacker.target - 1,
            mode: s.attacker.mode,
            frequency: s.attacker.frequency,
            amplitude: s.attacker.amplitude,
        };
        let mut cfg = SimConfig::new(Arc::new(model), lqr, attacker);
        cfg.horizon = s.horizon;
        cfg.seed = s.seed;
        cfg.control_mode = s.control_mode;
        cfg.prior_odds = s.prior_odds;
        cfg.detection_threshold = s.detection_threshold;
        cfg.initial_variance = s.initial_variance;
        cfg.forgetting = s.forgetting;
        cfg.include_full_filter_weight = s.include_full_filter_weight;
        cfg.validate().map_err(from_setup)?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("spec serializes")
    }
}

/// What `execute` produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub output: PathBuf,
    pub meta: PathBuf,
    pub rows: usize,
}

/// Sidecar path for an output file: `<output>.meta.json`.
pub fn meta_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn partial_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".partial");
    PathBuf::from(s)
}

/// Runs the experiment and writes its CSV and metadata sidecar. Nothing is
/// left behind on failure.
pub fn execute(spec: &ExperimentSpec) -> CliResult<RunSummary> {
    let cfg = spec.sim_config()?;
    let output = spec.output();
    let meta = meta_path(&output);
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))?;
    }
    let tmp = partial_path(&output);
    let tmp_meta = partial_path(&meta);
    let started = Instant::now();
    let result = run_into(spec, &cfg, &tmp).and_then(|(rows, summary)| {
        let sidecar = json!({
            "version": VERSION,
            "spec": spec,
            "seed": spec.sim.seed,
            "realizations": spec.realizations(),
            "rows": rows,
            "summary": summary,
            "wall_time_seconds": started.elapsed().as_secs_f64(),
        });
        let text = serde_json::to_string_pretty(&sidecar).map_err(runtime)?;
        fs::write(&tmp_meta, text + "\n").map_err(runtime)?;
        fs::rename(&tmp, &output).map_err(runtime)?;
        fs::rename(&tmp_meta, &meta).map_err(runtime)?;
        Ok(rows)
    });
    match result {
        Ok(rows) => Ok(RunSummary { output, meta, rows }),
        Err(e) => {
            for p in [&tmp, &tmp_meta, &output, &meta] {
                let _ = fs::remove_file(p);
            }
            Err(e)
        }
    }
}

fn run_into(spec: &ExperimentSpec, cfg: &SimConfig, path: &Path) -> CliResult<(usize, Value)> {
    let comments = vec![
        format!("trustgrid {VERSION}"),
        format!("spec {}", spec.to_json()),
    ];
    let file = fs::File::create(path).map_err(|e| runtime(format!("cannot create {}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    let n = spec.realizations();
    let seed = cfg.seed;
    let (rows, summary) = match spec.kind {
        ExperimentKind::Trace => {
            let res = Simulation::new(cfg.clone()).map_err(runtime)?.run().map_err(runtime)?;
            metrics::write_trace_csv(&mut w, &res, &comments).map_err(runtime)?;
            let summary = json!({
                "total_cost": res.total_cost,
                "first_detection": res.first_detection.map(|(t, s)| json!({"slot": t, "sensor": s + 1})),
                "false_alarm": res.false_alarm,
            });
            (res.records.len(), summary)
        }
        ExperimentKind::Cdf => {
            let batch = Simulation::new(cfg.clone()).map_err(runtime)?.run_batch(n, seed);
            let ok = metrics::successes(batch);
            if ok.is_empty() {
                return Err(runtime("every realization failed"));
            }
            let stats = DetectionStats::from_results(&ok);
            let cdf = metrics::detection_cdf(&stats, cfg.horizon);
            metrics::write_cdf_csv(&mut w, &cdf, &comments).map_err(runtime)?;
            let summary = json!({
                "completed": ok.len(),
                "false_alarm_rate": stats.false_alarm_rate(),
                "undetected_fraction": stats.undetected_fraction(),
                "mean_delay": stats.mean_delay(),
            });
            (cdf.len(), summary)
        }
        ExperimentKind::Roc => {
            let thresholds = spec.sweep.as_deref().unwrap_or_default();
            let points = metrics::roc_sweep(cfg, thresholds, n, seed).map_err(runtime)?;
            metrics::write_roc_csv(&mut w, &points, &comments).map_err(runtime)?;
            let undetected: Vec<f64> = points.iter().map(|p| p.undetected_fraction).collect();
            (points.len(), json!({ "undetected_fraction": undetected }))
        }
        ExperimentKind::CostVsFrequency | ExperimentKind::CostVsAmplitude => {
            let axis = if spec.kind == ExperimentKind::CostVsFrequency {
                CostAxis::Frequency
            } else {
                CostAxis::Amplitude
            };
            let values = spec.sweep.as_deref().unwrap_or_default();
            let points = metrics::cost_sweep(cfg, axis, values, n, seed).map_err(runtime)?;
            metrics::write_cost_csv(&mut w, &points, &comments).map_err(runtime)?;
            (points.len(), Value::Null)
        }
    };
    std::io::Write::flush(&mut w).map_err(runtime)?;
    Ok((rows, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> CliResult<ExperimentSpec> {
        parse_spec_str(text, Path::new("."))
    }

    #[test]
    fn minimal_spec_gets_defaults() {
        let spec = parse(r#"{"kind":"trace","sim":{"model":"case_study"}}"#).unwrap();
        assert_eq!(spec.realizations, Some(1));
        assert_eq!(spec.output, Some(PathBuf::from("trace.csv")));
        assert_eq!(spec.sim.horizon, 200);
        assert_eq!(spec.sim.detection_threshold, 0.7);
        assert_eq!(spec.sim.lqr, LqrSpec::default());
        assert_eq!(spec.sim.model, ModelRef::File(ModelFile::case_study_defaults()));
        let cfg = spec.sim_config().unwrap();
        assert_eq!(cfg.model.n_sensors(), 7);
        assert_eq!(cfg.attacker.mode, AttackMode::None);
    }

    #[test]
    fn bad_frequency_names_field() {
        let err = parse(
            r#"{"kind":"trace","sim":{"model":"case_study",
                "attacker":{"mode":"replace","frequency":1.5,"amplitude":0.1}}}"#,
        )
        .unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("sim.attacker.frequency"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(parse(r#"{"kind":"trace","sim":{"model":"case_study"},"extra":1}"#).is_err());
        assert!(parse(r#"{"kind":"trace","sim":{"model":"case_study","horizn":3}}"#).is_err());
        assert!(parse(r#"{"kind":"trace","sim":{"model":{"case_study":{"dt":0.01,"x":1}}}}"#).is_err());
    }

    #[test]
    fn sweep_presence_follows_kind() {
        assert!(parse(r#"{"kind":"roc","sim":{"model":"case_study"}}"#).is_err());
        assert!(parse(r#"{"kind":"trace","sim":{"model":"case_study"},"sweep":[0.5]}"#).is_err());
        let err = parse(r#"{"kind":"roc","sim":{"model":"case_study"},"sweep":[0.5,1.0]}"#).unwrap_err();
        assert!(err.to_string().contains("sweep[1]"));
        assert!(parse(r#"{"kind":"roc","sim":{"model":"case_study"},"sweep":[0.5,0.9]}"#).is_ok());
    }

    #[test]
    fn target_is_one_based() {
        let spec = parse(
            r#"{"kind":"trace","sim":{"model":"case_study","attacker":{"target":7,"mode":"replace"}}}"#,
        )
        .unwrap();
        assert_eq!(spec.sim_config().unwrap().attacker.target, 6);
        for bad in [0, 8] {
            let text = format!(r#"{{"kind":"trace","sim":{{"model":"case_study","attacker":{{"target":{bad}}}}}}}"#);
            let err = parse(&text).unwrap_err();
            assert!(err.to_string().contains("sim.attacker.target"), "{err}");
        }
    }

    #[test]
    fn explicit_model_and_round_trip() {
        let text = r#"{"kind":"cdf","sim":{"model":{"A":[[0.5]],"B":[[1.0]],"C":[[1.0],[1.0]],
            "W":0.1,"V":[[0.2,0.0],[0.0,0.3]]},"lqr":{"q":2.0,"pc":[[1.0]]}}}"#;
        let spec = parse(text).unwrap();
        let cfg = spec.sim_config().unwrap();
        assert_eq!(cfg.model.n_sensors(), 2);
        assert_eq!(cfg.model.w()[(0, 0)], 0.1);
        assert_eq!(parse(&spec.to_json()).unwrap(), spec);
    }

    #[test]
    fn scalar_dynamics_rejected() {
        let err = parse(r#"{"kind":"trace","sim":{"model":{"A":1.0,"B":[[1.0]],"C":[[1.0]],"W":0,"V":1}}}"#)
            .unwrap_err();
        assert!(err.to_string().contains("sim.model.A"), "{err}");
    }

    #[test]
    fn case_study_noise_is_scaled() {
        let spec = parse(r#"{"kind":"trace","sim":{"model":{"case_study":{"dt":0.1},"W":2.0}}}"#).unwrap();
        let cfg = spec.sim_config().unwrap();
        assert!((cfg.model.w()[(3, 3)] - 0.02).abs() < 1e-15);
        assert_eq!(cfg.model.v()[(0, 0)], DEFAULT_MEASUREMENT_NOISE);
    }
}
