//! Bank of leave-one-out Kalman filters.
//!
//! Member `n` runs a Kalman filter on every report except sensor `n`'s, so its
//! prediction of `y_n` is independent of what sensor `n` actually said. An
//! extra full-observation filter serves the full-trust controller.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linsys::LinearSystemModel;

/// Default prior variance of the initial state estimate.
pub const DEFAULT_INITIAL_VARIANCE: f64 = 1.0;

/// Mean and covariance of one filter in the bank.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Sensor left out of this filter, `None` for the full filter.
    pub excluded: Option<usize>,
}

/// Gaussian predictive distribution of one sensor's next report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictiveDistribution {
    pub sensor: usize,
    pub mean: f64,
    pub var: f64,
}

#[derive(Debug, Clone)]
struct Member {
    state: FilterState,
    /// Sensors this member listens to, in increasing order.
    kept: Vec<usize>,
    c: DMatrix<f64>,
    v: DMatrix<f64>,
}

impl Member {
    fn new(model: &LinearSystemModel, excluded: Option<usize>, initial_variance: f64) -> Self {
        let n = model.n_states();
        let kept: Vec<usize> = (0..model.n_sensors()).filter(|&i| Some(i) != excluded).collect();
        let c = model.c().select_rows(kept.iter());
        let v = model.v().select_rows(kept.iter()).select_columns(kept.iter());
        Self {
            state: FilterState {
                mean: DVector::zeros(n),
                cov: DMatrix::identity(n, n) * initial_variance,
                excluded,
            },
            kept,
            c,
            v,
        }
    }

    fn update(&mut self, y: &DVector<f64>) -> Result<()> {
        if self.kept.is_empty() {
            return Ok(());
        }
        let y_kept = DVector::from_iterator(self.kept.len(), self.kept.iter().map(|&i| y[i]));
        let state = &mut self.state;
        let innovation = y_kept - &self.c * &state.mean;
        let c_cov = &self.c * &state.cov;
        let s = &c_cov * self.c.transpose() + &self.v;
        let chol = s.cholesky().ok_or_else(|| Error::InnovationNotInvertible {
            filter: match state.excluded {
                Some(n) => format!("filter excluding sensor {}", n + 1),
                None => "full filter".to_string(),
            },
        })?;
        // Gain transposed: S^-1 C Sigma, since both S and Sigma are symmetric.
        let gain = chol.solve(&c_cov).transpose();
        state.mean += &gain * innovation;
        state.cov -= &gain * c_cov;
        symmetrize(&mut state.cov);
        Ok(())
    }

    fn predict(&mut self, a: &DMatrix<f64>, drive: &DVector<f64>, w: &DMatrix<f64>) {
        let state = &mut self.state;
        state.mean = a * &state.mean + drive;
        state.cov = a * &state.cov * a.transpose() + w;
        symmetrize(&mut state.cov);
    }
}

/// One leave-one-out filter per sensor plus a full-observation filter, all
/// sharing the same plant model.
#[derive(Debug, Clone)]
pub struct FilterBank {
    model: Arc<LinearSystemModel>,
    members: Vec<Member>,
    full: Member,
}

impl FilterBank {
    /// Starts every filter at `x(0|-1) = 0`, `Sigma(0|-1) = initial_variance * I`.
    pub fn new(model: Arc<LinearSystemModel>, initial_variance: f64) -> Result<Self> {
        if !(initial_variance > 0.0 && initial_variance.is_finite()) {
            return Err(Error::config(
                "initial_variance",
                format!("must be finite and > 0, got {initial_variance}"),
            ));
        }
        if let Some(i) = (0..model.n_sensors()).find(|&i| model.v()[(i, i)] <= 0.0) {
            return Err(Error::InvalidModel(format!(
                "sensor {} has zero measurement noise; V must be positive definite",
                i + 1
            )));
        }
        if model.v().clone().cholesky().is_none() {
            return Err(Error::InvalidModel("V is not positive definite".into()));
        }
        let members = (0..model.n_sensors())
            .map(|n| Member::new(&model, Some(n), initial_variance))
            .collect();
        let full = Member::new(&model, None, initial_variance);
        Ok(Self { model, members, full })
    }

    pub fn model(&self) -> &LinearSystemModel {
        &self.model
    }

    pub fn n_sensors(&self) -> usize {
        self.members.len()
    }

    /// Time update of every filter: `mean <- A mean + B u`, `cov <- A cov A^T + W`.
    pub fn predict(&mut self, u: &DVector<f64>) -> Result<()> {
        let model = &*self.model;
        if u.len() != model.n_inputs() {
            return Err(Error::dim("control input", model.n_inputs(), u.len()));
        }
        let drive = model.b() * u;
        for member in self.members.iter_mut().chain(std::iter::once(&mut self.full)) {
            member.predict(model.a(), &drive, model.w());
        }
        Ok(())
    }

    /// Measurement update. Member `n` never reads `y[n]`.
    pub fn update(&mut self, y: &DVector<f64>) -> Result<()> {
        if y.len() != self.model.n_sensors() {
            return Err(Error::dim("observation", self.model.n_sensors(), y.len()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation vector".into()));
        }
        for member in self.members.iter_mut().chain(std::iter::once(&mut self.full)) {
            member.update(y)?;
        }
        Ok(())
    }

    /// Distribution of sensor `n`'s report according to the filter that
    /// excludes it: mean `c_n x^n`, variance `c_n Sigma^n c_n^T + V[n][n]`.
    pub fn predictive_for_sensor(&self, n: usize) -> Result<PredictiveDistribution> {
        let member = self.members.get(n).ok_or(Error::InvalidSensor {
            index: n,
            count: self.members.len(),
        })?;
        let c_row = self.model.c().row(n);
        let state = &member.state;
        let mean = (c_row * &state.mean)[(0, 0)];
        let var = (c_row * &state.cov * c_row.transpose())[(0, 0)] + self.model.v()[(n, n)];
        Ok(PredictiveDistribution { sensor: n, mean, var })
    }

    /// Predictive distributions for every sensor, in sensor order.
    pub fn predictive_all(&self) -> Result<Vec<PredictiveDistribution>> {
        (0..self.n_sensors()).map(|n| self.predictive_for_sensor(n)).collect()
    }

    /// The filter that leaves out sensor `n`.
    pub fn member(&self, n: usize) -> Option<&FilterState> {
        self.members.get(n).map(|m| &m.state)
    }

    pub fn members(&self) -> impl Iterator<Item = &FilterState> {
        self.members.iter().map(|m| &m.state)
    }

    pub fn full(&self) -> &FilterState {
        &self.full.state
    }

    #[cfg(test)]
    pub(crate) fn set_member_means_for_test(&mut self, values: &[f64]) {
        for (member, &v) in self.members.iter_mut().zip(values) {
            member.state.mean.fill(v);
        }
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}
