//! Discrete-time linear plant and the seven-state power-grid case study.
//!
//! The plant evolves as `x(t+1) = A x(t) + B u(t) + w(t)` and is observed
//! through `y(t) = C x(t) + n(t)`, with `w ~ N(0, W)` and `n ~ N(0, V)`.
//! All randomness is drawn from a caller-supplied generator.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Relative tolerance used when checking symmetry of covariance inputs.
const SYMMETRY_TOL: f64 = 1e-9;

/// Default continuous process-noise intensity for the case study (`W_base = 1e-4 I`).
pub const DEFAULT_PROCESS_NOISE: f64 = 1e-4;
/// Default per-sensor measurement-noise variance for the case study.
pub const DEFAULT_MEASUREMENT_NOISE: f64 = 1e-2;
/// Default Euler step of the case study, in seconds.
pub const DEFAULT_DT: f64 = 0.01;

/// Inertia-type matrix of the seven-state grid model.
#[rustfmt::skip]
pub const CASE_STUDY_M: [[f64; 7]; 7] = [
    [2.1,  1.55,  1.55,  0.0,  0.0,    0.0,    0.0],
    [1.55, 1.651, 1.55,  0.0,  0.0,    0.0,    0.0],
    [1.55, 1.55,  1.605, 0.0,  0.0,    0.0,    0.0],
    [0.0,  0.0,   0.0,   2.04, 1.49,   0.0,    0.0],
    [0.0,  0.0,   0.0,   1.49, 1.526,  0.0,    0.0],
    [0.0,  0.0,   0.0,   0.0,  0.0, -1786.9,   0.0],
    [0.0,  0.0,   0.0,   0.0,  0.0,    0.0,    1.0],
];

/// Stiffness-type matrix of the seven-state grid model.
#[rustfmt::skip]
pub const CASE_STUDY_K: [[f64; 7]; 7] = [
    [ 0.0211,  0.0,    0.0,    2.04,   1.49,  1.43,  -1.025],
    [ 0.0,     0.0007, 0.0,    0.0,    0.0,   0.0,    0.0  ],
    [ 0.0,     0.0,    0.0131, 0.0,    0.0,   0.0,    0.0  ],
    [-2.1,    -1.55,  -1.55,   0.0211, 0.0,  -1.039, -1.397],
    [ 0.0,     0.0,    0.0,    0.0,    0.054, 0.0,    0.0  ],
    [-0.014,  -0.362, -0.362, -1.428, -0.79,  0.0,    0.0  ],
    [ 0.0,     0.0,    0.0,    0.0,    0.0,  -1.0,    0.0  ],
];

/// A discrete-time linear plant with Gaussian process and measurement noise.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystemModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    w: DMatrix<f64>,
    v: DMatrix<f64>,
    w_factor: DMatrix<f64>,
    v_factor: DMatrix<f64>,
}

impl LinearSystemModel {
    /// Builds a model after checking dimensions and that `W` and `V` are
    /// symmetric positive semidefinite.
    ///
    /// A singular `V` is accepted here so that noiseless plants can be
    /// simulated; [`crate::estimator::FilterBank`] rejects it.
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        w: DMatrix<f64>,
        v: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return Err(Error::dim("A", "non-empty square", shape(&a)));
        }
        if b.nrows() != n {
            return Err(Error::dim("B", format!("{n} rows"), shape(&b)));
        }
        if c.ncols() != n || c.nrows() == 0 {
            return Err(Error::dim("C", format!("m x {n} with m >= 1"), shape(&c)));
        }
        if w.shape() != (n, n) {
            return Err(Error::dim("W", format!("{n}x{n}"), shape(&w)));
        }
        let m = c.nrows();
        if v.shape() != (m, m) {
            return Err(Error::dim("V", format!("{m}x{m}"), shape(&v)));
        }
        for (name, mat) in [("A", &a), ("B", &b), ("C", &c), ("W", &w), ("V", &v)] {
            if mat.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidModel(format!("{name} has non-finite entries")));
            }
        }
        let w_factor = psd_factor(&w, "W")?;
        let v_factor = psd_factor(&v, "V")?;
        Ok(Self {
            a,
            b,
            c,
            w,
            v,
            w_factor,
            v_factor,
        })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    /// Process-noise covariance of the discrete model.
    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// Measurement-noise covariance.
    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_sensors(&self) -> usize {
        self.c.nrows()
    }

    /// A zero state at slot 0.
    pub fn zero_state(&self) -> PlantState {
        PlantState::new(DVector::zeros(self.n_states()))
    }

    /// Advances the plant by one slot under input `u`.
    pub fn step<R: Rng + ?Sized>(
        &self,
        state: &PlantState,
        u: &DVector<f64>,
        rng: &mut R,
    ) -> Result<PlantState> {
        self.check_state(state)?;
        if u.len() != self.n_inputs() {
            return Err(Error::dim("control input", self.n_inputs(), u.len()));
        }
        let mut x = &self.a * &state.x + &self.b * u;
        x += &self.w_factor * standard_normal(self.n_states(), rng);
        Ok(PlantState { x, t: state.t + 1 })
    }

    /// Draws a sensor report vector `C x + n`.
    pub fn observe<R: Rng + ?Sized>(&self, state: &PlantState, rng: &mut R) -> Result<DVector<f64>> {
        self.check_state(state)?;
        let mut y = &self.c * &state.x;
        y += &self.v_factor * standard_normal(self.n_sensors(), rng);
        Ok(y)
    }

    fn check_state(&self, state: &PlantState) -> Result<()> {
        if state.x.len() != self.n_states() {
            return Err(Error::dim("plant state", self.n_states(), state.x.len()));
        }
        Ok(())
    }
}

/// Plant state at a given slot.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub x: DVector<f64>,
    pub t: u64,
}

impl PlantState {
    pub fn new(x: DVector<f64>) -> Self {
        Self { x, t: 0 }
    }
}

/// Continuous-time grid model `dx/dt = -M^-1 K x - M^-1 u + w`, discretized
/// with a forward Euler step of length `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousCaseStudy {
    pub m: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub dt: f64,
}

impl ContinuousCaseStudy {
    /// The seven-state grid model with step `dt`.
    pub fn grid(dt: f64) -> Self {
        Self {
            m: from_rows(&CASE_STUDY_M),
            k: from_rows(&CASE_STUDY_K),
            dt,
        }
    }

    /// Discretizes the model: `A = I - dt M^-1 K`, `B = -dt M^-1`, `C = I`,
    /// process-noise covariance `dt^2 W_base` and measurement covariance `v`.
    ///
    /// `dt = 0` yields the degenerate `A = I`, `B = 0` model.
    pub fn build(&self, w_base: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<LinearSystemModel> {
        let n = self.m.nrows();
        if !self.m.is_square() || self.k.shape() != (n, n) {
            return Err(Error::dim("case study M/K", format!("{n}x{n}"), shape(&self.k)));
        }
        if !(self.dt >= 0.0 && self.dt.is_finite()) {
            return Err(Error::config("dt", format!("must be finite and >= 0, got {}", self.dt)));
        }
        let m_inv = self
            .m
            .clone()
            .lu()
            .try_inverse()
            .ok_or(Error::Singular("case study M"))?;
        let eye = DMatrix::<f64>::identity(n, n);
        let a = &eye - (&m_inv * &self.k) * self.dt;
        let b = &m_inv * -self.dt;
        let w = w_base * (self.dt * self.dt);
        LinearSystemModel::new(a, b, eye, w, v.clone())
    }

    /// Discretizes with isotropic noise levels `w_base * I` and `v * I`.
    pub fn build_isotropic(&self, w_base: f64, v: f64) -> Result<LinearSystemModel> {
        let n = self.m.nrows();
        let eye = DMatrix::<f64>::identity(n, n);
        self.build(&(&eye * w_base), &(&eye * v))
    }
}

impl Default for ContinuousCaseStudy {
    fn default() -> Self {
        Self::grid(DEFAULT_DT)
    }
}

/// The case-study plant with default step and noise levels.
pub fn case_study_model() -> LinearSystemModel {
    ContinuousCaseStudy::default()
        .build_isotropic(DEFAULT_PROCESS_NOISE, DEFAULT_MEASUREMENT_NOISE)
        .expect("built-in case study is well formed")
}

pub(crate) fn from_rows<const N: usize>(rows: &[[f64; N]; N]) -> DMatrix<f64> {
    DMatrix::from_fn(N, N, |i, j| rows[i][j])
}

pub(crate) fn shape(m: &DMatrix<f64>) -> String {
    format!("{}x{}", m.nrows(), m.ncols())
}

fn standard_normal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Returns `F` with `F F^T = cov` for a symmetric PSD `cov`.
fn psd_factor(cov: &DMatrix<f64>, name: &str) -> Result<DMatrix<f64>> {
    let scale = cov.abs().max().max(1.0);
    if (cov - cov.transpose()).abs().max() > SYMMETRY_TOL * scale {
        return Err(Error::InvalidModel(format!("{name} is not symmetric")));
    }
    if cov.iter().all(|&x| x == 0.0) {
        return Ok(cov.clone());
    }
    let eig = cov.clone().symmetric_eigen();
    if eig.eigenvalues.min() < -SYMMETRY_TOL * scale {
        return Err(Error::InvalidModel(format!(
            "{name} is not positive semidefinite (min eigenvalue {:e})",
            eig.eigenvalues.min()
        )));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots))
}
