//! Infinite-horizon discounted LQR and the trust-weighted state estimate.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimator::FilterBank;
use crate::linsys::{shape, LinearSystemModel};

/// Step-size tolerance of the Riccati fixed-point iteration.
pub const FIXED_POINT_TOL: f64 = 1e-12;
/// Iteration cap of the Riccati fixed-point iteration.
pub const FIXED_POINT_MAX_ITER: usize = 100_000;

const DOUBLING_MAX_ITER: usize = 100;
const DOUBLING_TOL: f64 = 1e-15;
const POLISH_STEPS: usize = 3;

/// Quadratic cost weights `J = E sum beta^t (x^T Q x + u^T Pc u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrConfig {
    pub q: DMatrix<f64>,
    pub pc: DMatrix<f64>,
    pub beta: f64,
}

impl LqrConfig {
    pub fn new(q: DMatrix<f64>, pc: DMatrix<f64>, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::config("beta", format!("must lie in (0, 1], got {beta}")));
        }
        for (name, m) in [("Q", &q), ("Pc", &pc)] {
            if !m.is_square() {
                return Err(Error::dim("LQR weight", "square matrix", shape(m)));
            }
            let sym = (m - m.transpose()).abs().max() <= 1e-12 * m.abs().max().max(1.0);
            if !sym || m.clone().cholesky().is_none() {
                return Err(Error::config(name, "must be symmetric positive definite"));
            }
        }
        Ok(Self { q, pc, beta })
    }

    /// `Q = q I`, `Pc = p I`, undiscounted.
    pub fn scaled_identity(n_states: usize, n_inputs: usize, q: f64, p: f64) -> Result<Self> {
        Self::new(
            DMatrix::identity(n_states, n_states) * q,
            DMatrix::identity(n_inputs, n_inputs) * p,
            1.0,
        )
    }

    fn check(&self, model: &LinearSystemModel) -> Result<()> {
        let n = model.n_states();
        let p = model.n_inputs();
        if self.q.shape() != (n, n) {
            return Err(Error::dim("Q", format!("{n}x{n}"), shape(&self.q)));
        }
        if self.pc.shape() != (p, p) {
            return Err(Error::dim("Pc", format!("{p}x{p}"), shape(&self.pc)));
        }
        Ok(())
    }
}

/// Stationary Riccati solution and feedback gain.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrSolution {
    pub s: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    /// Frobenius norm of `riccati_map(S) - S`.
    pub residual: f64,
    pub iterations: usize,
    /// Spectral radius of `A - B L`.
    pub spectral_radius: f64,
}

impl LqrSolution {
    /// `u = -L xhat`.
    pub fn act(&self, xhat: &DVector<f64>) -> DVector<f64> {
        -(&self.gain * xhat)
    }
}

/// Discount-folded system `(sqrt(beta) A, sqrt(beta) B)`.
fn discounted(model: &LinearSystemModel, cfg: &LqrConfig) -> (DMatrix<f64>, DMatrix<f64>) {
    let root = cfg.beta.sqrt();
    (model.a() * root, model.b() * root)
}

/// One application of the Riccati map
/// `S -> A^T (S - S B (B^T S B + Pc)^-1 B^T S) A + Q`.
pub fn riccati_map(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    pc: &DMatrix<f64>,
    s: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let bt_s = b.transpose() * s;
    let inner = &bt_s * b + pc;
    let chol = inner.cholesky().ok_or(Error::Singular("B^T S B + Pc"))?;
    let correction = bt_s.transpose() * chol.solve(&bt_s);
    let mut next = a.transpose() * (s - correction) * a + q;
    symmetrize(&mut next);
    Ok(next)
}

/// Solves the discounted DARE with a structure-preserving doubling iteration,
/// followed by a few Riccati-map steps.
///
/// Doubling converges quadratically, which matters for plants with
/// closed-loop poles close to the unit circle where the plain fixed-point
/// iteration needs far more than `FIXED_POINT_MAX_ITER` steps.
pub fn solve_dare(model: &LinearSystemModel, cfg: &LqrConfig) -> Result<LqrSolution> {
    cfg.check(model)?;
    let (a, b) = discounted(model, cfg);
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);

    let pc_chol = cfg.pc.clone().cholesky().ok_or(Error::Singular("Pc"))?;
    let mut ak = a.clone();
    let mut gk = &b * pc_chol.solve(&b.transpose());
    let mut hk = cfg.q.clone();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < DOUBLING_MAX_ITER {
        iterations += 1;
        let lu = (&eye + &gk * &hk).lu();
        let w_a = lu.solve(&ak).ok_or(Error::Singular("I + G H in doubling"))?;
        let w_g = lu.solve(&gk).ok_or(Error::Singular("I + G H in doubling"))?;
        let a_next = &ak * &w_a;
        let mut g_next = &gk + &ak * w_g * ak.transpose();
        let mut h_next = &hk + ak.transpose() * &hk * &w_a;
        symmetrize(&mut g_next);
        symmetrize(&mut h_next);
        let step = (&h_next - &hk).norm();
        let finite = h_next.iter().all(|x| x.is_finite());
        ak = a_next;
        gk = g_next;
        hk = h_next;
        if !finite {
            break;
        }
        if step <= DOUBLING_TOL * hk.norm().max(1.0) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::DareNotConverged {
            iterations,
            residual: f64::NAN,
        });
    }

    let mut s = hk;
    for _ in 0..POLISH_STEPS {
        s = riccati_map(&a, &b, &cfg.q, &cfg.pc, &s)?;
    }
    finish(model, cfg, s, iterations)
}

/// Solves the discounted DARE by iterating the Riccati map from `S = Q`
/// until successive iterates differ by less than `tol` (Frobenius norm).
pub fn solve_dare_fixed_point(
    model: &LinearSystemModel,
    cfg: &LqrConfig,
    max_iter: usize,
    tol: f64,
) -> Result<LqrSolution> {
    cfg.check(model)?;
    let (a, b) = discounted(model, cfg);
    let mut s = cfg.q.clone();
    for k in 1..=max_iter {
        let next = riccati_map(&a, &b, &cfg.q, &cfg.pc, &s)?;
        let step = (&next - &s).norm();
        s = next;
        if step < tol {
            return finish(model, cfg, s, k);
        }
    }
    let residual = (riccati_map(&a, &b, &cfg.q, &cfg.pc, &s)? - &s).norm();
    Err(Error::DareNotConverged {
        iterations: max_iter,
        residual,
    })
}

fn finish(
    model: &LinearSystemModel,
    cfg: &LqrConfig,
    s: DMatrix<f64>,
    iterations: usize,
) -> Result<LqrSolution> {
    let (a, b) = discounted(model, cfg);
    let residual = (riccati_map(&a, &b, &cfg.q, &cfg.pc, &s)? - &s).norm();
    if residual.is_nan() || residual > 1e-6 * s.norm().max(1.0) {
        return Err(Error::DareNotConverged { iterations, residual });
    }
    let bt_s = b.transpose() * &s;
    let chol = (&bt_s * &b + &cfg.pc)
        .cholesky()
        .ok_or(Error::Singular("B^T S B + Pc"))?;
    let gain = chol.solve(&(&bt_s * &a));
    let rho = spectral_radius(&(model.a() - model.b() * &gain));
    if rho >= 1.0 {
        return Err(Error::UnstableClosedLoop(rho));
    }
    Ok(LqrSolution {
        s,
        gain,
        residual,
        iterations,
        spectral_radius: rho,
    })
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Trust-weighted state estimate `sum_n pi_n x^n / sum_n pi_n`, where `x^n`
/// is the mean of the filter that ignores sensor `n`. A highly suspicious
/// sensor therefore hands control to the estimate that does not listen to it.
///
/// When `full_weight` is given, the full-observation filter joins the average
/// with that weight (typically the posterior probability of no attacker).
pub fn weighted_estimate(
    bank: &FilterBank,
    pi: &[f64],
    full_weight: Option<f64>,
) -> Result<DVector<f64>> {
    if pi.len() != bank.n_sensors() {
        return Err(Error::dim("suspicious levels", bank.n_sensors(), pi.len()));
    }
    if pi.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
        return Err(Error::NonFinite("suspicious levels must be finite and >= 0".into()));
    }
    let extra = full_weight.unwrap_or(0.0).max(0.0);
    let total: f64 = pi.iter().sum::<f64>() + extra;
    if total <= 0.0 {
        return Err(Error::ZeroWeights);
    }
    let mut acc = bank.full().mean.clone() * extra;
    for (member, &p) in bank.members().zip(pi) {
        if p > 0.0 {
            acc.axpy(p, &member.mean, 1.0);
        }
    }
    Ok(acc / total)
}

/// Discounted stage cost `beta^t (x^T Q x + u^T Pc u)`.
pub fn running_cost(x: &DVector<f64>, u: &DVector<f64>, cfg: &LqrConfig, t: u64) -> f64 {
    let stage = x.dot(&(&cfg.q * x)) + u.dot(&(&cfg.pc * u));
    if cfg.beta == 1.0 {
        stage
    } else {
        cfg.beta.powf(t as f64) * stage
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
