//! Robust stability constants for the window estimator and diagnostics for
//! completed runs.
//!
//! For a detectable system with output-stability constants
//! `(c_beta, lambda_beta, c_gamma_d)` and estimator weights bounded by
//! `p1 I <= P <= p2 I` and `r1 I <= R <= r2 I`, the estimation error of the
//! horizon-L scheme obeys
//!
//! ```text
//! |e(t)| <= max( c1 |e(0)| lambda1^t,
//!                max_{tau=0..t} c2 |v(t-tau)| lambda2^tau )
//! ```
//!
//! whenever `L >= t_min` and `rho <= rho_max`. The constants follow the
//! contraction argument over blocks of `L - 1` steps: `c3` contracts one
//! block by `lambda`, the per-step rates are `lambda^(1/(2(L-1)))`, and the
//! noise gain `c_gamma_e` collects the worst window amplification.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::estimator::{Estimate, MheConfig};
use crate::lti::{solve_dare, EuossConstants, LtiError, LtiSystem, Trajectory};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("{0}")]
    Invalid(String),
    #[error("horizon {0} too short for stability analysis, need at least 2")]
    HorizonTooShort(usize),
    #[error("run too short: {got} steps, need at least {need}")]
    RunTooShort { got: usize, need: usize },
    #[error(transparent)]
    Lti(#[from] LtiError),
}

fn check_lambda(lambda: f64) -> Result<(), AnalysisError> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(AnalysisError::Invalid(format!("lambda must lie in (0, 1), got {lambda}")));
    }
    Ok(())
}

fn check_positive(value: f64, name: &str) -> Result<(), AnalysisError> {
    if !(value.is_finite() && value > 0.0) {
        return Err(AnalysisError::Invalid(format!("{name} must be positive and finite, got {value}")));
    }
    Ok(())
}

/// Smallest horizon at which one window contracts the prior error by
/// `lambda`: the least integer T with `2 c_beta sqrt(2 p2/p1) lambda_beta^(T-1) <= lambda`.
pub fn min_horizon(
    euoss: &EuossConstants,
    p1: f64,
    p2: f64,
    lambda: f64,
) -> Result<usize, AnalysisError> {
    check_lambda(lambda)?;
    check_positive(p1, "p1")?;
    check_positive(p2, "p2")?;
    if p2 < p1 {
        return Err(AnalysisError::Invalid(format!("p2 {p2} smaller than p1 {p1}")));
    }
    let ratio = lambda / (2.0 * euoss.c_beta * (2.0 * p2 / p1).sqrt());
    let t = (ratio.ln() / euoss.lambda_beta.ln() + 1.0).ceil();
    Ok((t.max(1.0)) as usize)
}

/// Largest prior discount for which the noise-gain argument goes through:
/// `rho_max = lambda^2 r1 / (8 c_gamma_d^2 p2)`.
pub fn max_rho(euoss: &EuossConstants, p2: f64, r1: f64, lambda: f64) -> Result<f64, AnalysisError> {
    check_lambda(lambda)?;
    check_positive(p2, "p2")?;
    check_positive(r1, "r1")?;
    Ok(lambda * lambda * r1 / (8.0 * euoss.c_gamma_d * euoss.c_gamma_d * p2))
}

/// Full set of robust-stability constants for one estimator configuration.
#[derive(Debug, Clone)]
pub struct RgesConstants {
    pub euoss: EuossConstants,
    pub lambda: f64,
    pub horizon: usize,
    pub rho: f64,
    /// Eigenvalue bounds of the weights: `p1 I <= P <= p2 I`, `r1 I <= R <= r2 I`.
    pub p1: f64,
    pub p2: f64,
    pub r1: f64,
    pub r2: f64,
    pub t_min: usize,
    pub rho_max: f64,
    /// One-window contraction coefficient.
    pub c3: f64,
    /// Noise gain over one window.
    pub c_gamma_e: f64,
    pub c1: f64,
    pub c2: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// True when `horizon >= t_min` and `rho <= rho_max`, i.e. the error
    /// bound is guaranteed rather than merely evaluated.
    pub compliant: bool,
}

/// Derive the error-bound constants for the given tuning.
pub fn compute_rges_constants(
    euoss: &EuossConstants,
    config: &MheConfig,
    lambda: f64,
) -> Result<RgesConstants, AnalysisError> {
    check_lambda(lambda)?;
    let horizon = config.horizon;
    if horizon < 2 {
        return Err(AnalysisError::HorizonTooShort(horizon));
    }
    let p_eigs = config.p_weight.clone().symmetric_eigen().eigenvalues;
    let r_eigs = config.r_weight.clone().symmetric_eigen().eigenvalues;
    let (p1, p2) = (p_eigs.min(), p_eigs.max());
    let (r1, r2) = (r_eigs.min(), r_eigs.max());
    let rho = config.rho;
    let t_min = min_horizon(euoss, p1, p2, lambda)?;
    let rho_max = max_rho(euoss, p2, r1, lambda)?;
    let l = horizon as f64;
    let c3 = 2.0 * euoss.c_beta * (2.0 * p2 / p1).sqrt();
    let c_gamma_e = f64::max(
        2.0 * euoss.c_beta * (2.0 * l * r2 / (rho * p1)).sqrt(),
        2.0 * euoss.c_gamma_d * (2.0 * l * r2 / r1).sqrt(),
    );
    let lambda1 = lambda.powf(1.0 / (2.0 * (l - 1.0)));
    let c1 = c3 / lambda.powf((l - 2.0) / (2.0 * (l - 1.0)));
    let c2 = c_gamma_e / lambda;
    Ok(RgesConstants {
        euoss: *euoss,
        lambda,
        horizon,
        rho,
        p1,
        p2,
        r1,
        r2,
        t_min,
        rho_max,
        c3,
        c_gamma_e,
        c1,
        c2,
        lambda1,
        lambda2: lambda1,
        compliant: horizon >= t_min && rho <= rho_max,
    })
}

/// Error envelope at time t for initial error `e0_norm` and per-step noise
/// magnitudes `noise_norms[k] = |v(k)|`.
pub fn rges_bound(c: &RgesConstants, e0_norm: f64, noise_norms: &[f64], t: usize) -> f64 {
    let mut bound = c.c1 * e0_norm * c.lambda1.powi(t as i32);
    for tau in 0..=t {
        let k = t - tau;
        if let Some(&v) = noise_norms.get(k) {
            bound = bound.max(c.c2 * v * c.lambda2.powi(tau as i32));
        }
    }
    bound
}

/// One completed closed-loop run: the simulated truth, the emitted
/// estimates, and the configuration that produced them.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub trajectory: Trajectory,
    pub estimates: Vec<Estimate>,
    pub config: MheConfig,
    pub seed: u64,
}

impl RunRecord {
    /// Estimation errors `x_hat(t) - x(t)`.
    pub fn errors(&self) -> Vec<DVector<f64>> {
        self.estimates
            .iter()
            .zip(&self.trajectory.states)
            .map(|(e, x)| &e.x_hat - x)
            .collect()
    }

    pub fn noise_norms(&self) -> Vec<f64> {
        self.trajectory.noise.iter().map(|v| v.norm()).collect()
    }

    /// Norm of the prior error `x(0) - x_hat_0`.
    pub fn initial_error_norm(&self) -> f64 {
        (&self.trajectory.states[0] - &self.config.x_hat_0).norm()
    }
}

/// Pointwise comparison of a run against its error envelope.
#[derive(Debug, Clone)]
pub struct RgesReport {
    pub holds: bool,
    /// `bound(t) - |e(t)|` per step; negative entries are violations.
    pub margins: Vec<f64>,
    pub first_violation: Option<usize>,
}

impl RgesReport {
    pub fn min_margin(&self) -> f64 {
        self.margins.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Check `|e(t)| <= bound(t)` for every step of the run. A slack of
/// `1e-9 (1 + bound)` absorbs solver-precision error in runs whose exact
/// envelope is zero.
pub fn verify_rges(run: &RunRecord, c: &RgesConstants) -> RgesReport {
    let e0 = run.initial_error_norm();
    let noise = run.noise_norms();
    let errors = run.errors();
    let mut margins = Vec::with_capacity(errors.len());
    let mut first_violation = None;
    for (t, e) in errors.iter().enumerate() {
        let bound = rges_bound(c, e0, &noise, t);
        let err = e.norm();
        margins.push(bound - err);
        if err > bound + 1e-9 * (1.0 + bound) && first_violation.is_none() {
            first_violation = Some(t);
        }
    }
    RgesReport { holds: first_violation.is_none(), margins, first_violation }
}

/// Summary statistics of the estimation error across one run.
#[derive(Debug, Clone)]
pub struct ErrorMetrics {
    /// Root mean square error per state component, over the whole run.
    pub rmse_per_state: Vec<f64>,
    /// Largest error norm over the whole run.
    pub max_error: f64,
    /// Per-component error variance over the settled tail `t >= 2L`.
    pub variance_per_state: Vec<f64>,
}

pub fn error_metrics(run: &RunRecord) -> Result<ErrorMetrics, AnalysisError> {
    let errors = run.errors();
    let steps = errors.len();
    let tail_start = 2 * run.config.horizon;
    if steps < tail_start + 2 {
        return Err(AnalysisError::RunTooShort { got: steps, need: tail_start + 2 });
    }
    let n = errors[0].len();
    let mut rmse = vec![0.0; n];
    let mut max_error = 0.0_f64;
    for e in &errors {
        for i in 0..n {
            rmse[i] += e[i] * e[i];
        }
        max_error = max_error.max(e.norm());
    }
    for v in rmse.iter_mut() {
        *v = (*v / steps as f64).sqrt();
    }
    let tail = &errors[tail_start..];
    let mut variance = vec![0.0; n];
    for i in 0..n {
        let mean = tail.iter().map(|e| e[i]).sum::<f64>() / tail.len() as f64;
        variance[i] = tail.iter().map(|e| (e[i] - mean) * (e[i] - mean)).sum::<f64>() / tail.len() as f64;
    }
    Ok(ErrorMetrics { rmse_per_state: rmse, max_error, variance_per_state: variance })
}

/// Steady-state Kalman filter run with unit process covariance and the given
/// measurement noise variance, as a model-based comparison baseline.
///
/// Returns the filtered estimates `x_hat(t|t)`.
pub fn kalman_baseline(
    sys: &LtiSystem,
    x_hat_0: &DVector<f64>,
    inputs: &[DVector<f64>],
    outputs_noisy: &[DVector<f64>],
    noise_variance: f64,
) -> Result<Vec<DVector<f64>>, AnalysisError> {
    if inputs.len() != outputs_noisy.len() {
        return Err(AnalysisError::Invalid(format!(
            "inputs ({}) and outputs ({}) must have equal length",
            inputs.len(),
            outputs_noisy.len()
        )));
    }
    if !(noise_variance.is_finite() && noise_variance >= 0.0) {
        return Err(AnalysisError::Invalid(format!("noise variance must be nonnegative, got {noise_variance}")));
    }
    let n = sys.state_dim();
    let p = sys.output_dim();
    let q_w = DMatrix::identity(n, n);
    let r_v = DMatrix::identity(p, p) * noise_variance.max(1e-12);
    let cov = solve_dare(&sys.a, &sys.c, &q_w, &r_v)?;
    let innov = &sys.c * &cov * sys.c.transpose() + &r_v;
    let gain = &cov
        * sys.c.transpose()
        * innov
            .try_inverse()
            .ok_or_else(|| AnalysisError::Invalid("innovation covariance singular".into()))?;
    let mut predicted = x_hat_0.clone();
    let mut filtered = Vec::with_capacity(inputs.len());
    for (u, y) in inputs.iter().zip(outputs_noisy) {
        let residual = y - &sys.c * &predicted - &sys.d * u;
        let xf = &predicted + &gain * residual;
        predicted = &sys.a * &xf + &sys.b * u;
        filtered.push(xf);
    }
    Ok(filtered)
}
