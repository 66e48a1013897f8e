//! Moving horizon estimation over Hankel trajectory spans.
//!
//! At each time t the estimator solves, over Hankel coefficients `alpha`,
//!
//! ```text
//! min  rho |x_bar(s) - prior|^2_P + sum_{k=s..t} |y~(k) - y_bar(k)|^2_R
//! s.t. H_d(u^d) alpha = (u(s), ..., u(t)),      x_bar(k) in state box
//! ```
//!
//! where `(x_bar, y_bar)` are the state and output windows reconstructed
//! blockwise from the offline Hankel matrices, `s = max(0, t - L + 1)`, and
//! `d = t - s + 1` is the window depth. The output mismatch variables and the
//! state window are eliminated exactly, leaving a dense QP in `alpha` alone.
//!
//! While `t < L - 1` the window is still growing and the prior stays anchored
//! at the initial guess. From `t >= L` the prior is the estimate that was
//! emitted at time `t - L + 1`, which makes the scheme a filter: each
//! measurement is processed once per window position and never revised.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::hankel::{build_hankel, HankelError, OfflineDataset};
use crate::numeric::{null_basis, spectral_norm};
use crate::qp::{solve_qp, ActiveBound, BoxConstraints, DenseQp, QpError, QpStatus};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error(transparent)]
    Hankel(#[from] HankelError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("{context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: String,
        got: String,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("window problem at t={t} infeasible: residual {residual:.3e}")]
    Infeasible { t: usize, residual: f64 },
}

fn shape_err(context: &'static str, expected: String, got: String) -> EstimatorError {
    EstimatorError::Shape { context, expected, got }
}

/// Componentwise state bounds; infinite entries disable a side.
#[derive(Debug, Clone)]
pub struct StateBox {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

/// Estimator tuning: horizon, prior discount, weights, and initial guess.
#[derive(Debug, Clone)]
pub struct MheConfig {
    pub horizon: usize,
    pub rho: f64,
    pub p_weight: DMatrix<f64>,
    pub r_weight: DMatrix<f64>,
    pub x_hat_0: DVector<f64>,
    pub state_box: Option<StateBox>,
}

fn check_spd(m: &DMatrix<f64>, name: &str) -> Result<(), EstimatorError> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(EstimatorError::Config(format!(
            "{name} must be square and nonempty, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let asym = (m - m.transpose()).amax();
    if asym > 1e-10 * (1.0 + m.amax()) {
        return Err(EstimatorError::Config(format!("{name} not symmetric, asymmetry {asym:.3e}")));
    }
    let lmin = m.clone().symmetric_eigen().eigenvalues.min();
    if lmin <= 0.0 {
        return Err(EstimatorError::Config(format!(
            "{name} not positive definite, min eigenvalue {lmin:.3e}"
        )));
    }
    Ok(())
}

impl MheConfig {
    pub fn new(
        horizon: usize,
        rho: f64,
        p_weight: DMatrix<f64>,
        r_weight: DMatrix<f64>,
        x_hat_0: DVector<f64>,
        state_box: Option<StateBox>,
    ) -> Result<Self, EstimatorError> {
        if horizon == 0 {
            return Err(EstimatorError::Config("horizon must be at least 1".into()));
        }
        if !(rho.is_finite() && rho > 0.0) {
            return Err(EstimatorError::Config(format!("rho must be positive and finite, got {rho}")));
        }
        check_spd(&p_weight, "P")?;
        check_spd(&r_weight, "R")?;
        let n = p_weight.nrows();
        if x_hat_0.len() != n {
            return Err(shape_err("x_hat_0", format!("{n}"), format!("{}", x_hat_0.len())));
        }
        if let Some(bx) = &state_box {
            if bx.lower.len() != n || bx.upper.len() != n {
                return Err(shape_err(
                    "state box",
                    format!("{n}"),
                    format!("lower {}, upper {}", bx.lower.len(), bx.upper.len()),
                ));
            }
            for i in 0..n {
                let (lo, up) = (bx.lower[i], bx.upper[i]);
                if lo.is_nan() || up.is_nan() || lo > up {
                    return Err(EstimatorError::Config(format!(
                        "state box component {i} inconsistent: [{lo}, {up}]"
                    )));
                }
            }
        }
        Ok(MheConfig { horizon, rho, p_weight, r_weight, x_hat_0, state_box })
    }
}

/// Result of one estimator step.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub t: usize,
    /// Estimated current state, the last block of `window_states`.
    pub x_hat: DVector<f64>,
    /// Reconstructed state window, oldest first.
    pub window_states: Vec<DVector<f64>>,
    /// Output mismatch per window position: measured minus reconstructed.
    pub sigma_hat: Vec<DVector<f64>>,
    /// Hankel span coefficients of the window.
    pub alpha: DVector<f64>,
    /// Objective value including the constant terms of the fit criterion.
    pub cost: f64,
    pub qp_status: QpStatus,
    pub active_constraints: Vec<ActiveBound>,
    /// True when the cost and constraints leave the state window
    /// underdetermined at the reported solution.
    pub nonunique_window: bool,
}

/// State and output window sequences reconstructed from one coefficient
/// vector.
pub type WindowPair = (Vec<DVector<f64>>, Vec<DVector<f64>>);

/// Hankel matrices of one window depth.
struct DepthData {
    hu: DMatrix<f64>,
    hy: DMatrix<f64>,
    hx: DMatrix<f64>,
}

/// Recursive data-driven state estimator over a certified offline dataset.
pub struct MheEstimator {
    dataset: OfflineDataset,
    config: MheConfig,
    t_next: usize,
    u_buf: VecDeque<DVector<f64>>,
    y_buf: VecDeque<DVector<f64>>,
    /// Estimate emitted at each past time; entry t - L + 1 anchors the
    /// window at time t.
    emitted: Vec<DVector<f64>>,
    depths: Vec<Option<DepthData>>,
}

impl MheEstimator {
    /// Certify the dataset to excitation order `L + n` and set up the
    /// estimator at time 0.
    pub fn new(mut dataset: OfflineDataset, config: MheConfig) -> Result<Self, EstimatorError> {
        let n = dataset.state_dim();
        let p = dataset.output_dim();
        if config.p_weight.nrows() != n {
            return Err(shape_err("P", format!("{n}x{n}"), format!("{}x{}", config.p_weight.nrows(), config.p_weight.ncols())));
        }
        if config.r_weight.nrows() != p {
            return Err(shape_err("R", format!("{p}x{p}"), format!("{}x{}", config.r_weight.nrows(), config.r_weight.ncols())));
        }
        let order = config.horizon + n;
        if dataset.certified_order() < order {
            dataset.certify_excitation(order)?;
        }
        let depths = (0..config.horizon).map(|_| None).collect();
        Ok(MheEstimator {
            dataset,
            config,
            t_next: 0,
            u_buf: VecDeque::new(),
            y_buf: VecDeque::new(),
            emitted: Vec::new(),
            depths,
        })
    }

    pub fn config(&self) -> &MheConfig {
        &self.config
    }

    pub fn dataset(&self) -> &OfflineDataset {
        &self.dataset
    }

    /// Time of the next measurement to be processed.
    pub fn next_time(&self) -> usize {
        self.t_next
    }

    fn depth_data(&mut self, depth: usize) -> Result<&DepthData, EstimatorError> {
        if self.depths[depth - 1].is_none() {
            let hu = build_hankel(self.dataset.inputs(), depth)?.matrix;
            let hy = build_hankel(self.dataset.outputs(), depth)?.matrix;
            let hx = build_hankel(self.dataset.states(), depth)?.matrix;
            self.depths[depth - 1] = Some(DepthData { hu, hy, hx });
        }
        Ok(self.depths[depth - 1].as_ref().expect("just inserted"))
    }

    /// Reconstruct the state and output windows spanned by `alpha` at the
    /// given depth.
    pub fn reconstruct_window(
        &mut self,
        alpha: &DVector<f64>,
        depth: usize,
    ) -> Result<WindowPair, EstimatorError> {
        if depth == 0 || depth > self.config.horizon {
            return Err(shape_err("depth", format!("1..={}", self.config.horizon), format!("{depth}")));
        }
        let n = self.dataset.state_dim();
        let p = self.dataset.output_dim();
        let data = self.depth_data(depth)?;
        if alpha.len() != data.hu.ncols() {
            return Err(shape_err("alpha", format!("{}", data.hu.ncols()), format!("{}", alpha.len())));
        }
        let x_stack = &data.hx * alpha;
        let y_stack = &data.hy * alpha;
        let states = (0..depth).map(|k| x_stack.rows(k * n, n).into()).collect();
        let outputs = (0..depth).map(|k| y_stack.rows(k * p, p).into()).collect();
        Ok((states, outputs))
    }

    /// Process the measurement pair for the current time and emit the
    /// estimate of the current state.
    pub fn step(&mut self, u: &DVector<f64>, y: &DVector<f64>) -> Result<Estimate, EstimatorError> {
        let (m, p) = (self.dataset.input_dim(), self.dataset.output_dim());
        if u.len() != m {
            return Err(shape_err("input", format!("{m}"), format!("{}", u.len())));
        }
        if y.len() != p {
            return Err(shape_err("output", format!("{p}"), format!("{}", y.len())));
        }
        let t = self.t_next;
        let horizon = self.config.horizon;
        self.u_buf.push_back(u.clone());
        self.y_buf.push_back(y.clone());
        if self.u_buf.len() > horizon {
            self.u_buf.pop_front();
            self.y_buf.pop_front();
        }
        let depth = self.u_buf.len();
        let prior = if t < horizon {
            self.config.x_hat_0.clone()
        } else {
            self.emitted[t - horizon + 1].clone()
        };

        let (qp, c0) = self.build_window_qp(depth, &prior)?;
        let sol = solve_qp(&qp);
        if sol.status == QpStatus::Infeasible {
            return Err(EstimatorError::Infeasible { t, residual: sol.kkt_residual });
        }
        let nonunique = self.window_is_nonunique(&qp, depth);
        let alpha = sol.z.clone();
        let (states, outputs) = self.reconstruct_window(&alpha, depth)?;
        let sigma_hat: Vec<DVector<f64>> =
            self.y_buf.iter().zip(&outputs).map(|(meas, rec)| meas - rec).collect();
        let x_hat = states.last().expect("depth >= 1").clone();
        self.emitted.push(x_hat.clone());
        self.t_next += 1;
        Ok(Estimate {
            t,
            x_hat,
            window_states: states,
            sigma_hat,
            alpha,
            cost: sol.objective + c0,
            qp_status: sol.status,
            active_constraints: sol.active,
            nonunique_window: nonunique,
        })
    }

    /// Assemble the dense QP in `alpha` for the current buffers, returning
    /// the instance and the constant completing the fit criterion value.
    fn build_window_qp(&mut self, depth: usize, prior: &DVector<f64>) -> Result<(DenseQp, f64), EstimatorError> {
        let (m, n, p) = (self.dataset.input_dim(), self.dataset.state_dim(), self.dataset.output_dim());
        let rho = self.config.rho;
        let r_blk = DMatrix::identity(depth, depth).kronecker(&self.config.r_weight);
        let mut u_stack = DVector::zeros(m * depth);
        let mut y_stack = DVector::zeros(p * depth);
        for (k, (uk, yk)) in self.u_buf.iter().zip(self.y_buf.iter()).enumerate() {
            u_stack.rows_mut(k * m, m).copy_from(uk);
            y_stack.rows_mut(k * p, p).copy_from(yk);
        }
        let p_weight = self.config.p_weight.clone();
        let state_box = self.config.state_box.clone();
        let data = self.depth_data(depth)?;
        let g0 = data.hx.rows(0, n);
        // Adding the transpose doubles the quadratic form exactly while
        // removing rounding asymmetry, so H = 2 (Hy' R Hy + rho G0' P G0).
        let h = {
            let raw = data.hy.transpose() * &r_blk * &data.hy + g0.transpose() * &p_weight * g0 * rho;
            &raw + raw.transpose()
        };
        let f = -2.0 * (data.hy.transpose() * (&r_blk * &y_stack) + g0.transpose() * (&p_weight * prior) * rho);
        let c0 = (y_stack.transpose() * &r_blk * &y_stack)[(0, 0)]
            + rho * (prior.transpose() * &p_weight * prior)[(0, 0)];
        let boxes = state_box.map(|bx| {
            let mut lower = DVector::zeros(n * depth);
            let mut upper = DVector::zeros(n * depth);
            for k in 0..depth {
                lower.rows_mut(k * n, n).copy_from(&bx.lower);
                upper.rows_mut(k * n, n).copy_from(&bx.upper);
            }
            BoxConstraints { sel: data.hx.clone(), lower, upper }
        });
        let qp = DenseQp::new(h, f, data.hu.clone(), u_stack, boxes)?;
        Ok((qp, c0))
    }

    /// Flat directions of cost plus equalities that move the state window
    /// make the reported window one of many optimizers.
    fn window_is_nonunique(&mut self, qp: &DenseQp, depth: usize) -> bool {
        let Ok(data) = self.depth_data(depth) else {
            return false;
        };
        let h_scale = spectral_norm(&qp.h).max(1e-300);
        let a_scale = spectral_norm(&qp.a_eq).max(1e-300);
        let cols = qp.dim();
        let rows = qp.h.nrows() + qp.a_eq.nrows();
        let mut stacked = DMatrix::zeros(rows, cols);
        stacked.view_mut((0, 0), (qp.h.nrows(), cols)).copy_from(&(&qp.h / h_scale));
        stacked
            .view_mut((qp.h.nrows(), 0), (qp.a_eq.nrows(), cols))
            .copy_from(&(&qp.a_eq / a_scale));
        let nb = null_basis(&stacked, 1e-10);
        if nb.ncols() == 0 {
            return false;
        }
        let moved = spectral_norm(&(&data.hx * &nb));
        moved > 1e-10 * spectral_norm(&data.hx).max(1.0)
    }
}
