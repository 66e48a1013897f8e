//! Block-Hankel trajectory matrices, persistency-of-excitation checks, and
//! the certified offline dataset backing the estimator.
//!
//! For a sequence `s(0..N-1)` of q-vectors and depth `L`, the Hankel matrix
//! has block entry `s(i + j)` at block row i, column j:
//!
//! ```text
//! H_L(s) = [ s(0)   s(1)   ...  s(N-L)   ]
//!          [ s(1)   s(2)   ...  s(N-L+1) ]
//!          [ ...                         ]
//!          [ s(L-1) s(L)   ...  s(N-1)   ]      (qL rows, N-L+1 columns)
//! ```
//!
//! Every length-L window of any trajectory of a controllable LTI system lies
//! in the column span of the stacked input/output Hankel matrices once the
//! offline input is persistently exciting of order `L + n`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::numeric::{lstsq, numerical_rank};
use crate::rng::SampleStream;

#[derive(Debug, Error)]
pub enum HankelError {
    #[error("{context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: String,
        got: String,
    },
    #[error("depth {depth} exceeds sample count {len}")]
    DepthTooLarge { depth: usize, len: usize },
    #[error("input not persistently exciting of order {order}: rank {achieved}, required {required}")]
    NotPersistentlyExciting {
        order: usize,
        required: usize,
        achieved: usize,
    },
    #[error("dataset certified to excitation order {certified}, operation requires {required}")]
    InsufficientCertification { certified: usize, required: usize },
}

fn shape_err(context: &'static str, expected: String, got: String) -> HankelError {
    HankelError::Shape { context, expected, got }
}

fn uniform_dim(samples: &[DVector<f64>], context: &'static str) -> Result<usize, HankelError> {
    let dim = samples
        .first()
        .ok_or_else(|| shape_err(context, "at least one sample".into(), "0".into()))?
        .len();
    if dim == 0 {
        return Err(shape_err(context, "nonzero sample dimension".into(), "0".into()));
    }
    for (k, s) in samples.iter().enumerate() {
        if s.len() != dim {
            return Err(shape_err(context, format!("{dim} at sample {k}"), format!("{}", s.len())));
        }
    }
    Ok(dim)
}

/// Block-Hankel matrix of a vector sequence.
#[derive(Debug, Clone)]
pub struct HankelMatrix {
    pub matrix: DMatrix<f64>,
    pub depth: usize,
    pub block_dim: usize,
}

impl HankelMatrix {
    /// Rows of block i, the i-th time shift.
    pub fn block(&self, i: usize) -> DMatrix<f64> {
        self.matrix.rows(i * self.block_dim, self.block_dim).into()
    }

    pub fn columns(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Build the depth-L block-Hankel matrix of `samples`.
pub fn build_hankel(samples: &[DVector<f64>], depth: usize) -> Result<HankelMatrix, HankelError> {
    let dim = uniform_dim(samples, "hankel samples")?;
    if depth == 0 {
        return Err(shape_err("depth", "at least 1".into(), "0".into()));
    }
    if depth > samples.len() {
        return Err(HankelError::DepthTooLarge { depth, len: samples.len() });
    }
    let cols = samples.len() - depth + 1;
    let mut matrix = DMatrix::zeros(dim * depth, cols);
    for i in 0..depth {
        for j in 0..cols {
            matrix.view_mut((i * dim, j), (dim, 1)).copy_from(&samples[i + j]);
        }
    }
    Ok(HankelMatrix { matrix, depth, block_dim: dim })
}

/// Outcome of a persistency-of-excitation rank check.
#[derive(Debug, Clone, Copy)]
pub struct PeReport {
    pub order: usize,
    pub required_rank: usize,
    pub achieved_rank: usize,
    /// False when the sequence is too short for the matrix to be wide enough.
    pub wide_enough: bool,
}

impl PeReport {
    pub fn satisfied(&self) -> bool {
        self.wide_enough && self.achieved_rank == self.required_rank
    }
}

/// Rank report for `H_order(inputs)` against the full row rank `m * order`.
pub fn excitation_report(inputs: &[DVector<f64>], order: usize) -> Result<PeReport, HankelError> {
    let m = uniform_dim(inputs, "excitation inputs")?;
    let required_rank = m * order;
    if order == 0 {
        return Err(shape_err("order", "at least 1".into(), "0".into()));
    }
    if order > inputs.len() {
        return Ok(PeReport { order, required_rank, achieved_rank: 0, wide_enough: false });
    }
    let h = build_hankel(inputs, order)?;
    let wide_enough = h.columns() >= required_rank;
    let achieved_rank = numerical_rank(&h.matrix);
    Ok(PeReport { order, required_rank, achieved_rank, wide_enough })
}

/// True when `H_order(inputs)` has full row rank `m * order`.
pub fn is_persistently_exciting(inputs: &[DVector<f64>], order: usize) -> bool {
    excitation_report(inputs, order).map(|r| r.satisfied()).unwrap_or(false)
}

/// Noise-free offline trajectory with a recorded excitation certificate.
///
/// The certificate is monotone: `certify_excitation` only ever raises it, and
/// span operations refuse to run past it. Fields stay private so the
/// certificate cannot drift from the data.
#[derive(Debug, Clone)]
pub struct OfflineDataset {
    inputs: Vec<DVector<f64>>,
    states: Vec<DVector<f64>>,
    outputs: Vec<DVector<f64>>,
    certified_order: usize,
}

impl OfflineDataset {
    pub fn new(
        inputs: Vec<DVector<f64>>,
        states: Vec<DVector<f64>>,
        outputs: Vec<DVector<f64>>,
    ) -> Result<Self, HankelError> {
        let len = inputs.len();
        if states.len() != len || outputs.len() != len {
            return Err(shape_err(
                "dataset",
                format!("equal sequence lengths, inputs {len}"),
                format!("states {}, outputs {}", states.len(), outputs.len()),
            ));
        }
        uniform_dim(&inputs, "dataset inputs")?;
        uniform_dim(&states, "dataset states")?;
        uniform_dim(&outputs, "dataset outputs")?;
        Ok(OfflineDataset { inputs, states, outputs, certified_order: 0 })
    }

    /// Verify persistency of excitation at `order` and record the certificate.
    pub fn certify_excitation(&mut self, order: usize) -> Result<PeReport, HankelError> {
        let report = excitation_report(&self.inputs, order)?;
        if !report.satisfied() {
            return Err(HankelError::NotPersistentlyExciting {
                order,
                required: report.required_rank,
                achieved: report.achieved_rank,
            });
        }
        self.certified_order = self.certified_order.max(order);
        Ok(report)
    }

    pub fn certified_order(&self) -> usize {
        self.certified_order
    }

    pub fn inputs(&self) -> &[DVector<f64>] {
        &self.inputs
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn outputs(&self) -> &[DVector<f64>] {
        &self.outputs
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn state_dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn output_dim(&self) -> usize {
        self.outputs[0].len()
    }

    fn require_certificate(&self, depth: usize) -> Result<(), HankelError> {
        let required = depth + self.state_dim();
        if self.certified_order < required {
            return Err(HankelError::InsufficientCertification {
                certified: self.certified_order,
                required,
            });
        }
        Ok(())
    }

    /// Least-squares coefficients expressing the window `(u_win, y_win)` in
    /// the stacked input/output Hankel span, plus the fit residual.
    ///
    /// Requires certification to order `depth + n`, under which every exact
    /// system window fits with zero residual.
    pub fn span_solve(
        &self,
        depth: usize,
        u_win: &[DVector<f64>],
        y_win: &[DVector<f64>],
    ) -> Result<(DVector<f64>, f64), HankelError> {
        self.require_certificate(depth)?;
        if u_win.len() != depth || y_win.len() != depth {
            return Err(shape_err(
                "window",
                format!("{depth} samples"),
                format!("u {}, y {}", u_win.len(), y_win.len()),
            ));
        }
        let hu = build_hankel(&self.inputs, depth)?;
        let hy = build_hankel(&self.outputs, depth)?;
        let m = self.input_dim();
        let p = self.output_dim();
        let rows = (m + p) * depth;
        let cols = hu.columns();
        let mut stacked = DMatrix::zeros(rows, cols);
        stacked.view_mut((0, 0), (m * depth, cols)).copy_from(&hu.matrix);
        stacked.view_mut((m * depth, 0), (p * depth, cols)).copy_from(&hy.matrix);
        let mut target = DVector::zeros(rows);
        for k in 0..depth {
            if u_win[k].len() != m {
                return Err(shape_err("window inputs", format!("{m}"), format!("{}", u_win[k].len())));
            }
            if y_win[k].len() != p {
                return Err(shape_err("window outputs", format!("{p}"), format!("{}", y_win[k].len())));
            }
            target.rows_mut(k * m, m).copy_from(&u_win[k]);
            target.rows_mut(m * depth + k * p, p).copy_from(&y_win[k]);
        }
        let alpha = lstsq(&stacked, &target);
        let residual = (&stacked * &alpha - &target).norm();
        Ok((alpha, residual))
    }

    /// Distance of the window from the stacked Hankel span.
    pub fn span_residual(
        &self,
        depth: usize,
        u_win: &[DVector<f64>],
        y_win: &[DVector<f64>],
    ) -> Result<f64, HankelError> {
        Ok(self.span_solve(depth, u_win, y_win)?.1)
    }
}

/// Uniform excitation sequence on `[low, high)^m`, certified persistently
/// exciting of `order`.
///
/// Attempt k draws from ChaCha stream k of `seed` (at most 10 attempts), so
/// the returned sequence is a pure function of the arguments.
pub fn generate_pe_input(
    m: usize,
    len: usize,
    order: usize,
    low: f64,
    high: f64,
    seed: u64,
) -> Result<Vec<DVector<f64>>, HankelError> {
    if m == 0 || len == 0 {
        return Err(shape_err("excitation", "m >= 1 and len >= 1".into(), format!("m={m} len={len}")));
    }
    let mut last = PeReport { order, required_rank: m * order, achieved_rank: 0, wide_enough: false };
    for attempt in 0..10 {
        let mut stream = SampleStream::with_stream(seed, attempt);
        let inputs: Vec<DVector<f64>> =
            (0..len).map(|_| DVector::from_fn(m, |_, _| stream.uniform(low, high))).collect();
        let report = excitation_report(&inputs, order)?;
        if report.satisfied() {
            return Ok(inputs);
        }
        last = report;
    }
    Err(HankelError::NotPersistentlyExciting {
        order,
        required: last.required_rank,
        achieved: last.achieved_rank,
    })
}
