//! Dense convex quadratic programming.
//!
//! Problems have the form
//!
//! ```text
//! min  1/2 z' H z + f' z
//! s.t. A z = b,    lower <= S z <= upper
//! ```
//!
//! with H symmetric positive semidefinite. Equality-constrained problems are
//! solved in closed form through a null-space reduction; box constraints are
//! handled by a primal active-set loop that stays feasible after a projection
//! phase. Solutions of rank-deficient problems are min-norm in the reduced
//! coordinates. Problems that are unbounded below are reported as
//! `Infeasible`: neither case has a minimizer and callers treat both as a
//! failed step.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::numeric::{lstsq, null_basis, pinv_sym};

#[derive(Debug, Error)]
pub enum QpError {
    #[error("{context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: String,
        got: String,
    },
    #[error("hessian not symmetric: asymmetry {0:.3e}")]
    NotSymmetric(f64),
    #[error("hessian not positive semidefinite: eigenvalue {0:.3e}")]
    NotPsd(f64),
    #[error("box row {row} inconsistent: lower {lower} > upper {upper}")]
    BadBounds { row: usize, lower: f64, upper: f64 },
}

fn shape_err(context: &'static str, expected: String, got: String) -> QpError {
    QpError::Shape { context, expected, got }
}

/// Two-sided bounds on selected linear functions of z. Infinite entries
/// disable a side; rows with `lower == upper` are treated as equalities.
#[derive(Debug, Clone)]
pub struct BoxConstraints {
    pub sel: DMatrix<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

/// Convex QP instance, validated on construction.
#[derive(Debug, Clone)]
pub struct DenseQp {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub boxes: Option<BoxConstraints>,
}

impl DenseQp {
    pub fn new(
        h: DMatrix<f64>,
        f: DVector<f64>,
        a_eq: DMatrix<f64>,
        b_eq: DVector<f64>,
        boxes: Option<BoxConstraints>,
    ) -> Result<Self, QpError> {
        let d = h.nrows();
        if d == 0 || h.ncols() != d {
            return Err(shape_err("H", "square, nonempty".into(), format!("{}x{}", h.nrows(), h.ncols())));
        }
        if f.len() != d {
            return Err(shape_err("f", format!("{d}"), format!("{}", f.len())));
        }
        if a_eq.ncols() != d && a_eq.nrows() > 0 {
            return Err(shape_err("A_eq", format!("{d} cols"), format!("{}", a_eq.ncols())));
        }
        if b_eq.len() != a_eq.nrows() {
            return Err(shape_err("b_eq", format!("{}", a_eq.nrows()), format!("{}", b_eq.len())));
        }
        let asym = (&h - h.transpose()).amax();
        if asym > 1e-10 * (1.0 + h.amax()) {
            return Err(QpError::NotSymmetric(asym));
        }
        let eigs = h.clone().symmetric_eigen().eigenvalues;
        let lmin = eigs.min();
        if lmin < -1e-8 * eigs.max().max(1.0) {
            return Err(QpError::NotPsd(lmin));
        }
        if let Some(bx) = &boxes {
            if bx.sel.ncols() != d {
                return Err(shape_err("box sel", format!("{d} cols"), format!("{}", bx.sel.ncols())));
            }
            let rows = bx.sel.nrows();
            if bx.lower.len() != rows || bx.upper.len() != rows {
                return Err(shape_err(
                    "box bounds",
                    format!("{rows}"),
                    format!("lower {}, upper {}", bx.lower.len(), bx.upper.len()),
                ));
            }
            for i in 0..rows {
                let (lo, up) = (bx.lower[i], bx.upper[i]);
                if lo.is_nan() || up.is_nan() || lo == f64::INFINITY || up == f64::NEG_INFINITY || lo > up {
                    return Err(QpError::BadBounds { row: i, lower: lo, upper: up });
                }
            }
        }
        Ok(DenseQp { h, f, a_eq, b_eq, boxes })
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * (z.transpose() * &self.h * z)[(0, 0)] + self.f.dot(z)
    }

    fn has_active_boxes(&self) -> bool {
        self.boxes
            .as_ref()
            .map(|bx| {
                (0..bx.sel.nrows())
                    .any(|i| bx.lower[i].is_finite() || bx.upper[i].is_finite())
            })
            .unwrap_or(false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    MaxIterations,
    Infeasible,
}

impl std::fmt::Display for QpStatus {
    fn fmt(&self, fm: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            QpStatus::Optimal => "optimal",
            QpStatus::MaxIterations => "max_iterations",
            QpStatus::Infeasible => "infeasible",
        };
        fm.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Lower,
    Upper,
}

/// Box row held at one of its bounds in the final solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActiveBound {
    pub row: usize,
    pub side: Side,
}

/// Lagrange multipliers: `eq` for equality rows, `lower`/`upper` per box row
/// (zero on inactive rows), both nonnegative at an optimum.
#[derive(Debug, Clone)]
pub struct QpMultipliers {
    pub eq: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub multipliers: QpMultipliers,
    pub active: Vec<ActiveBound>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub status: QpStatus,
}

/// Worst violation of the KKT conditions at `(z, multipliers)`:
/// stationarity, primal feasibility, dual sign, and complementarity, all in
/// the infinity norm. Multipliers on infinite bounds count as violations.
pub fn kkt_residual(qp: &DenseQp, z: &DVector<f64>, m: &QpMultipliers) -> f64 {
    let mut grad = &qp.h * z + &qp.f;
    let mut worst = 0.0_f64;
    if qp.a_eq.nrows() > 0 {
        grad += qp.a_eq.transpose() * &m.eq;
        worst = worst.max((&qp.a_eq * z - &qp.b_eq).amax());
    }
    if let Some(bx) = &qp.boxes {
        let sz = &bx.sel * z;
        grad += bx.sel.transpose() * (&m.upper - &m.lower);
        for i in 0..bx.sel.nrows() {
            for (mult, gap, finite) in [
                (m.upper[i], sz[i] - bx.upper[i], bx.upper[i].is_finite()),
                (m.lower[i], bx.lower[i] - sz[i], bx.lower[i].is_finite()),
            ] {
                if finite {
                    worst = worst.max(gap.max(0.0));
                    worst = worst.max((mult * gap).abs());
                    worst = worst.max((-mult).max(0.0));
                } else {
                    worst = worst.max(mult.abs());
                }
            }
        }
    }
    worst.max(grad.amax())
}

/// Null-space solve of `min 1/2 z'Hz + f'z s.t. A z = b`.
struct EqSolve {
    z: DVector<f64>,
    nu: DVector<f64>,
    primal_residual: f64,
    /// Residual of the reduced stationarity system; large values mean the
    /// objective is unbounded along the feasible set.
    reduced_residual: f64,
}

fn solve_eq_kkt(
    h: &DMatrix<f64>,
    f: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> EqSolve {
    let d = h.nrows();
    let (z_p, primal_residual) = if a.nrows() == 0 {
        (DVector::zeros(d), 0.0)
    } else {
        let zp = lstsq(a, b);
        let r = (a * &zp - b).amax();
        (zp, r)
    };
    let zb = null_basis(a, f64::EPSILON);
    if zb.ncols() == 0 {
        let nu = if a.nrows() == 0 {
            DVector::zeros(0)
        } else {
            lstsq(&a.transpose(), &(-(h * &z_p + f)))
        };
        return EqSolve { z: z_p, nu, primal_residual, reduced_residual: 0.0 };
    }
    let hr = zb.transpose() * h * &zb;
    let g = zb.transpose() * (h * &z_p + f);
    let w = -(pinv_sym(&hr) * &g);
    let reduced_residual = (&hr * &w + &g).amax();
    let z = &z_p + &zb * w;
    let nu = if a.nrows() == 0 {
        DVector::zeros(0)
    } else {
        lstsq(&a.transpose(), &(-(h * &z + f)))
    };
    EqSolve { z, nu, primal_residual, reduced_residual }
}

fn feasibility_tolerance(b: &DVector<f64>) -> f64 {
    1e-8 * (1.0 + b.amax())
}

fn unbounded_tolerance(g_scale: f64) -> f64 {
    1e-8 * (1.0 + g_scale)
}

fn zero_multipliers(qp: &DenseQp) -> QpMultipliers {
    let nb = qp.boxes.as_ref().map(|b| b.sel.nrows()).unwrap_or(0);
    QpMultipliers {
        eq: DVector::zeros(qp.a_eq.nrows()),
        lower: DVector::zeros(nb),
        upper: DVector::zeros(nb),
    }
}

fn package(
    qp: &DenseQp,
    z: DVector<f64>,
    multipliers: QpMultipliers,
    active: Vec<ActiveBound>,
    status: QpStatus,
) -> QpSolution {
    let objective = qp.objective(&z);
    let residual = kkt_residual(qp, &z, &multipliers);
    let status = match status {
        QpStatus::Optimal if residual > 1e-8 => QpStatus::MaxIterations,
        s => s,
    };
    QpSolution { z, multipliers, active, objective, kkt_residual: residual, status }
}

/// Solve the equality-constrained relaxation, ignoring any box rows.
pub fn solve_eq_qp(qp: &DenseQp) -> QpSolution {
    let sol = solve_eq_kkt(&qp.h, &qp.f, &qp.a_eq, &qp.b_eq);
    let mut mult = zero_multipliers(qp);
    mult.eq = sol.nu;
    if sol.primal_residual > feasibility_tolerance(&qp.b_eq) {
        return package(qp, sol.z, mult, vec![], QpStatus::Infeasible);
    }
    let g_scale = (&qp.h * &sol.z + &qp.f).amax();
    if sol.reduced_residual > unbounded_tolerance(g_scale) {
        return package(qp, sol.z, mult, vec![], QpStatus::Infeasible);
    }
    package(qp, sol.z, mult, vec![], QpStatus::Optimal)
}

/// Box rows that can actually bind, split into ranged and pinned rows.
struct BoxLayout {
    ranged: Vec<usize>,
    pinned: Vec<usize>,
}

fn layout_boxes(bx: &BoxConstraints) -> BoxLayout {
    let mut ranged = Vec::new();
    let mut pinned = Vec::new();
    for i in 0..bx.sel.nrows() {
        if bx.lower[i] == bx.upper[i] {
            pinned.push(i);
        } else if bx.lower[i].is_finite() || bx.upper[i].is_finite() {
            ranged.push(i);
        }
    }
    BoxLayout { ranged, pinned }
}

fn bound_tol(bound: f64) -> f64 {
    1e-9 * (1.0 + bound.abs())
}

/// Solve a validated QP. Dispatches to the equality path when no finite box
/// rows exist, otherwise runs the primal active-set loop.
pub fn solve_qp(qp: &DenseQp) -> QpSolution {
    if !qp.has_active_boxes() {
        return solve_eq_qp(qp);
    }
    solve_active_set(qp)
}

fn solve_active_set(qp: &DenseQp) -> QpSolution {
    let bx = qp.boxes.as_ref().expect("dispatch checked boxes");
    let layout = layout_boxes(bx);
    let d = qp.dim();
    let e = qp.a_eq.nrows();

    // Pinned rows join the equality block for the whole solve.
    let base_rows = e + layout.pinned.len();
    let mut a_base = DMatrix::zeros(base_rows, d);
    let mut b_base = DVector::zeros(base_rows);
    a_base.view_mut((0, 0), (e, d)).copy_from(&qp.a_eq);
    b_base.rows_mut(0, e).copy_from(&qp.b_eq);
    for (k, &i) in layout.pinned.iter().enumerate() {
        a_base.view_mut((e + k, 0), (1, d)).copy_from(&bx.sel.row(i));
        b_base[e + k] = bx.lower[i];
    }

    let violation = |z: &DVector<f64>| -> f64 {
        let sz = &bx.sel * z;
        layout
            .ranged
            .iter()
            .map(|&i| (sz[i] - bx.upper[i]).max(bx.lower[i] - sz[i]).max(0.0))
            .fold(0.0, f64::max)
    };

    // Phase 0: equality relaxation; done if it already sits in the box.
    let relax = solve_eq_kkt(&qp.h, &qp.f, &a_base, &b_base);
    if relax.primal_residual > feasibility_tolerance(&b_base) {
        return package(qp, relax.z, zero_multipliers(qp), vec![], QpStatus::Infeasible);
    }
    let mut z = relax.z;

    // Phase 1: pull violated rows onto their nearest bound while staying on
    // the equality manifold; the proximal term keeps the subproblem strictly
    // convex.
    for _ in 0..30 {
        let sz = &bx.sel * &z;
        let viol: Vec<usize> = layout
            .ranged
            .iter()
            .copied()
            .filter(|&i| sz[i] > bx.upper[i] + bound_tol(bx.upper[i]) || sz[i] < bx.lower[i] - bound_tol(bx.lower[i]))
            .collect();
        if viol.is_empty() {
            break;
        }
        let mut sv = DMatrix::zeros(viol.len(), d);
        let mut tv = DVector::zeros(viol.len());
        for (k, &i) in viol.iter().enumerate() {
            sv.view_mut((k, 0), (1, d)).copy_from(&bx.sel.row(i));
            tv[k] = sz[i].clamp(bx.lower[i], bx.upper[i]);
        }
        let eps = 1e-6;
        let h1 = sv.transpose() * &sv + DMatrix::identity(d, d) * eps;
        let f1 = -(sv.transpose() * &tv) - &z * eps;
        let step = solve_eq_kkt(&h1, &f1, &a_base, &b_base);
        z = step.z;
    }
    if violation(&z) > 1e-7 * (1.0 + z.amax()) {
        return package(qp, z, zero_multipliers(qp), vec![], QpStatus::Infeasible);
    }

    // Phase 2: primal active set from the feasible point.
    let sz0 = &bx.sel * &z;
    let mut working: Vec<ActiveBound> = Vec::new();
    for &i in &layout.ranged {
        if bx.upper[i].is_finite() && (sz0[i] - bx.upper[i]).abs() <= bound_tol(bx.upper[i]) {
            working.push(ActiveBound { row: i, side: Side::Upper });
        } else if bx.lower[i].is_finite() && (sz0[i] - bx.lower[i]).abs() <= bound_tol(bx.lower[i]) {
            working.push(ActiveBound { row: i, side: Side::Lower });
        }
    }

    let max_iter = 50 * (d + 1);
    for _ in 0..max_iter {
        let rows = base_rows + working.len();
        let mut aw = DMatrix::zeros(rows, d);
        let mut bw = DVector::zeros(rows);
        aw.view_mut((0, 0), (base_rows, d)).copy_from(&a_base);
        bw.rows_mut(0, base_rows).copy_from(&b_base);
        for (k, ab) in working.iter().enumerate() {
            aw.view_mut((base_rows + k, 0), (1, d)).copy_from(&bx.sel.row(ab.row));
            bw[base_rows + k] = match ab.side {
                Side::Lower => bx.lower[ab.row],
                Side::Upper => bx.upper[ab.row],
            };
        }
        let sub = solve_eq_kkt(&qp.h, &qp.f, &aw, &bw);
        let p = &sub.z - &z;

        if p.amax() <= 1e-11 * (1.0 + z.amax()) {
            // Stationary on the working set: check multiplier signs.
            let mult_tol = 1e-9 * (1.0 + sub.nu.amax());
            let mut worst: Option<(usize, f64)> = None;
            for (k, ab) in working.iter().enumerate() {
                let nu = sub.nu[base_rows + k];
                let signed = match ab.side {
                    Side::Upper => nu,
                    Side::Lower => -nu,
                };
                if signed < -mult_tol && worst.map(|(_, w)| signed < w).unwrap_or(true) {
                    worst = Some((k, signed));
                }
            }
            match worst {
                Some((k, _)) => {
                    working.remove(k);
                    continue;
                }
                None => {
                    let (mult, active) = extract_multipliers(bx, &layout, &sub.nu, base_rows, &working, e);
                    return package(qp, sub.z, mult, active, QpStatus::Optimal);
                }
            }
        }

        // Step toward the subproblem optimum, blocked by inactive bounds.
        let sp = &bx.sel * &p;
        let sz = &bx.sel * &z;
        let gtol = 1e-13 * (1.0 + p.amax());
        let mut alpha = 1.0_f64;
        let mut hit: Option<ActiveBound> = None;
        for &i in &layout.ranged {
            if working.iter().any(|ab| ab.row == i) {
                continue;
            }
            if sp[i] > gtol && bx.upper[i].is_finite() {
                let a = (bx.upper[i] - sz[i]) / sp[i];
                if a < alpha {
                    alpha = a.max(0.0);
                    hit = Some(ActiveBound { row: i, side: Side::Upper });
                }
            } else if sp[i] < -gtol && bx.lower[i].is_finite() {
                let a = (bx.lower[i] - sz[i]) / sp[i];
                if a < alpha {
                    alpha = a.max(0.0);
                    hit = Some(ActiveBound { row: i, side: Side::Lower });
                }
            }
        }
        let before = qp.objective(&z);
        z += p * alpha;
        debug_assert!(
            qp.objective(&z) <= before + 1e-7 * (1.0 + before.abs()),
            "objective increased along active-set step"
        );
        if let Some(ab) = hit {
            if alpha < 1.0 {
                working.push(ab);
            }
        }
    }
    let (mult, active) = {
        let nb = bx.sel.nrows();
        (
            QpMultipliers {
                eq: DVector::zeros(e),
                lower: DVector::zeros(nb),
                upper: DVector::zeros(nb),
            },
            working.clone(),
        )
    };
    package(qp, z, mult, active, QpStatus::MaxIterations)
}

/// Distribute stacked equality multipliers back onto eq / pinned / working
/// box rows. Pinned rows may carry either sign and land on the matching side.
fn extract_multipliers(
    bx: &BoxConstraints,
    layout: &BoxLayout,
    nu: &DVector<f64>,
    base_rows: usize,
    working: &[ActiveBound],
    e: usize,
) -> (QpMultipliers, Vec<ActiveBound>) {
    let nb = bx.sel.nrows();
    let mut mult = QpMultipliers {
        eq: DVector::from_fn(e, |i, _| nu[i]),
        lower: DVector::zeros(nb),
        upper: DVector::zeros(nb),
    };
    let mut active = Vec::new();
    for (k, &i) in layout.pinned.iter().enumerate() {
        let v = nu[e + k];
        if v >= 0.0 {
            mult.upper[i] = v;
            active.push(ActiveBound { row: i, side: Side::Upper });
        } else {
            mult.lower[i] = -v;
            active.push(ActiveBound { row: i, side: Side::Lower });
        }
    }
    for (k, ab) in working.iter().enumerate() {
        let v = nu[base_rows + k];
        match ab.side {
            // Tiny negative values are sign noise from the min-norm solve.
            Side::Upper => mult.upper[ab.row] = v.max(0.0),
            Side::Lower => mult.lower[ab.row] = (-v).max(0.0),
        }
        active.push(*ab);
    }
    (mult, active)
}
