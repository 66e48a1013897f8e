//! CSV serialization of offline datasets and estimation runs.
//!
//! Dataset files carry the offline identification data:
//!
//! ```text
//! k,u_0..u_{m-1},x_0..x_{n-1},y_0..y_{p-1}
//! ```
//!
//! Run files carry one closed-loop estimation run per file:
//!
//! ```text
//! t,u,y_clean,y_noisy,v,x_true_0,..,x_hat_0,..,e_norm,sigma_norm,cost,qp_status,bound
//! ```
//!
//! Scalar input/output columns (`u`, `y_clean`, `y_noisy`, `v`) drop the
//! index suffix; state columns are always indexed. Floats are written with
//! the shortest round-trip decimal form, so writing and re-reading a file
//! reproduces every value bit for bit and byte-identical output is a pure
//! function of the run.

use dmhe::analysis::RunRecord;
use dmhe::lti::{LtiSystem, Trajectory};
use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("bad header: expected {expected}, got {got}")]
    Header { expected: String, got: String },
    #[error("line {line}: {msg}")]
    Row { line: usize, msg: String },
    #[error("sample {row}: {msg}")]
    Inconsistent { row: usize, msg: String },
    #[error("{0}")]
    Structure(String),
}

fn row_err(line: usize, msg: impl Into<String>) -> DataError {
    DataError::Row { line, msg: msg.into() }
}

fn push_float(out: &mut String, v: f64) {
    out.push(',');
    out.push_str(&format!("{v}"));
}

fn indexed_names(base: &str, count: usize) -> String {
    (0..count).map(|i| format!("{base}_{i}")).collect::<Vec<_>>().join(",")
}

/// Column names for a signal block: bare `base` when scalar, indexed
/// otherwise.
fn signal_names(base: &str, count: usize) -> String {
    if count == 1 {
        base.to_string()
    } else {
        indexed_names(base, count)
    }
}

/// Offline dataset of one noise-free trajectory, serialized sample by
/// sample with the clean outputs.
pub fn dataset_csv(traj: &Trajectory) -> String {
    let m = traj.inputs[0].len();
    let n = traj.states[0].len();
    let p = traj.outputs_clean[0].len();
    let mut out = String::new();
    out.push('k');
    out.push(',');
    out.push_str(&indexed_names("u", m));
    out.push(',');
    out.push_str(&indexed_names("x", n));
    out.push(',');
    out.push_str(&indexed_names("y", p));
    out.push('\n');
    for k in 0..traj.len() {
        out.push_str(&format!("{k}"));
        for v in traj.inputs[k].iter() {
            push_float(&mut out, *v);
        }
        for v in traj.states[k].iter() {
            push_float(&mut out, *v);
        }
        for v in traj.outputs_clean[k].iter() {
            push_float(&mut out, *v);
        }
        out.push('\n');
    }
    out
}

/// One estimation run: truth, measurements, estimates, per-step diagnostics,
/// and the error envelope (`NaN` when no envelope constants are available).
pub fn run_csv(run: &RunRecord, bounds: &[f64]) -> String {
    let traj = &run.trajectory;
    let m = traj.inputs[0].len();
    let n = traj.states[0].len();
    let p = traj.outputs_clean[0].len();
    let mut out = String::new();
    out.push('t');
    for base in ["u", "y_clean", "y_noisy", "v"] {
        out.push(',');
        let count = if base == "u" { m } else { p };
        out.push_str(&signal_names(base, count));
    }
    out.push(',');
    out.push_str(&indexed_names("x_true", n));
    out.push(',');
    out.push_str(&indexed_names("x_hat", n));
    out.push_str(",e_norm,sigma_norm,cost,qp_status,bound\n");
    for (t, est) in run.estimates.iter().enumerate() {
        out.push_str(&format!("{t}"));
        for v in traj.inputs[t].iter() {
            push_float(&mut out, *v);
        }
        for v in traj.outputs_clean[t].iter() {
            push_float(&mut out, *v);
        }
        for v in traj.outputs_noisy[t].iter() {
            push_float(&mut out, *v);
        }
        for v in traj.noise[t].iter() {
            push_float(&mut out, *v);
        }
        for v in traj.states[t].iter() {
            push_float(&mut out, *v);
        }
        for v in est.x_hat.iter() {
            push_float(&mut out, *v);
        }
        push_float(&mut out, (&est.x_hat - &traj.states[t]).norm());
        let sigma_norm =
            est.sigma_hat.iter().map(|s| s.norm_squared()).sum::<f64>().sqrt();
        push_float(&mut out, sigma_norm);
        push_float(&mut out, est.cost);
        out.push(',');
        out.push_str(&format!("{}", est.qp_status));
        push_float(&mut out, bounds.get(t).copied().unwrap_or(f64::NAN));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub struct ParsedDataset {
    pub inputs: Vec<DVector<f64>>,
    pub states: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
}

impl ParsedDataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Number of consecutive `base_0..base_{k-1}` columns starting at `pos`.
fn indexed_block(names: &[&str], pos: usize, base: &str) -> usize {
    let mut count = 0;
    while pos + count < names.len() && names[pos + count] == format!("{base}_{count}") {
        count += 1;
    }
    count
}

/// Block of signal columns at `pos`: a bare `base` column counts as one.
fn signal_block(names: &[&str], pos: usize, base: &str) -> usize {
    if pos < names.len() && names[pos] == base {
        1
    } else {
        indexed_block(names, pos, base)
    }
}

fn parse_float(line: usize, name: &str, field: &str) -> Result<f64, DataError> {
    field
        .parse::<f64>()
        .map_err(|_| row_err(line, format!("{name} field {field:?} is not a number")))
}

fn split_line(line: &str) -> Vec<&str> {
    line.trim_end_matches('\r').split(',').collect()
}

/// Parse dataset CSV text. The header fixes the signal dimensions; every
/// row must carry the running sample index and finite values.
pub fn parse_dataset_str(text: &str) -> Result<ParsedDataset, DataError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| DataError::Structure("empty file".into()))?;
    let names = split_line(header);
    if names.first() != Some(&"k") {
        return Err(DataError::Header {
            expected: "k,u_0..,x_0..,y_0..".into(),
            got: header.into(),
        });
    }
    let m = indexed_block(&names, 1, "u");
    let n = indexed_block(&names, 1 + m, "x");
    let p = indexed_block(&names, 1 + m + n, "y");
    if m == 0 || n == 0 || p == 0 || names.len() != 1 + m + n + p {
        return Err(DataError::Header {
            expected: "k,u_0..,x_0..,y_0..".into(),
            got: header.into(),
        });
    }
    let width = names.len();
    let mut ds = ParsedDataset { inputs: Vec::new(), states: Vec::new(), outputs: Vec::new() };
    for (idx, line) in lines {
        if line.trim_end_matches('\r').is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields = split_line(line);
        if fields.len() != width {
            return Err(row_err(lineno, format!("expected {width} fields, got {}", fields.len())));
        }
        let k: usize = fields[0]
            .parse()
            .map_err(|_| row_err(lineno, format!("sample index {:?} is not an integer", fields[0])))?;
        if k != ds.len() {
            return Err(row_err(lineno, format!("sample index {k} out of order, expected {}", ds.len())));
        }
        let mut values = Vec::with_capacity(width - 1);
        for (name, field) in names[1..].iter().zip(&fields[1..]) {
            let v = parse_float(lineno, name, field)?;
            if !v.is_finite() {
                return Err(row_err(lineno, format!("{name} value {v} is not finite")));
            }
            values.push(v);
        }
        ds.inputs.push(DVector::from_column_slice(&values[..m]));
        ds.states.push(DVector::from_column_slice(&values[m..m + n]));
        ds.outputs.push(DVector::from_column_slice(&values[m + n..]));
    }
    if ds.is_empty() {
        return Err(DataError::Structure("no data rows".into()));
    }
    Ok(ds)
}

/// Check that the dataset is a trajectory of the given plant: the state
/// recursion and the output map must hold to relative precision 1e-12.
pub fn verify_dataset_consistency(ds: &ParsedDataset, sys: &LtiSystem) -> Result<(), DataError> {
    let (m, n, p) = (ds.inputs[0].len(), ds.states[0].len(), ds.outputs[0].len());
    if m != sys.input_dim() || n != sys.state_dim() || p != sys.output_dim() {
        return Err(DataError::Structure(format!(
            "dataset dimensions (m={m}, n={n}, p={p}) do not match the system \
             (m={}, n={}, p={})",
            sys.input_dim(),
            sys.state_dim(),
            sys.output_dim()
        )));
    }
    for k in 0..ds.len() {
        let y_pred = &sys.c * &ds.states[k] + &sys.d * &ds.inputs[k];
        let y_tol = 1e-12 * (1.0 + y_pred.amax().max(ds.outputs[k].amax()));
        if (&ds.outputs[k] - &y_pred).amax() > y_tol {
            return Err(DataError::Inconsistent {
                row: k,
                msg: format!("output differs from C x + D u by {:.3e}", (&ds.outputs[k] - y_pred).amax()),
            });
        }
        if k + 1 < ds.len() {
            let x_pred = &sys.a * &ds.states[k] + &sys.b * &ds.inputs[k];
            let x_tol = 1e-12 * (1.0 + x_pred.amax().max(ds.states[k + 1].amax()));
            if (&ds.states[k + 1] - &x_pred).amax() > x_tol {
                return Err(DataError::Inconsistent {
                    row: k + 1,
                    msg: format!(
                        "state differs from A x + B u by {:.3e}",
                        (&ds.states[k + 1] - x_pred).amax()
                    ),
                });
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ParsedRun {
    pub inputs: Vec<DVector<f64>>,
    pub outputs_clean: Vec<DVector<f64>>,
    pub outputs_noisy: Vec<DVector<f64>>,
    pub noise: Vec<DVector<f64>>,
    pub x_true: Vec<DVector<f64>>,
    pub x_hat: Vec<DVector<f64>>,
    pub e_norm: Vec<f64>,
    pub sigma_norm: Vec<f64>,
    pub cost: Vec<f64>,
    pub qp_status: Vec<String>,
    pub bound: Vec<f64>,
}

impl ParsedRun {
    pub fn len(&self) -> usize {
        self.x_true.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_true.is_empty()
    }

    /// Per-step norms of the estimation error recomputed from the state
    /// columns.
    pub fn error_norms(&self) -> Vec<f64> {
        self.x_true.iter().zip(&self.x_hat).map(|(x, xh)| (xh - x).norm()).collect()
    }

    pub fn noise_norms(&self) -> Vec<f64> {
        self.noise.iter().map(|v| v.norm()).collect()
    }
}

/// Parse run CSV text. Dimensions come from the header; diagnostic columns
/// (`bound` in particular) may be non-finite.
pub fn parse_run_str(text: &str) -> Result<ParsedRun, DataError> {
    let expected = "t,u..,y_clean..,y_noisy..,v..,x_true_0..,x_hat_0..,e_norm,sigma_norm,cost,qp_status,bound";
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| DataError::Structure("empty file".into()))?;
    let names = split_line(header);
    let bad_header = || DataError::Header { expected: expected.into(), got: header.into() };
    if names.first() != Some(&"t") {
        return Err(bad_header());
    }
    let m = signal_block(&names, 1, "u");
    let py = signal_block(&names, 1 + m, "y_clean");
    let pn = signal_block(&names, 1 + m + py, "y_noisy");
    let pv = signal_block(&names, 1 + m + py + pn, "v");
    if m == 0 || py == 0 || py != pn || py != pv {
        return Err(bad_header());
    }
    let p = py;
    let xs = 1 + m + 3 * p;
    let n = indexed_block(&names, xs, "x_true");
    let nh = indexed_block(&names, xs + n, "x_hat");
    if n == 0 || n != nh {
        return Err(bad_header());
    }
    let tail = &names[xs + 2 * n..];
    if tail != ["e_norm", "sigma_norm", "cost", "qp_status", "bound"] {
        return Err(bad_header());
    }
    let width = names.len();
    let status_col = width - 2;
    let mut run = ParsedRun {
        inputs: Vec::new(),
        outputs_clean: Vec::new(),
        outputs_noisy: Vec::new(),
        noise: Vec::new(),
        x_true: Vec::new(),
        x_hat: Vec::new(),
        e_norm: Vec::new(),
        sigma_norm: Vec::new(),
        cost: Vec::new(),
        qp_status: Vec::new(),
        bound: Vec::new(),
    };
    for (idx, line) in lines {
        if line.trim_end_matches('\r').is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let fields = split_line(line);
        if fields.len() != width {
            return Err(row_err(lineno, format!("expected {width} fields, got {}", fields.len())));
        }
        let t: usize = fields[0]
            .parse()
            .map_err(|_| row_err(lineno, format!("time index {:?} is not an integer", fields[0])))?;
        if t != run.len() {
            return Err(row_err(lineno, format!("time index {t} out of order, expected {}", run.len())));
        }
        let mut values = Vec::with_capacity(width - 2);
        for (col, field) in fields.iter().enumerate().skip(1) {
            if col == status_col {
                continue;
            }
            values.push(parse_float(lineno, names[col], field)?);
        }
        let mut pos = 0;
        let mut take = |count: usize| {
            let v = DVector::from_column_slice(&values[pos..pos + count]);
            pos += count;
            v
        };
        run.inputs.push(take(m));
        run.outputs_clean.push(take(p));
        run.outputs_noisy.push(take(p));
        run.noise.push(take(p));
        run.x_true.push(take(n));
        run.x_hat.push(take(n));
        run.e_norm.push(values[pos]);
        run.sigma_norm.push(values[pos + 1]);
        run.cost.push(values[pos + 2]);
        run.qp_status.push(fields[status_col].to_string());
        run.bound.push(values[pos + 3]);
    }
    if run.is_empty() {
        return Err(DataError::Structure("no data rows".into()));
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use dmhe::estimator::{Estimate, MheConfig};
    use dmhe::lti::{benchmark_system, simulate_clean};
    use dmhe::qp::QpStatus;
    use nalgebra::DMatrix;

    fn sample_trajectory() -> Trajectory {
        let sys = benchmark_system();
        let inputs: Vec<DVector<f64>> =
            (0..6).map(|k| DVector::from_element(1, (k as f64) * 0.5 - 1.0)).collect();
        simulate_clean(&sys, &DVector::from_column_slice(&[7.0, 7.0]), &inputs).unwrap()
    }

    fn sample_run() -> RunRecord {
        let traj = sample_trajectory();
        let estimates = (0..traj.len())
            .map(|t| Estimate {
                t,
                x_hat: &traj.states[t] * 1.01,
                window_states: vec![traj.states[t].clone()],
                sigma_hat: vec![DVector::from_element(1, 0.25)],
                alpha: DVector::zeros(3),
                cost: t as f64 * 0.125,
                qp_status: QpStatus::Optimal,
                active_constraints: Vec::new(),
                nonunique_window: false,
            })
            .collect();
        let config = MheConfig::new(
            2,
            1.0,
            DMatrix::identity(2, 2),
            DMatrix::identity(1, 1),
            DVector::zeros(2),
            None,
        )
        .unwrap();
        RunRecord { trajectory: traj, estimates, config, seed: 7 }
    }

    #[test]
    fn dataset_round_trips_exactly() {
        let traj = sample_trajectory();
        let text = dataset_csv(&traj);
        assert!(text.starts_with("k,u_0,x_0,x_1,y_0\n"));
        let ds = parse_dataset_str(&text).unwrap();
        assert_eq!(ds.len(), traj.len());
        for k in 0..ds.len() {
            assert_eq!(ds.inputs[k], traj.inputs[k]);
            assert_eq!(ds.states[k], traj.states[k]);
            assert_eq!(ds.outputs[k], traj.outputs_clean[k]);
        }
    }

    #[test]
    fn simulated_dataset_is_consistent() {
        let ds = parse_dataset_str(&dataset_csv(&sample_trajectory())).unwrap();
        verify_dataset_consistency(&ds, &benchmark_system()).unwrap();
    }

    #[test]
    fn perturbed_state_fails_consistency() {
        let mut ds = parse_dataset_str(&dataset_csv(&sample_trajectory())).unwrap();
        ds.states[3][0] += 1e-6;
        let err = verify_dataset_consistency(&ds, &benchmark_system()).unwrap_err();
        assert!(matches!(err, DataError::Inconsistent { row: 3, .. }), "{err}");
    }

    #[test]
    fn dataset_header_mismatch_rejected() {
        let err = parse_dataset_str("k,u_0,q_0,y_0\n0,1,2,3\n").unwrap_err();
        assert!(matches!(err, DataError::Header { .. }), "{err}");
    }

    #[test]
    fn dataset_bad_float_reports_line() {
        let text = "k,u_0,x_0,y_0\n0,1.0,2.0,3.0\n1,oops,2.0,3.0\n";
        let err = parse_dataset_str(text).unwrap_err();
        assert!(matches!(err, DataError::Row { line: 3, .. }), "{err}");
    }

    #[test]
    fn dataset_index_gap_rejected() {
        let text = "k,u_0,x_0,y_0\n0,1.0,2.0,3.0\n2,1.0,2.0,3.0\n";
        let err = parse_dataset_str(text).unwrap_err();
        assert!(matches!(err, DataError::Row { line: 3, .. }), "{err}");
    }

    #[test]
    fn dataset_nonfinite_rejected() {
        let text = "k,u_0,x_0,y_0\n0,inf,2.0,3.0\n";
        let err = parse_dataset_str(text).unwrap_err();
        assert!(format!("{err}").contains("not finite"), "{err}");
    }

    #[test]
    fn run_round_trips_exactly() {
        let run = sample_run();
        let bounds: Vec<f64> = (0..run.estimates.len()).map(|t| 10.0 + t as f64).collect();
        let text = run_csv(&run, &bounds);
        assert!(text.starts_with(
            "t,u,y_clean,y_noisy,v,x_true_0,x_true_1,x_hat_0,x_hat_1,e_norm,sigma_norm,cost,qp_status,bound\n"
        ));
        let parsed = parse_run_str(&text).unwrap();
        assert_eq!(parsed.len(), run.estimates.len());
        #[allow(clippy::needless_range_loop)]
        for t in 0..parsed.len() {
            assert_eq!(parsed.x_true[t], run.trajectory.states[t]);
            assert_eq!(parsed.x_hat[t], run.estimates[t].x_hat);
            assert_eq!(parsed.bound[t], bounds[t]);
            assert_eq!(parsed.qp_status[t], "optimal");
            assert_eq!(
                parsed.e_norm[t],
                (&run.estimates[t].x_hat - &run.trajectory.states[t]).norm()
            );
        }
    }

    #[test]
    fn run_bound_may_be_nan() {
        let run = sample_run();
        let bounds = vec![f64::NAN; run.estimates.len()];
        let parsed = parse_run_str(&run_csv(&run, &bounds)).unwrap();
        assert!(parsed.bound.iter().all(|b| b.is_nan()));
    }

    #[test]
    fn run_header_block_mismatch_rejected() {
        let text = "t,u,y_clean,y_noisy,v,x_true_0,x_hat_0,x_hat_1,e_norm,sigma_norm,cost,qp_status,bound\n";
        let err = parse_run_str(text).unwrap_err();
        assert!(matches!(err, DataError::Header { .. }), "{err}");
    }

    #[test]
    fn run_short_row_rejected() {
        let run = sample_run();
        let text = run_csv(&run, &[1.0; 6]);
        let mut lines: Vec<&str> = text.lines().collect();
        let shortened = lines[1].rsplit_once(',').unwrap().0.to_string();
        lines[1] = &shortened;
        let err = parse_run_str(&lines.join("\n")).unwrap_err();
        assert!(matches!(err, DataError::Row { line: 2, .. }), "{err}");
    }

    #[test]
    fn byte_identical_for_equal_runs() {
        let a = run_csv(&sample_run(), &[1.0; 6]);
        let b = run_csv(&sample_run(), &[1.0; 6]);
        assert_eq!(a, b);
    }
}
