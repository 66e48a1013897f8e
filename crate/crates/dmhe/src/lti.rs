//! Discrete-time LTI state-space models, structural checks, observer design,
//! and the exponential output-stability constants derived from an observer.
//!
//! The model is
//!
//! ```text
//! x(k+1) = A x(k) + B u(k)
//! y(k)   = C x(k) + D u(k) + v(k)
//! ```
//!
//! with `v` a measurement disturbance. Offline data is always noise-free;
//! `v` enters only through online measurements.

use nalgebra::{Complex, DMatrix, DVector};
use thiserror::Error;

use crate::numeric::{numerical_rank, spectral_norm};

#[derive(Debug, Error)]
pub enum LtiError {
    #[error("{context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: String,
        got: String,
    },
    #[error("pair (A, C) is not detectable")]
    NotDetectable,
    #[error("observer design failed: {0}")]
    ObserverDesign(String),
    #[error("Lyapunov solve failed: {0}")]
    Lyapunov(String),
    #[error("Riccati iteration did not converge")]
    RiccatiDiverged,
    #[error("observer gain does not stabilize A - KC: spectral radius {0}")]
    UnstableObserver(f64),
}

fn shape_err(context: &'static str, expected: String, got: String) -> LtiError {
    LtiError::Shape { context, expected, got }
}

/// Discrete-time LTI system (A, B, C, D).
#[derive(Debug, Clone)]
pub struct LtiSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl LtiSystem {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
    ) -> Result<Self, LtiError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(shape_err("A", format!("{n}x{n}"), format!("{}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != n {
            return Err(shape_err("B", format!("{n} rows"), format!("{} rows", b.nrows())));
        }
        if c.ncols() != n {
            return Err(shape_err("C", format!("{n} cols"), format!("{} cols", c.ncols())));
        }
        let m = b.ncols();
        let p = c.nrows();
        if d.nrows() != p || d.ncols() != m {
            return Err(shape_err("D", format!("{p}x{m}"), format!("{}x{}", d.nrows(), d.ncols())));
        }
        if n == 0 || m == 0 || p == 0 {
            return Err(shape_err("system", "positive dimensions".into(), format!("n={n} m={m} p={p}")));
        }
        Ok(LtiSystem { a, b, c, d })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }
}

/// Lightly damped planar rotation benchmark (sampled harmonic oscillator)
/// with scalar input and position-only measurement.
pub fn benchmark_system() -> LtiSystem {
    LtiSystem::new(
        DMatrix::from_row_slice(2, 2, &[0.9950, 0.0998, -0.0998, 0.9950]),
        DMatrix::from_row_slice(2, 1, &[0.1, 0.1]),
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        DMatrix::zeros(1, 1),
    )
    .expect("fixed dimensions")
}

/// Simulated trajectory: states, inputs, and clean/noisy outputs of equal length.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub inputs: Vec<DVector<f64>>,
    pub states: Vec<DVector<f64>>,
    pub outputs_clean: Vec<DVector<f64>>,
    pub outputs_noisy: Vec<DVector<f64>>,
    pub noise: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Simulate for `inputs.len()` steps from `x0`, adding `noise[k]` to `y(k)`.
pub fn simulate(
    sys: &LtiSystem,
    x0: &DVector<f64>,
    inputs: &[DVector<f64>],
    noise: &[DVector<f64>],
) -> Result<Trajectory, LtiError> {
    let (n, m, p) = (sys.state_dim(), sys.input_dim(), sys.output_dim());
    if x0.len() != n {
        return Err(shape_err("x0", format!("{n}"), format!("{}", x0.len())));
    }
    if inputs.is_empty() {
        return Err(shape_err("inputs", "at least one sample".into(), "0".into()));
    }
    if noise.len() != inputs.len() {
        return Err(shape_err("noise", format!("{} samples", inputs.len()), format!("{}", noise.len())));
    }
    for (k, u) in inputs.iter().enumerate() {
        if u.len() != m {
            return Err(shape_err("inputs", format!("{m} at sample {k}"), format!("{}", u.len())));
        }
    }
    for (k, v) in noise.iter().enumerate() {
        if v.len() != p {
            return Err(shape_err("noise", format!("{p} at sample {k}"), format!("{}", v.len())));
        }
    }
    let steps = inputs.len();
    let mut states = Vec::with_capacity(steps);
    let mut outputs_clean = Vec::with_capacity(steps);
    let mut outputs_noisy = Vec::with_capacity(steps);
    let mut x = x0.clone();
    for k in 0..steps {
        let y = &sys.c * &x + &sys.d * &inputs[k];
        outputs_noisy.push(&y + &noise[k]);
        outputs_clean.push(y);
        states.push(x.clone());
        if k + 1 < steps {
            x = &sys.a * &x + &sys.b * &inputs[k];
        }
    }
    Ok(Trajectory {
        inputs: inputs.to_vec(),
        states,
        outputs_clean,
        outputs_noisy,
        noise: noise.to_vec(),
    })
}

/// Noise-free simulation.
pub fn simulate_clean(
    sys: &LtiSystem,
    x0: &DVector<f64>,
    inputs: &[DVector<f64>],
) -> Result<Trajectory, LtiError> {
    let zeros = vec![DVector::zeros(sys.output_dim()); inputs.len()];
    simulate(sys, x0, inputs, &zeros)
}

/// Largest eigenvalue magnitude.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|l| l.norm()).fold(0.0, f64::max)
}

/// rank [B, AB, ..., A^{n-1} B] = n.
pub fn check_controllability(sys: &LtiSystem) -> bool {
    let n = sys.state_dim();
    let m = sys.input_dim();
    let mut block = sys.b.clone();
    let mut ctrb = DMatrix::zeros(n, n * m);
    for i in 0..n {
        ctrb.view_mut((0, i * m), (n, m)).copy_from(&block);
        block = &sys.a * block;
    }
    numerical_rank(&ctrb) == n
}

/// rank [C; CA; ...; C A^{n-1}] = n.
pub fn check_observability(sys: &LtiSystem) -> bool {
    let n = sys.state_dim();
    let p = sys.output_dim();
    let mut block = sys.c.clone();
    let mut obsv = DMatrix::zeros(n * p, n);
    for i in 0..n {
        obsv.view_mut((i * p, 0), (p, n)).copy_from(&block);
        block *= &sys.a;
    }
    numerical_rank(&obsv) == n
}

/// PBH test: every eigenvalue of A with magnitude at least `1 - 1e-9` must
/// keep `[A - lambda I; C]` at full column rank over the complex field.
pub fn check_detectability(sys: &LtiSystem) -> bool {
    let n = sys.state_dim();
    let p = sys.output_dim();
    for lambda in sys.a.complex_eigenvalues().iter() {
        if lambda.norm() < 1.0 - 1e-9 {
            continue;
        }
        let mut pbh = DMatrix::<Complex<f64>>::zeros(n + p, n);
        for i in 0..n {
            for j in 0..n {
                pbh[(i, j)] = Complex::new(sys.a[(i, j)], 0.0);
            }
            pbh[(i, i)] -= lambda;
        }
        for i in 0..p {
            for j in 0..n {
                pbh[(n + i, j)] = Complex::new(sys.c[(i, j)], 0.0);
            }
        }
        let sv = pbh.svd(false, false).singular_values;
        let cut = sv.max() * (n + p).max(n) as f64 * 1e-12;
        if sv.iter().filter(|&&s| s > cut).count() < n {
            return false;
        }
    }
    true
}

/// Solve `M^T Q M - Q = -I` for symmetric positive definite Q.
///
/// The Kronecker identity `vec(M^T Q M) = (M^T (x) M^T) vec(Q)` turns the
/// equation into a dense linear solve of size `n^2`. The result is
/// symmetrized and accepted only if the residual stays below `1e-9` and Q is
/// positive definite.
pub fn solve_discrete_lyapunov(m: &DMatrix<f64>) -> Result<DMatrix<f64>, LtiError> {
    let n = m.nrows();
    if m.ncols() != n || n == 0 {
        return Err(LtiError::Lyapunov(format!("matrix must be square, got {}x{}", m.nrows(), m.ncols())));
    }
    let mt = m.transpose();
    let mut lhs = mt.kronecker(&mt);
    for i in 0..n * n {
        lhs[(i, i)] -= 1.0;
    }
    let rhs = DVector::from_fn(n * n, |i, _| if i % n == i / n { -1.0 } else { 0.0 });
    let q_vec = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| LtiError::Lyapunov("singular Kronecker system".into()))?;
    let q_raw = DMatrix::from_fn(n, n, |i, j| q_vec[j * n + i]);
    let q = (&q_raw + q_raw.transpose()) * 0.5;
    let residual = (&mt * &q * m - &q + DMatrix::identity(n, n)).amax();
    if residual > 1e-9 {
        return Err(LtiError::Lyapunov(format!("residual {residual:.3e} exceeds 1e-9")));
    }
    let lmin = q.clone().symmetric_eigen().eigenvalues.min();
    if lmin <= 0.0 {
        return Err(LtiError::Lyapunov(format!("solution not positive definite, min eigenvalue {lmin:.3e}")));
    }
    Ok(q)
}

/// Stabilizing solution of the estimation Riccati equation
/// `P = Q_w + A P A^T - A P C^T (C P C^T + R_v)^{-1} C P A^T`
/// by fixed-point iteration from `P = I`.
pub fn solve_dare(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q_w: &DMatrix<f64>,
    r_v: &DMatrix<f64>,
) -> Result<DMatrix<f64>, LtiError> {
    let n = a.nrows();
    let mut p = DMatrix::identity(n, n);
    for _ in 0..200_000 {
        let cpc = c * &p * c.transpose() + r_v;
        let inv = cpc
            .try_inverse()
            .ok_or_else(|| LtiError::Lyapunov("innovation covariance singular".into()))?;
        let apct = a * &p * c.transpose();
        let next = q_w + a * &p * a.transpose() - &apct * inv * apct.transpose();
        let next = (&next + next.transpose()) * 0.5;
        let delta = (&next - &p).amax();
        p = next;
        if delta <= 1e-13 * (1.0 + p.amax()) {
            return Ok(p);
        }
    }
    Err(LtiError::RiccatiDiverged)
}

/// Observer gain K with `A - KC` Schur stable, plus the Lyapunov certificate
/// Q solving `(A-KC)^T Q (A-KC) - Q = -I`.
#[derive(Debug, Clone)]
pub struct ObserverDesign {
    pub gain: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

impl ObserverDesign {
    /// Wrap an explicit gain, verifying stability and solving for Q.
    pub fn from_gain(sys: &LtiSystem, gain: DMatrix<f64>) -> Result<Self, LtiError> {
        let (n, p) = (sys.state_dim(), sys.output_dim());
        if gain.nrows() != n || gain.ncols() != p {
            return Err(shape_err("gain", format!("{n}x{p}"), format!("{}x{}", gain.nrows(), gain.ncols())));
        }
        let closed = &sys.a - &gain * &sys.c;
        let radius = spectral_radius(&closed);
        if radius >= 1.0 {
            return Err(LtiError::UnstableObserver(radius));
        }
        let q = solve_discrete_lyapunov(&closed)?;
        Ok(ObserverDesign { gain, q })
    }
}

type RealTargets = Vec<(f64, usize)>;
type PairTargets = Vec<((f64, f64), usize)>;

/// Group eigenvalue targets into reals and upper-half-plane conjugate pairs,
/// each with multiplicity. Values matching within `1e-9` are merged.
fn group_targets(targets: &[Complex<f64>]) -> (RealTargets, PairTargets) {
    let mut reals: RealTargets = Vec::new();
    let mut pairs: PairTargets = Vec::new();
    for t in targets {
        if t.im.abs() <= 1e-12 {
            match reals.iter_mut().find(|(v, _)| (v - t.re).abs() <= 1e-9) {
                Some(entry) => entry.1 += 1,
                None => reals.push((t.re, 1)),
            }
        } else if t.im > 0.0 {
            match pairs
                .iter_mut()
                .find(|((a, b), _)| (a - t.re).abs() <= 1e-9 && (b - t.im).abs() <= 1e-9)
            {
                Some(entry) => entry.1 += 1,
                None => pairs.push(((t.re, t.im), 1)),
            }
        }
    }
    (reals, pairs)
}

/// Real matrix with the given spectrum: Jordan-type chains keep repeated
/// targets assignable through a rank-deficient injection.
fn real_spectrum_matrix(targets: &[Complex<f64>], n: usize) -> DMatrix<f64> {
    let (reals, pairs) = group_targets(targets);
    let mut f = DMatrix::zeros(n, n);
    let mut at = 0;
    for (v, mult) in reals {
        for i in 0..mult {
            f[(at + i, at + i)] = v;
            if i + 1 < mult {
                f[(at + i, at + i + 1)] = 1.0;
            }
        }
        at += mult;
    }
    for ((re, im), mult) in pairs {
        for i in 0..mult {
            let r = at + 2 * i;
            f[(r, r)] = re;
            f[(r, r + 1)] = im;
            f[(r + 1, r)] = -im;
            f[(r + 1, r + 1)] = re;
            if i + 1 < mult {
                f[(r, r + 2)] = 1.0;
                f[(r + 1, r + 3)] = 1.0;
            }
        }
        at += 2 * mult;
    }
    debug_assert_eq!(at, n);
    f
}

/// Solve `X A - F X = G C` for X via the Kronecker form
/// `(A^T (x) I - I (x) F) vec(X) = vec(G C)`.
fn solve_sylvester_observer(
    a: &DMatrix<f64>,
    f: &DMatrix<f64>,
    gc: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let lhs = a.transpose().kronecker(&eye) - eye.kronecker(f);
    let rhs = DVector::from_fn(n * n, |i, _| gc[(i % n, i / n)]);
    let x_vec = lhs.lu().solve(&rhs)?;
    Some(DMatrix::from_fn(n, n, |i, j| x_vec[j * n + i]))
}

/// Gain placing the spectrum of `A - KC` at `targets`, or None if the
/// similarity transform comes out ill-conditioned for every injection tried.
fn try_place(sys: &LtiSystem, targets: &[Complex<f64>]) -> Option<DMatrix<f64>> {
    let n = sys.state_dim();
    let p = sys.output_dim();
    // Shared eigenvalues make the Sylvester operator singular.
    let eigs = sys.a.complex_eigenvalues();
    for t in targets {
        if eigs.iter().any(|l| (t - l).norm() < 1e-8) {
            return None;
        }
    }
    let f = real_spectrum_matrix(targets, n);
    let radius_target = targets.iter().map(|t| t.norm()).fold(0.0, f64::max);
    for attempt in 0..3 {
        let g = DMatrix::from_fn(n, p, |i, j| 1.0 + 0.31 * ((i * p + j + attempt) % 7) as f64);
        let gc = &g * &sys.c;
        let Some(x) = solve_sylvester_observer(&sys.a, &f, &gc) else {
            continue;
        };
        let sv = x.singular_values();
        if sv.min() <= sv.max() * n as f64 * 1e-10 {
            continue;
        }
        let Some(k) = x.clone().lu().solve(&g) else {
            continue;
        };
        let achieved = spectral_radius(&(&sys.a - &k * &sys.c));
        if achieved < 1.0 && achieved <= radius_target + 1e-6 {
            return Some(k);
        }
    }
    None
}

/// Design an observer gain for a detectable pair (A, C).
///
/// Strategy order: place at half the (unit-disk-clipped) eigenvalues of A,
/// then at a single chain of 0.5 or 0.45, then fall back to the steady-state
/// Riccati gain with unit covariances. The first gain that both stabilizes
/// and admits a Lyapunov certificate wins.
pub fn design_observer(sys: &LtiSystem) -> Result<ObserverDesign, LtiError> {
    if !check_detectability(sys) {
        return Err(LtiError::NotDetectable);
    }
    let n = sys.state_dim();
    let halved: Vec<Complex<f64>> = sys
        .a
        .complex_eigenvalues()
        .iter()
        .map(|l| {
            let clipped = if l.norm() >= 1.0 { l * (0.999 / l.norm()) } else { *l };
            clipped * 0.5
        })
        .collect();
    let chain_05 = vec![Complex::new(0.5, 0.0); n];
    let chain_045 = vec![Complex::new(0.45, 0.0); n];

    let mut candidates: Vec<DMatrix<f64>> = Vec::new();
    for targets in [&halved, &chain_05, &chain_045] {
        if let Some(k) = try_place(sys, targets) {
            candidates.push(k);
        }
    }
    let q_w = DMatrix::identity(n, n);
    let r_v = DMatrix::identity(sys.output_dim(), sys.output_dim());
    if let Ok(p) = solve_dare(&sys.a, &sys.c, &q_w, &r_v) {
        let cpc = &sys.c * &p * sys.c.transpose() + &r_v;
        if let Some(inv) = cpc.try_inverse() {
            candidates.push(&sys.a * &p * sys.c.transpose() * inv);
        }
    }
    for gain in candidates {
        if let Ok(design) = ObserverDesign::from_gain(sys, gain) {
            return Ok(design);
        }
    }
    Err(LtiError::ObserverDesign("no candidate gain admitted a Lyapunov certificate".into()))
}

/// Constants of the exponential output-stability bound
///
/// ```text
/// |x1(t) - x2(t)| <= max( c_beta * lambda_beta^t * |x1(0) - x2(0)|,
///                         max_{k < t} c_gamma_d * lambda_beta^{t-1-k} * |y1(k) - y2(k)| )
/// ```
///
/// valid for any two trajectories sharing the same input.
#[derive(Debug, Clone, Copy)]
pub struct EuossConstants {
    pub c_beta: f64,
    pub lambda_beta: f64,
    pub c_gamma_d: f64,
}

/// Derive output-stability constants from an observer certificate.
///
/// With `M = A - KC` and Q solving `M^T Q M - Q = -I`, the error
/// `e = x1 - x2` obeys `e(k+1) = M e(k) + K dy(k)`, so `V = |e|_Q` satisfies
///
/// ```text
/// V(k+1) <= r V(k) + sqrt(lmax(Q)) |K| |dy(k)|,   r = sqrt(1 - 1/lmax(Q))
/// ```
///
/// Splitting `x + y <= max(x/(1-w), y/w)` with `w = 1 - sqrt(r)` turns the
/// sum recursion into a pure max recursion at the reported rate
/// `lambda_beta = sqrt(r)`, which is what makes the max-form bound above
/// sound at every step. The rate is floored at `1e-6` and capped below 1.
pub fn euoss_from_observer(design: &ObserverDesign) -> EuossConstants {
    let eig = design.q.clone().symmetric_eigen();
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    let c_beta = (lmax / lmin).sqrt();
    let r = (1.0 - 1.0 / lmax).max(0.0).sqrt();
    let lambda_beta = r.sqrt().clamp(1e-6, 1.0 - 1e-9);
    let c_gamma_d = c_beta * spectral_norm(&design.gain) / (1.0 - lambda_beta);
    EuossConstants { c_beta, lambda_beta, c_gamma_d }
}

/// Output-stability constants via a freshly designed observer.
pub fn compute_euoss_constants(sys: &LtiSystem) -> Result<EuossConstants, LtiError> {
    Ok(euoss_from_observer(&design_observer(sys)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SampleStream;
    use approx::assert_relative_eq;

    fn scalar_system(a: f64) -> LtiSystem {
        LtiSystem::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
        )
        .unwrap()
    }

    fn random_stable_system(stream: &mut SampleStream, n: usize) -> LtiSystem {
        loop {
            let a = DMatrix::from_fn(n, n, |_, _| stream.uniform(-1.0, 1.0));
            let radius = spectral_radius(&a);
            let a = if radius > 0.9 { a * (0.9 / radius) } else { a };
            let b = DMatrix::from_fn(n, 1, |_, _| stream.uniform(-1.0, 1.0));
            let c = DMatrix::from_fn(1, n, |_, _| stream.uniform(-1.0, 1.0));
            let sys = LtiSystem::new(a, b, c, DMatrix::zeros(1, 1)).unwrap();
            if check_observability(&sys) && check_controllability(&sys) {
                return sys;
            }
        }
    }

    #[test]
    fn benchmark_first_step_matches_hand_computation() {
        let sys = benchmark_system();
        let x0 = DVector::from_vec(vec![7.0, 7.0]);
        let inputs = vec![DVector::zeros(1); 2];
        let traj = simulate_clean(&sys, &x0, &inputs).unwrap();
        assert_relative_eq!(traj.outputs_clean[0][0], 7.0, epsilon = 1e-12);
        assert_relative_eq!(traj.states[1][0], 7.6636, epsilon = 1e-12);
        assert_relative_eq!(traj.states[1][1], 6.2664, epsilon = 1e-12);
    }

    #[test]
    fn noise_enters_output_only() {
        let sys = benchmark_system();
        let x0 = DVector::from_vec(vec![1.0, -1.0]);
        let inputs = vec![DVector::from_element(1, 0.3); 5];
        let noise: Vec<_> = (0..5).map(|k| DVector::from_element(1, k as f64)).collect();
        let noisy = simulate(&sys, &x0, &inputs, &noise).unwrap();
        let clean = simulate_clean(&sys, &x0, &inputs).unwrap();
        for k in 0..5 {
            assert_eq!(noisy.states[k], clean.states[k]);
            assert_relative_eq!(
                noisy.outputs_noisy[k][0],
                clean.outputs_clean[k][0] + k as f64,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn benchmark_is_controllable_and_observable() {
        let sys = benchmark_system();
        assert!(check_controllability(&sys));
        assert!(check_observability(&sys));
        assert!(check_detectability(&sys));
    }

    #[test]
    fn hidden_stable_mode_is_detectable_but_not_observable() {
        // Unstable mode measured, stable mode hidden.
        let sys = LtiSystem::new(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]),
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        assert!(check_detectability(&sys));
        assert!(!check_observability(&sys));
    }

    #[test]
    fn hidden_unstable_mode_is_not_detectable() {
        let sys = LtiSystem::new(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]),
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        assert!(!check_detectability(&sys));
    }

    #[test]
    fn uncontrollable_pair_is_rejected() {
        let sys = LtiSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        assert!(!check_controllability(&sys));
    }

    #[test]
    fn lyapunov_scalar_solution() {
        // 0.25 q - q = -1 has q = 4/3.
        let q = solve_discrete_lyapunov(&DMatrix::from_element(1, 1, 0.5)).unwrap();
        assert_relative_eq!(q[(0, 0)], 4.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn lyapunov_rejects_unstable_matrix() {
        assert!(solve_discrete_lyapunov(&DMatrix::from_element(1, 1, 1.0)).is_err());
    }

    #[test]
    fn lyapunov_residual_on_random_stable_matrix() {
        let mut stream = SampleStream::new(11);
        for _ in 0..10 {
            let raw = DMatrix::from_fn(4, 4, |_, _| stream.uniform(-1.0, 1.0));
            let m = raw.clone() * (0.85 / spectral_radius(&raw).max(1e-6));
            let q = solve_discrete_lyapunov(&m).unwrap();
            let residual = (m.transpose() * &q * &m - &q + DMatrix::identity(4, 4)).amax();
            assert!(residual <= 1e-9, "residual {residual:.3e}");
            assert!(q.clone().symmetric_eigen().eigenvalues.min() > 0.0);
        }
    }

    #[test]
    fn deadbeat_gain_constants() {
        // A = 0.5, K = 0.5 makes A - KC = 0, so Q = I and the rate floors.
        let design = ObserverDesign::from_gain(&scalar_system(0.5), DMatrix::from_element(1, 1, 0.5)).unwrap();
        assert_relative_eq!(design.q[(0, 0)], 1.0, epsilon = 1e-12);
        let c = euoss_from_observer(&design);
        assert_relative_eq!(c.c_beta, 1.0, epsilon = 1e-12);
        assert_relative_eq!(c.lambda_beta, 1e-6, epsilon = 1e-15);
        assert_relative_eq!(c.c_gamma_d, 0.5 / (1.0 - 1e-6), epsilon = 1e-12);
    }

    #[test]
    fn matched_gain_constants() {
        // A = 0.9, K = 0.9: closed loop is zero, gain norm 0.9.
        let design = ObserverDesign::from_gain(&scalar_system(0.9), DMatrix::from_element(1, 1, 0.9)).unwrap();
        let c = euoss_from_observer(&design);
        assert_relative_eq!(c.c_beta, 1.0, epsilon = 1e-12);
        assert_relative_eq!(c.c_gamma_d, 0.9 / (1.0 - 1e-6), epsilon = 1e-12);
    }

    #[test]
    fn integrator_gain_certificate() {
        // A = 1, K = 0.9: closed loop 0.1, Q = 1/0.99.
        let design = ObserverDesign::from_gain(&scalar_system(1.0), DMatrix::from_element(1, 1, 0.9)).unwrap();
        assert_relative_eq!(design.q[(0, 0)], 1.0 / 0.99, epsilon = 1e-12);
        let c = euoss_from_observer(&design);
        assert_relative_eq!(c.lambda_beta, 0.1_f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn from_gain_rejects_destabilizing_gain() {
        let err = ObserverDesign::from_gain(&scalar_system(1.5), DMatrix::from_element(1, 1, 0.1));
        assert!(matches!(err, Err(LtiError::UnstableObserver(_))));
    }

    #[test]
    fn designed_observer_halves_benchmark_spectrum() {
        let sys = benchmark_system();
        let design = design_observer(&sys).unwrap();
        let closed = &sys.a - &design.gain * &sys.c;
        // Eigenvalues of A sit just inside the unit circle, so the halved
        // targets sit at radius just below 0.5.
        assert_relative_eq!(spectral_radius(&closed), 0.49999625, epsilon = 1e-6);
        let c = euoss_from_observer(&design);
        assert!(c.c_beta >= 1.0 && c.c_beta.is_finite());
        assert!(c.lambda_beta > 0.0 && c.lambda_beta < 1.0);
        assert!(c.c_gamma_d > 0.0 && c.c_gamma_d.is_finite());
    }

    #[test]
    fn design_observer_rejects_undetectable_pair() {
        let sys = LtiSystem::new(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]),
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        assert!(matches!(design_observer(&sys), Err(LtiError::NotDetectable)));
    }

    #[test]
    fn design_observer_handles_repeated_eigenvalues() {
        // Double eigenvalue at 0.8 with a single output forces the Jordan
        // chain path.
        let sys = LtiSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.8, 1.0, 0.0, 0.8]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let design = design_observer(&sys).unwrap();
        assert!(spectral_radius(&(&sys.a - &design.gain * &sys.c)) < 1.0);
    }

    #[test]
    fn design_observer_handles_unstable_systems() {
        let mut stream = SampleStream::new(21);
        for _ in 0..10 {
            let raw = DMatrix::from_fn(3, 3, |_, _| stream.uniform(-1.0, 1.0));
            let a = raw.clone() * (1.3 / spectral_radius(&raw).max(1e-6));
            let c = DMatrix::from_fn(1, 3, |_, _| stream.uniform(-1.0, 1.0));
            let sys = LtiSystem::new(
                a,
                DMatrix::from_fn(3, 1, |_, _| stream.uniform(-1.0, 1.0)),
                c,
                DMatrix::zeros(1, 1),
            )
            .unwrap();
            if !check_detectability(&sys) {
                continue;
            }
            let design = design_observer(&sys).unwrap();
            assert!(spectral_radius(&(&sys.a - &design.gain * &sys.c)) < 1.0);
        }
    }

    /// Worst observed ratio |x1(t)-x2(t)| / bound(t) over sampled trajectory
    /// pairs of the same system under a shared input.
    fn worst_envelope_ratio(sys: &LtiSystem, c: &EuossConstants, seed: u64) -> f64 {
        let mut stream = SampleStream::new(seed);
        let n = sys.state_dim();
        let mut worst = 0.0_f64;
        for _ in 0..60 {
            let x1 = DVector::from_fn(n, |_, _| stream.uniform(-3.0, 3.0));
            let x2 = DVector::from_fn(n, |_, _| stream.uniform(-3.0, 3.0));
            let inputs: Vec<_> = (0..40)
                .map(|_| DVector::from_fn(sys.input_dim(), |_, _| stream.uniform(-2.0, 2.0)))
                .collect();
            let t1 = simulate_clean(sys, &x1, &inputs).unwrap();
            let t2 = simulate_clean(sys, &x2, &inputs).unwrap();
            let dy: Vec<f64> = (0..40)
                .map(|k| (&t1.outputs_clean[k] - &t2.outputs_clean[k]).norm())
                .collect();
            let e0 = (&x1 - &x2).norm();
            for t in 0..40 {
                let e_t = (&t1.states[t] - &t2.states[t]).norm();
                let mut bound = c.c_beta * c.lambda_beta.powi(t as i32) * e0;
                for (k, d) in dy.iter().enumerate().take(t) {
                    bound = bound.max(c.c_gamma_d * c.lambda_beta.powi((t - 1 - k) as i32) * d);
                }
                if bound > 0.0 {
                    worst = worst.max(e_t / bound);
                } else {
                    assert!(e_t <= 1e-12);
                }
            }
        }
        worst
    }

    #[test]
    fn envelope_holds_for_slow_scalar_gain() {
        // A = 0.9 with K = 0.45: one step of open-loop growth (0.9) must fit
        // under the disturbance term, which requires the reported rate to
        // absorb the Lyapunov overshoot. The worst ratio is exactly 1 here.
        let sys = scalar_system(0.9);
        let design = ObserverDesign::from_gain(&sys, DMatrix::from_element(1, 1, 0.45)).unwrap();
        let c = euoss_from_observer(&design);
        let worst = worst_envelope_ratio(&sys, &c, 31);
        assert!(worst <= 1.0 + 1e-9, "worst ratio {worst}");
    }

    #[test]
    fn envelope_holds_for_designed_observers() {
        let mut stream = SampleStream::new(41);
        let sys_bench = benchmark_system();
        let c_bench = compute_euoss_constants(&sys_bench).unwrap();
        let worst = worst_envelope_ratio(&sys_bench, &c_bench, 43);
        assert!(worst <= 1.0 + 1e-9, "benchmark worst ratio {worst}");
        for seed in 0..8 {
            let sys = random_stable_system(&mut stream, 3);
            let c = compute_euoss_constants(&sys).unwrap();
            let worst = worst_envelope_ratio(&sys, &c, 100 + seed);
            assert!(worst <= 1.0 + 1e-9, "seed {seed} worst ratio {worst}");
        }
    }

    #[test]
    fn envelope_holds_under_adversarial_output_mismatch() {
        // The derivation treats the output difference as exogenous, so the
        // error recursion e+ = (A - KC) e + K w must stay inside the envelope
        // for arbitrary w, not just physically consistent ones.
        let sys = benchmark_system();
        let design = design_observer(&sys).unwrap();
        let c = euoss_from_observer(&design);
        let closed = &sys.a - &design.gain * &sys.c;
        let mut stream = SampleStream::new(53);
        let mut worst = 0.0_f64;
        for _ in 0..100 {
            let mut e = DVector::from_fn(2, |_, _| stream.uniform(-2.0, 2.0));
            let e0 = e.norm();
            let mut dy = Vec::new();
            for t in 0..40 {
                let mut bound = c.c_beta * c.lambda_beta.powi(t as i32) * e0;
                for (k, w) in dy.iter().enumerate() {
                    bound = bound.max(c.c_gamma_d * c.lambda_beta.powi((t - 1 - k) as i32) * w);
                }
                if bound > 0.0 {
                    worst = worst.max(e.norm() / bound);
                }
                let w = DVector::from_fn(1, |_, _| stream.uniform(-1.0, 1.0));
                dy.push(w.norm());
                e = &closed * e + &design.gain * w;
            }
        }
        assert!(worst <= 1.0 + 1e-9, "worst ratio {worst}");
    }
}
