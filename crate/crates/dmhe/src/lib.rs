//! Data-driven moving horizon state estimation for discrete-time LTI
//! systems.
//!
//! Instead of a model, the estimator carries one noise-free input/state/output
//! trajectory whose input is persistently exciting. Block-Hankel matrices of
//! that trajectory span every system trajectory, so each estimation window is
//! found by a least-squares fit in the span, solved as a dense QP.
//!
//! Modules:
//! - [`rng`]: seeded, platform-independent sample streams
//! - [`lti`]: state-space models, observer design, output-stability constants
//! - [`hankel`]: trajectory matrices, excitation certificates, span fits
//! - [`qp`]: dense convex QP with equality and box constraints
//! - [`estimator`]: the recursive window estimator
//! - [`analysis`]: robust stability constants and run diagnostics

pub mod analysis;
pub mod estimator;
pub mod hankel;
pub mod lti;
pub(crate) mod numeric;
pub mod qp;
pub mod rng;

pub use numeric::numerical_rank;
