//! Periodic dichotomy transformation for θ-periodic linear-quadratic optimal control.
//!
//! The pipeline runs bottom-up:
//!
//! * [`problem`] holds the periodic coefficients `A, B, C, Q, y_d, u_d`.
//! * [`odeflow`] integrates matrix ODEs on a shared uniform grid and builds
//!   transition operators and monodromy matrices.
//! * [`riccati`] and [`lyapunov`] compute the periodic solutions `P` and `E`.
//! * [`dichotomy`] assembles the decoupling transformation from `(P, E)`.
//! * [`extremal`] reconstructs the periodic optimal extremal.
//! * [`horizon`] solves finite-horizon problems and produces turnpike diagnostics.
//! * [`report`] fits exponential rates and writes CSV / gnuplot output.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dichotomy;
pub mod error;
pub mod extremal;
pub mod horizon;
pub mod linalg;
pub mod lyapunov;
pub mod odeflow;
pub mod pipeline;
pub mod problem;
pub mod report;
pub mod riccati;

pub use error::{Error, Result};
pub use odeflow::{Grid, MatrixPath, TransitionOperator};
pub use pipeline::{PeriodicAnalysis, PipelineOptions, DEFAULT_STEPS};
pub use problem::{CoefficientSpec, PeriodicProblem};
