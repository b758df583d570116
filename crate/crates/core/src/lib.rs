//! Global minimizers of the convexified unconstrained-feature model with
//! cross-entropy loss and imbalanced classes.
//!
//! Two independent routes produce the class-mean prediction matrix Z̄:
//! a generic proximal-gradient solver ([`solver`]) and closed-form regime
//! solvers for two clusters of classes ([`two_cluster`]). [`model`] holds the
//! objective and optimality residuals used to certify either; [`thresholds`]
//! and [`diagnostics`] derive collapse boundaries and geometry metrics.

// `!(x > 0.0)` is the house style for argument checks: it rejects NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod io;
pub mod linalg;
pub mod model;
pub mod policy;
mod roots;
pub mod solver;
pub mod thresholds;
pub mod two_cluster;
pub mod validate;

pub use error::{Error, Result};
pub use model::{FullPrediction, MeanPrediction, ProblemSpec, RegParams};
pub use policy::NumericPolicy;
pub use solver::{Solution, SolverOptions};
pub use two_cluster::{BlockParams, Regime, TwoClusterSpec};
