//! Tolerances shared by every module.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumericPolicy {
    /// Residual accepted as "optimal" by certification checks.
    pub optimality_tol: f64,
    /// Equality checks such as centering preconditions.
    pub equality_tol: f64,
    /// Singular values below `rank_rel_cutoff * sigma_max` count as zero.
    pub rank_rel_cutoff: f64,
    /// Pseudo-inverse cutoff relative to the largest singular value.
    pub pinv_rel_cutoff: f64,
    /// Width at which bisection stops, relative to the unknown's magnitude.
    pub root_tol: f64,
}

impl Default for NumericPolicy {
    fn default() -> Self {
        Self {
            optimality_tol: 1e-8,
            equality_tol: 1e-10,
            rank_rel_cutoff: 1e-6,
            pinv_rel_cutoff: 1e-10,
            root_tol: 1e-13,
        }
    }
}
