//! Collapse boundaries in λ_Z, the minority-collapse imbalance ratio, the
//! bias-free transition λ*, and the balanced closed form.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::roots::bisect;
use crate::two_cluster::{xi_bias_free, TwoClusterSpec};

/// (√n_B/N, √n_A/N): minority collapse starts past the first, Z̄ = 0 past the second.
pub fn collapse_lambdas(spec: &TwoClusterSpec) -> (f64, f64) {
    let n = spec.total();
    (spec.n_b().sqrt() / n, spec.n_a().sqrt() / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioThreshold {
    /// max(raw, 1).
    pub ratio: f64,
    /// (1/k_A)(1/(λ_Z√n_B) − k_B), possibly below 1 or negative.
    pub raw: f64,
    /// Set when raw < 1: minority collapse at any imbalance.
    pub clamped: bool,
}

/// Imbalance ratio n_A/n_B at and beyond which the minority classes collapse.
pub fn minority_collapse_ratio(lambda_z: f64, n_b: f64, k_a: usize, k_b: usize) -> Result<RatioThreshold> {
    if !(lambda_z > 0.0 && lambda_z.is_finite()) {
        return Err(invalid(format!("lambda_Z must be positive, got {lambda_z}")));
    }
    if !(n_b >= 1.0) {
        return Err(invalid(format!("n_B must be >= 1, got {n_b}")));
    }
    if k_a == 0 {
        return Err(invalid("k_A must be positive"));
    }
    let raw = (1.0 / (lambda_z * n_b.sqrt()) - k_b as f64) / k_a as f64;
    Ok(RatioThreshold { ratio: raw.max(1.0), raw, clamped: raw < 1.0 })
}

/// Real n_A values where Nλ_Z crosses √n_B and √n_A at fixed λ_Z, n_B:
/// n_A = (√n_B/λ_Z − k_B n_B)/k_A, and the larger root s² of
/// k_Aλ_Z s² − s + k_B n_B λ_Z = 0. The second is None when the quadratic has
/// no real root, i.e. complete collapse never happens.
pub fn collapse_n_a(lambda_z: f64, n_b: f64, k_a: usize, k_b: usize) -> Result<(f64, Option<f64>)> {
    if !(lambda_z > 0.0 && lambda_z.is_finite()) {
        return Err(invalid(format!("lambda_Z must be positive, got {lambda_z}")));
    }
    if k_a == 0 || !(n_b > 0.0) {
        return Err(invalid("need k_A >= 1 and n_B > 0"));
    }
    let (ka, kb) = (k_a as f64, k_b as f64);
    let minority = (n_b.sqrt() / lambda_z - kb * n_b) / ka;
    let disc = 1.0 - 4.0 * ka * kb * n_b * lambda_z * lambda_z;
    let complete = (disc >= 0.0).then(|| ((1.0 + disc.sqrt()) / (2.0 * ka * lambda_z)).powi(2));
    Ok((minority, complete))
}

/// The unique root λ* of ξ(·, +∞) strictly inside the collapse interval.
/// Bisection runs to floating-point resolution.
pub fn lambda_star_bias_free(spec: &TwoClusterSpec) -> Result<f64> {
    let (lo, hi) = collapse_lambdas(spec);
    let f = |l: f64| xi_bias_free(l, spec).unwrap_or(f64::NAN);
    bisect("lambda* bracket", lo, hi, f)
}

/// Coefficient a of the balanced optimum Z̄ = a(KI − J):
/// (1/K) log(√K/(√N λ_Z) − K + 1) while Nλ_Z < √(N/K), else 0.
pub fn balanced_mean_prediction(k: usize, n: usize, lambda_z: f64) -> Result<f64> {
    if k < 2 {
        return Err(invalid("need K >= 2"));
    }
    if n == 0 || !n.is_multiple_of(k) {
        return Err(invalid(format!("N = {n} must be a positive multiple of K = {k}")));
    }
    if !(lambda_z >= 0.0 && lambda_z.is_finite()) {
        return Err(invalid(format!("lambda_Z must be finite and >= 0, got {lambda_z}")));
    }
    let (kf, nf) = (k as f64, n as f64);
    if nf * lambda_z >= (nf / kf).sqrt() {
        return Ok(0.0);
    }
    if lambda_z == 0.0 {
        return Ok(f64::INFINITY);
    }
    let arg = kf.sqrt() / (nf.sqrt() * lambda_z) - kf + 1.0;
    debug_assert!(arg >= 1.0);
    Ok(arg.max(1.0).ln() / kf)
}
