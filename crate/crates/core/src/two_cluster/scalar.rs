//! The scalar function system behind the two-cluster regime solvers.
//!
//! Notation: ν = Nλ_Z, K = k_A + k_B. Every function takes λ_Z (not ν) so that
//! callers never mix the two scales.

use crate::error::{invalid, Error, Result};
use crate::roots::bisect;

use super::TwoClusterSpec;

/// Slack allowed when testing ν against √n_B and √n_A; the thresholds are
/// themselves computed as √n/N and rescaled by N.
const EDGE_REL: f64 = 1e-12;

fn nu(lambda_z: f64, spec: &TwoClusterSpec) -> Result<f64> {
    if !(lambda_z > 0.0 && lambda_z.is_finite()) {
        return Err(invalid(format!("lambda_Z must be positive and finite, got {lambda_z}")));
    }
    Ok(spec.total() * lambda_z)
}

fn positive_x(function: &'static str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain { function, at: x, boundary: Some(0.0), reason: "x must be positive".into() })
    }
}

/// log[(√n_B/ν − 1)(k_A x + k_B) + 1] − k_B log x, defined for ν ≤ √n_B.
pub fn g1(x: f64, lambda_z: f64, spec: &TwoClusterSpec) -> Result<f64> {
    positive_x("g1", x)?;
    let v = nu(lambda_z, spec)?;
    let s = spec.n_b.sqrt();
    if v > s * (1.0 + EDGE_REL) {
        return Err(Error::Domain {
            function: "g1",
            at: lambda_z,
            boundary: Some(s / spec.total()),
            reason: "needs N*lambda_Z <= sqrt(n_B)".into(),
        });
    }
    let coef = (s / v - 1.0).max(0.0);
    Ok((coef * (spec.k_a * x + spec.k_b)).ln_1p() - spec.k_b * x.ln())
}

/// log[(√n_A/ν − 1)(k_A + k_B x) + 1] − k_A log x, defined for ν ≤ √n_A.
pub fn g2(x: f64, lambda_z: f64, spec: &TwoClusterSpec) -> Result<f64> {
    positive_x("g2", x)?;
    let v = nu(lambda_z, spec)?;
    let s = spec.n_a.sqrt();
    if v > s * (1.0 + EDGE_REL) {
        return Err(Error::Domain {
            function: "g2",
            at: lambda_z,
            boundary: Some(s / spec.total()),
            reason: "needs N*lambda_Z <= sqrt(n_A)".into(),
        });
    }
    let coef = (s / v - 1.0).max(0.0);
    Ok((coef * (spec.k_a + spec.k_b * x)).ln_1p() - spec.k_a * x.ln())
}

fn positive_denominator(function: &'static str, t: f64, den: f64, boundary: Option<f64>) -> Result<()> {
    if den > 0.0 && den.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain { function, at: t, boundary, reason: format!("denominator {den} is not positive") })
    }
}

/// k_B / (√((k_A + n_A k_B/(n_B t²))K) − k_A), for t > 0.
pub fn x1_case_a(t: f64, spec: &TwoClusterSpec) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain {
            function: "x1_case_a",
            at: t,
            boundary: Some(0.0),
            reason: "t must be positive".into(),
        });
    }
    let (ka, kb) = (spec.k_a, spec.k_b);
    let den = ((ka + spec.n_a * kb / (spec.n_b * t * t)) * spec.k()).sqrt() - ka;
    positive_denominator("x1_case_a", t, den, None)?;
    Ok(kb / den)
}

/// k_A / (√((k_B + k_A n_B t²/n_A)K) − k_B), for t ≥ 0.
pub fn x2_fn(t: f64, spec: &TwoClusterSpec) -> Result<f64> {
    x_case_c(t, 1.0, spec)
}

/// Largest t for which [`x1_case_b`] is defined (may be +∞).
pub fn x1_case_b_limit(lambda_z: f64, spec: &TwoClusterSpec) -> Result<f64> {
    let v = nu(lambda_z, spec)?;
    let (ka, kb) = (spec.k_a, spec.k_b);
    // (k_A n_B + k_B n_A/t²)K > k_A²ν²  <=>  t² < k_B n_A / (k_A²ν²/K − k_A n_B)
    let gap = ka * ka * v * v / spec.k() - ka * spec.n_b;
    Ok(if gap <= 0.0 { f64::INFINITY } else { (kb * spec.n_a / gap).sqrt() })
}

/// k_B / (ν⁻¹√((k_A n_B + k_B n_A t⁻²)K) − k_A), for 0 < t below
/// [`x1_case_b_limit`].
pub fn x1_case_b(t: f64, lambda_z: f64, spec: &TwoClusterSpec) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain {
            function: "x1_case_b",
            at: t,
            boundary: Some(0.0),
            reason: "t must be positive".into(),
        });
    }
    let v = nu(lambda_z, spec)?;
    let (ka, kb) = (spec.k_a, spec.k_b);
    let den = ((ka * spec.n_b + kb * spec.n_a / (t * t)) * spec.k()).sqrt() / v - ka;
    positive_denominator("x1_case_b", t, den, Some(x1_case_b_limit(lambda_z, spec)?))?;
    Ok(kb / den)
}

/// k_A / (τ⁻¹√((k_B + t² k_A n_B/n_A)K) − k_B), for t ≥ 0, τ ∈ (0, 1].
pub fn x_case_c(t: f64, tau: f64, spec: &TwoClusterSpec) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::Domain {
            function: "x_case_c",
            at: t,
            boundary: Some(0.0),
            reason: "t must be nonnegative".into(),
        });
    }
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(invalid(format!("tau must lie in (0, 1], got {tau}")));
    }
    let (ka, kb) = (spec.k_a, spec.k_b);
    let den = ((kb + t * t * ka * spec.n_b / spec.n_a) * spec.k()).sqrt() / tau - kb;
    positive_denominator("x_case_c", t, den, None)?;
    Ok(ka / den)
}

/// (λ_Z τ/λ_b)(n_A − n_B t)/√((k_B n_A + k_A n_B t²)K); zero when λ_b = +∞.
pub fn m_of_t(t: f64, lambda_z: f64, lambda_b: f64, spec: &TwoClusterSpec, tau: f64) -> f64 {
    if lambda_b.is_infinite() {
        return 0.0;
    }
    let root = ((spec.k_b * spec.n_a + spec.k_a * spec.n_b * t * t) * spec.k()).sqrt();
    lambda_z * tau / lambda_b * (spec.n_a - spec.n_b * t) / root
}

/// g₂(x₂(t)) − K k_A m(t); strictly increasing in t.
pub fn f2_fn(t: f64, lambda_z: f64, lambda_b: f64, spec: &TwoClusterSpec) -> Result<f64> {
    h_fn(t, 1.0, lambda_z, lambda_b, spec)
}

/// The case (c) residual h(t, τ); equals [`f2_fn`] at τ = 1.
pub fn h_fn(t: f64, tau: f64, lambda_z: f64, lambda_b: f64, spec: &TwoClusterSpec) -> Result<f64> {
    let x = x_case_c(t, tau, spec)?;
    Ok(g2(x, lambda_z, spec)? - spec.k() * spec.k_a * m_of_t(t, lambda_z, lambda_b, spec, tau))
}

/// η = f₂(0).
pub fn eta(lambda_z: f64, lambda_b: f64, spec: &TwoClusterSpec) -> Result<f64> {
    f2_fn(0.0, lambda_z, lambda_b, spec)
}

/// Root of f₂ on [0, n_A/n_B] when η < 0, else 0.
pub fn t_star(lambda_z: f64, lambda_b: f64, spec: &TwoClusterSpec) -> Result<f64> {
    if eta(lambda_z, lambda_b, spec)? >= 0.0 {
        return Ok(0.0);
    }
    let hi = spec.n_a / spec.n_b;
    let f = |t: f64| f2_fn(t, lambda_z, lambda_b, spec).unwrap_or(f64::NAN);
    bisect("t_star", 0.0, hi, f)
}

/// ξ = k_B e^{−K m(t*)} − (ν⁻¹√((k_B n_A/t*² + k_A n_B)K) − k_A), defined for
/// √n_B ≤ ν ≤ √n_A. Returns −∞ when t* = 0.
pub fn xi(lambda_z: f64, lambda_b: f64, spec: &TwoClusterSpec) -> Result<f64> {
    let v = nu(lambda_z, spec)?;
    let (lo, hi) = (spec.n_b.sqrt(), spec.n_a.sqrt());
    if v < lo * (1.0 - EDGE_REL) || v > hi * (1.0 + EDGE_REL) {
        let boundary = if v < lo { lo } else { hi } / spec.total();
        return Err(Error::Domain {
            function: "xi",
            at: lambda_z,
            boundary: Some(boundary),
            reason: "needs sqrt(n_B) <= N*lambda_Z <= sqrt(n_A)".into(),
        });
    }
    let ts = t_star(lambda_z, lambda_b, spec)?;
    if ts == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let (ka, kb) = (spec.k_a, spec.k_b);
    let m = m_of_t(ts, lambda_z, lambda_b, spec, 1.0);
    let middle = ((kb * spec.n_a / (ts * ts) + ka * spec.n_b) * spec.k()).sqrt() / v - ka;
    Ok(kb * (-spec.k() * m).exp() - middle)
}

/// ξ(λ_Z, +∞) = K − ν⁻¹√((k_B n_A/t*² + k_A n_B)K).
pub fn xi_bias_free(lambda_z: f64, spec: &TwoClusterSpec) -> Result<f64> {
    xi(lambda_z, f64::INFINITY, spec)
}
