//! The four regime solvers and the dispatcher.

use crate::error::{Error, Result};
use crate::model::MeanPrediction;
use crate::roots::{bisect, expand_until};

use super::scalar::*;
use super::{build_block_matrix, objective, BlockParams, Regime, TwoClusterSpec, XI_BOUNDARY_TOL};

/// Relative slack for assigning ν exactly at √n_B or √n_A.
const TIE: f64 = 4.0 * f64::EPSILON;

fn nu(spec: &TwoClusterSpec, lambda_z: f64) -> f64 {
    spec.total() * lambda_z
}

fn check_lambdas(lambda_z: f64, lambda_b: f64) -> Result<()> {
    if !(lambda_z > 0.0 && lambda_z.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda_Z must be positive, got {lambda_z}")));
    }
    if !(lambda_b > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda_b must be positive or +inf, got {lambda_b}")));
    }
    Ok(())
}

/// Root of `t = f1(t)/f2(t)` through `F(t) = f1(t) − t f2(t)`, which is
/// positive left of the root and negative right of it (f1 decreasing, f2
/// increasing, f2 > 0 wherever f1 ≤ 0 on the search path).
fn ratio_root(context: &'static str, start: f64, big_f: impl Fn(f64) -> f64) -> Result<f64> {
    let lo = expand_until(context, start, 0.5, |t| big_f(t) > 0.0)?;
    let hi = expand_until(context, start, 2.0, |t| big_f(t) < 0.0)?;
    bisect(context, lo, hi, big_f)
}

/// Regime (a), ν ≤ √n_B: all blocks active.
pub fn solve_case_a(spec: &TwoClusterSpec, lambda_z: f64, lambda_b: f64) -> Result<BlockParams> {
    check_lambdas(lambda_z, lambda_b)?;
    let v = nu(spec, lambda_z);
    if v > spec.n_b().sqrt() * (1.0 + TIE) {
        return Err(Error::Regime(format!("case (a) needs N*lambda_Z <= sqrt(n_B); got {v}")));
    }
    let k = spec.k();
    let kb = spec.k_b() as f64;
    let f1 = |t: f64| -> Result<f64> {
        Ok(g1(x1_case_a(t, spec)?, lambda_z, spec)? + k * kb * m_of_t(t, lambda_z, lambda_b, spec, 1.0))
    };
    let f2 = |t: f64| f2_fn(t, lambda_z, lambda_b, spec);
    let big_f = |t: f64| match (f1(t), f2(t)) {
        (Ok(a), Ok(b)) => a - t * b,
        _ => f64::NAN,
    };
    let t = ratio_root("case (a) ratio equation", 1.0, big_f)?;
    let m = m_of_t(t, lambda_z, lambda_b, spec, 1.0);
    let c = f2(t)? / k;
    let b = f1(t)? / k;
    let a = c + m * k + x2_fn(t, spec)?.ln();
    let d = b - m * k + x1_case_a(t, spec)?.ln();
    Ok(BlockParams { a, b, c, d, m, alpha: None, tau: None, t: Some(t), regime: Regime::Interior })
}

fn middle_band(spec: &TwoClusterSpec, lambda_z: f64, case: &str) -> Result<f64> {
    let v = nu(spec, lambda_z);
    if v <= spec.n_b().sqrt() * (1.0 + TIE) || v >= spec.n_a().sqrt() * (1.0 - TIE) {
        return Err(Error::Regime(format!("case ({case}) needs sqrt(n_B) < N*lambda_Z < sqrt(n_A); got {v}")));
    }
    Ok(v)
}

/// Regime (b): √n_B < ν < √n_A and ξ < 0. The minority block is rank one.
pub fn solve_case_b(spec: &TwoClusterSpec, lambda_z: f64, lambda_b: f64) -> Result<BlockParams> {
    check_lambdas(lambda_z, lambda_b)?;
    middle_band(spec, lambda_z, "b")?;
    let x = xi(lambda_z, lambda_b, spec)?;
    if x > XI_BOUNDARY_TOL {
        return Err(Error::Regime(format!("case (b) needs xi < 0; got {x}")));
    }
    case_b_unchecked(spec, lambda_z, lambda_b)
}

fn case_b_unchecked(spec: &TwoClusterSpec, lambda_z: f64, lambda_b: f64) -> Result<BlockParams> {
    let v = nu(spec, lambda_z);
    let k = spec.k();
    let (ka, kb) = (spec.k_a() as f64, spec.k_b() as f64);
    let limit = x1_case_b_limit(lambda_z, spec)?;
    let f1 = |t: f64| -> Result<f64> {
        let m = m_of_t(t, lambda_z, lambda_b, spec, 1.0);
        Ok(-kb * (x1_case_b(t, lambda_z, spec)?.ln() - k * m))
    };
    let f2 = |t: f64| f2_fn(t, lambda_z, lambda_b, spec);
    // Past the domain of x1, f1 has already dropped to −∞.
    let big_f = |t: f64| {
        if t >= limit {
            return f64::NEG_INFINITY;
        }
        match (f1(t), f2(t)) {
            (Ok(a), Ok(b)) => a - t * b,
            (Err(_), Ok(_)) => f64::NEG_INFINITY,
            _ => f64::NAN,
        }
    };
    let t = ratio_root("case (b) ratio equation", 1f64.min(0.5 * limit), big_f)?;
    let m = m_of_t(t, lambda_z, lambda_b, spec, 1.0);
    let c = f2(t)? / k;
    let b = t * c;
    let d = -ka * b / kb;
    let a = c + m * k + x2_fn(t, spec)?.ln();
    Ok(BlockParams { a, b, c, d, m, alpha: Some(1.0 / v), tau: None, t: Some(t), regime: Regime::MinorityCollapsed })
}

/// Regime (c): √n_B < ν < √n_A and ξ > 0. Only the majority block survives.
pub fn solve_case_c(spec: &TwoClusterSpec, lambda_z: f64, lambda_b: f64) -> Result<BlockParams> {
    check_lambdas(lambda_z, lambda_b)?;
    middle_band(spec, lambda_z, "c")?;
    let x = xi(lambda_z, lambda_b, spec)?;
    if x < -XI_BOUNDARY_TOL {
        return Err(Error::Regime(format!("case (c) needs xi > 0; got {x}")));
    }
    case_c_unchecked(spec, lambda_z, lambda_b)
}

fn case_c_unchecked(spec: &TwoClusterSpec, lambda_z: f64, lambda_b: f64) -> Result<BlockParams> {
    let v = nu(spec, lambda_z);
    let k = spec.k();
    let (ka, kb) = (spec.k_a() as f64, spec.k_b() as f64);
    let h = |t: f64, tau: f64| h_fn(t, tau, lambda_z, lambda_b, spec).unwrap_or(f64::NAN);

    let h_at_one = h(0.0, 1.0);
    if !(h_at_one < 0.0) {
        return Err(Error::Regime(format!("case (c) needs eta < 0; got {h_at_one}")));
    }
    // h(0, τ) decreases in τ and blows up as τ → 0.
    let tau_lo = expand_until("case (c) tau* bracket", 0.5, 0.5, |tau| h(0.0, tau) > 0.0)?;
    let tau_star = bisect("case (c) tau*", tau_lo, 1.0, |tau| h(0.0, tau))?;

    // h(·, τ) increases in t from h(0, τ) ≤ 0 for τ ≥ τ*.
    let t_of = |tau: f64| -> Result<f64> {
        if h(0.0, tau) >= 0.0 {
            return Ok(0.0);
        }
        let hi = expand_until("case (c) inner bracket", 1.0, 2.0, |t| h(t, tau) > 0.0)?;
        bisect("case (c) inner root", 0.0, hi, |t| h(t, tau))
    };
    let big_l = |tau: f64| -> f64 {
        let Ok(t) = t_of(tau) else { return f64::NAN };
        let (Ok(x), m) = (x_case_c(t, tau, spec), m_of_t(t, lambda_z, lambda_b, spec, tau)) else {
            return f64::NAN;
        };
        t - spec.n_a().sqrt() * (ka / x + kb) / (v * (ka + kb * (-k * m).exp()))
    };
    let lo = (tau_star + 1e-12).min(1.0);
    let tau = bisect("case (c) outer root in tau", lo, 1.0, big_l)?;
    let t = t_of(tau)?;
    let m = m_of_t(t, lambda_z, lambda_b, spec, tau);
    let a = x_case_c(t, tau, spec)?.ln() + m * k;
    Ok(BlockParams {
        a,
        b: 0.0,
        c: 0.0,
        d: 0.0,
        m,
        alpha: Some(1.0 / v),
        tau: Some(tau),
        t: Some(t),
        regime: Regime::MajorityOnly,
    })
}

/// Regime (d), ν ≥ √n_A: Z̄ = 0 and only the bias is fitted.
pub fn solve_case_d(spec: &TwoClusterSpec, lambda_z: f64, lambda_b: f64) -> Result<BlockParams> {
    check_lambdas(lambda_z, lambda_b)?;
    let v = nu(spec, lambda_z);
    if v < spec.n_a().sqrt() * (1.0 - TIE) {
        return Err(Error::Regime(format!("case (d) needs N*lambda_Z >= sqrt(n_A); got {v}")));
    }
    let k = spec.k();
    let (ka, kb) = (spec.k_a() as f64, spec.k_b() as f64);
    let (na, nb) = (spec.n_a(), spec.n_b());
    let w = if lambda_b.is_infinite() {
        1.0
    } else {
        let scale = spec.total() * lambda_b / k;
        bisect("case (d) bias equation", 1.0, na / nb, |w| (na - nb * w) / (kb + ka * w) - scale * w.ln())?
    };
    // Largest squared singular value of (I − P̄)D^{1/2} over the B-direction.
    let sigma = k * (kb * na + ka * nb * w * w) / (kb + ka * w).powi(2);
    if sigma > na * (1.0 + 1e-12) {
        return Err(Error::Numeric(format!("case (d) certificate fails: sigma(w) = {sigma} > n_A = {na}")));
    }
    Ok(BlockParams::zero(w.ln() / k, 1.0 / v))
}

/// ξ landed within [`XI_BOUNDARY_TOL`] of zero: both middle cases were solved
/// and the one with the lower objective kept.
#[derive(Debug, Clone, PartialEq)]
pub struct Boundary {
    pub xi: f64,
    pub objective: f64,
    pub alternative: BlockParams,
    pub alternative_objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classified {
    pub params: BlockParams,
    pub prediction: MeanPrediction,
    /// ξ when ν lies strictly between √n_B and √n_A.
    pub xi: Option<f64>,
    pub boundary: Option<Boundary>,
}

/// Picks the regime from ν against √n_B, √n_A and the sign of ξ, then solves it.
/// Ties ν = √n_B go to case (a), ν = √n_A to case (d).
pub fn classify_and_solve(spec: &TwoClusterSpec, lambda_z: f64, lambda_b: f64) -> Result<Classified> {
    check_lambdas(lambda_z, lambda_b)?;
    let v = nu(spec, lambda_z);
    let done = |params: BlockParams, xi: Option<f64>, boundary: Option<Boundary>| Classified {
        prediction: build_block_matrix(&params, spec),
        params,
        xi,
        boundary,
    };
    if v <= spec.n_b().sqrt() * (1.0 + TIE) {
        return Ok(done(solve_case_a(spec, lambda_z, lambda_b)?, None, None));
    }
    if v >= spec.n_a().sqrt() * (1.0 - TIE) {
        return Ok(done(solve_case_d(spec, lambda_z, lambda_b)?, None, None));
    }
    let x = xi(lambda_z, lambda_b, spec)?;
    if x.abs() > XI_BOUNDARY_TOL {
        let p = if x < 0.0 {
            case_b_unchecked(spec, lambda_z, lambda_b)?
        } else {
            case_c_unchecked(spec, lambda_z, lambda_b)?
        };
        return Ok(done(p, Some(x), None));
    }
    let score = |p: &BlockParams| objective(&build_block_matrix(p, spec), spec, lambda_z, lambda_b);
    match (case_b_unchecked(spec, lambda_z, lambda_b), case_c_unchecked(spec, lambda_z, lambda_b)) {
        (Ok(pb), Ok(pc)) => {
            let (ob, oc) = (score(&pb)?, score(&pc)?);
            let (keep, ok, alt, oa) = if ob <= oc { (pb, ob, pc, oc) } else { (pc, oc, pb, ob) };
            let boundary = Boundary { xi: x, objective: ok, alternative: alt, alternative_objective: oa };
            Ok(done(keep, Some(x), Some(boundary)))
        }
        (Ok(p), Err(_)) | (Err(_), Ok(p)) => Ok(done(p, Some(x), None)),
        (Err(e), Err(_)) => Err(e),
    }
}
