//! Bracketed bisection. Brackets in this crate come from monotonicity
//! arguments, so bisection cannot fail once a sign change is established.

use crate::error::{Error, Result};

/// Root of `f` on `[lo, hi]` given opposite signs at the ends. Runs until the
/// bracket cannot shrink in floating point, which is tighter than any
/// relative tolerance above machine epsilon. Midpoints are geometric when the
/// bracket spans more than a factor of 4 on the positive axis.
pub(crate) fn bisect(context: &'static str, mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> Result<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.is_nan() || fhi.is_nan() || (flo > 0.0) == (fhi > 0.0) {
        return Err(Error::Bracket { context, lo, hi, f_lo: flo, f_hi: fhi });
    }
    for _ in 0..400 {
        let mid = if lo > 0.0 && hi > 4.0 * lo { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.is_nan() {
            return Err(Error::Numeric(format!("{context}: NaN at {mid}")));
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Expands `start` by `factor` until `pred` holds; gives up after 2000 steps.
pub(crate) fn expand_until(context: &'static str, start: f64, factor: f64, pred: impl Fn(f64) -> bool) -> Result<f64> {
    let mut x = start;
    for _ in 0..2000 {
        if pred(x) {
            return Ok(x);
        }
        x *= factor;
        if x == 0.0 || !x.is_finite() {
            break;
        }
    }
    Err(Error::Numeric(format!("{context}: no bracket found from {start}")))
}
