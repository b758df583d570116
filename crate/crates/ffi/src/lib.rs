//! C ABI over `ncollapse`.
//!
//! Every entry point returns an [`NcStatus`]. On failure the message is kept
//! in a thread-local slot readable through [`nc_last_error_message`]. Handles
//! are opaque; each `*_new`/`nc_solve_*` result must be released with the
//! matching `*_free`. Matrices cross the boundary column-major.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ncollapse::thresholds;
use ncollapse::two_cluster::{classify_and_solve, TwoClusterSpec};
use ncollapse::{Error, ProblemSpec, RegParams, Regime, Solution, SolverOptions};

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Domain = 4,
    Regime = 5,
    Numeric = 6,
    TooLarge = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NcRegime {
    Interior = 0,
    MinorityCollapsed = 1,
    MajorityOnly = 2,
    Zero = 3,
}

impl From<Regime> for NcRegime {
    fn from(r: Regime) -> Self {
        match r {
            Regime::Interior => NcRegime::Interior,
            Regime::MinorityCollapsed => NcRegime::MinorityCollapsed,
            Regime::MajorityOnly => NcRegime::MajorityOnly,
            Regime::Zero => NcRegime::Zero,
        }
    }
}

/// Block parameters of the two-cluster solution. `xi` is NaN unless ν lies
/// strictly between √n_B and √n_A.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NcBlockParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub m: f64,
    pub xi: f64,
    pub regime: NcRegime,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NcRatioThreshold {
    pub ratio: f64,
    pub raw: f64,
    pub clamped: bool,
}

/// Class sizes, sorted internally in decreasing order.
pub struct NcProblem(ProblemSpec);

/// Output of the numeric solver.
pub struct NcSolution(Solution);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> NcStatus {
    match e {
        Error::InvalidArgument(_) | Error::DegenerateColumns(_) => NcStatus::InvalidArgument,
        Error::DimensionMismatch { .. } => NcStatus::DimensionMismatch,
        Error::Domain { .. } => NcStatus::Domain,
        Error::Regime(_) => NcStatus::Regime,
        Error::Numeric(_) | Error::Bracket { .. } => NcStatus::Numeric,
        Error::TooLarge { .. } => NcStatus::TooLarge,
    }
}

/// Runs `f`, recording the error text and mapping panics to [`NcStatus::Panic`].
fn guard(f: impl FnOnce() -> Result<(), (NcStatus, String)>) -> NcStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NcStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            NcStatus::Panic
        }
    }
}

fn lib<T>(r: ncollapse::Result<T>) -> Result<T, (NcStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), (NcStatus, String)> {
    if p.is_null() {
        Err((NcStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

fn reg(lambda_z: f64, lambda_b: f64) -> Result<RegParams, (NcStatus, String)> {
    lib(RegParams::new(lambda_z, lambda_b))
}

fn two_cluster(k_a: usize, k_b: usize, n_a: usize, n_b: usize) -> Result<TwoClusterSpec, (NcStatus, String)> {
    lib(TwoClusterSpec::new(k_a, k_b, n_a, n_b))
}

/// Copies the message of the last failure on this thread into `buf`,
/// NUL-terminated, and returns the full message length excluding the NUL.
/// Returns 0 when there is no message. Pass a null `buf` to query the length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn nc_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let slot = slot.borrow();
        let Some(msg) = slot.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Static, NUL-terminated library version.
#[no_mangle]
pub extern "C" fn nc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a problem from `len` class sizes.
///
/// # Safety
/// `sizes` must point to `len` readable values and `out` to a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn nc_problem_new(sizes: *const usize, len: usize, out: *mut *mut NcProblem) -> NcStatus {
    guard(|| {
        non_null(sizes, "sizes")?;
        non_null(out, "out")?;
        let spec = lib(ProblemSpec::new(std::slice::from_raw_parts(sizes, len)))?;
        *out = Box::into_raw(Box::new(NcProblem(spec)));
        Ok(())
    })
}

/// # Safety
/// `problem` must be null or a handle from [`nc_problem_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nc_problem_free(problem: *mut NcProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Number of classes, 0 for a null handle.
///
/// # Safety
/// `problem` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nc_problem_num_classes(problem: *const NcProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.0.num_classes())
}

/// Solves the reduced problem with default solver options. Pass
/// `lambda_b = INFINITY` for the bias-free model.
///
/// # Safety
/// `problem` must be a live handle and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn nc_solve_reduced(
    problem: *const NcProblem,
    lambda_z: f64,
    lambda_b: f64,
    out: *mut *mut NcSolution,
) -> NcStatus {
    guard(|| {
        non_null(problem, "problem")?;
        non_null(out, "out")?;
        let reg = reg(lambda_z, lambda_b)?;
        let sol = lib(ncollapse::solver::solve_reduced(&(*problem).0, &reg, &SolverOptions::default()))?;
        *out = Box::into_raw(Box::new(NcSolution(sol)));
        Ok(())
    })
}

/// # Safety
/// `solution` must be null or a handle from [`nc_solve_reduced`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nc_solution_free(solution: *mut NcSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// Objective value, NaN for a null handle.
///
/// # Safety
/// `solution` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nc_solution_objective(solution: *const NcSolution) -> f64 {
    solution.as_ref().map_or(f64::NAN, |s| s.0.objective)
}

/// # Safety
/// `solution` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nc_solution_stationarity(solution: *const NcSolution) -> f64 {
    solution.as_ref().map_or(f64::NAN, |s| s.0.kkt.stationarity)
}

/// # Safety
/// `solution` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nc_solution_feasibility_margin(solution: *const NcSolution) -> f64 {
    solution.as_ref().map_or(f64::NAN, |s| s.0.kkt.feasibility_margin)
}

/// # Safety
/// `solution` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nc_solution_iterations(solution: *const NcSolution) -> usize {
    solution.as_ref().map_or(0, |s| s.0.iterations)
}

/// # Safety
/// `solution` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nc_solution_converged(solution: *const NcSolution) -> bool {
    solution.as_ref().is_some_and(|s| s.0.converged)
}

/// Number of classes K of the solution.
///
/// # Safety
/// `solution` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nc_solution_num_classes(solution: *const NcSolution) -> usize {
    solution.as_ref().map_or(0, |s| s.0.mean_prediction.bias.len())
}

/// Copies Z̄ (K×K, column-major, classes in sorted order) into `buf`.
///
/// # Safety
/// `solution` must be a live handle and `buf` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn nc_solution_zbar(solution: *const NcSolution, buf: *mut f64, len: usize) -> NcStatus {
    guard(|| {
        non_null(solution, "solution")?;
        non_null(buf, "buf")?;
        copy_out((*solution).0.mean_prediction.zbar.as_slice(), buf, len)
    })
}

/// Copies the bias vector (length K) into `buf`.
///
/// # Safety
/// `solution` must be a live handle and `buf` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn nc_solution_bias(solution: *const NcSolution, buf: *mut f64, len: usize) -> NcStatus {
    guard(|| {
        non_null(solution, "solution")?;
        non_null(buf, "buf")?;
        copy_out((*solution).0.mean_prediction.bias.as_slice(), buf, len)
    })
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> Result<(), (NcStatus, String)> {
    if len < src.len() {
        return Err((NcStatus::BufferTooSmall, format!("need {} values, got {len}", src.len())));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    Ok(())
}

/// Closed-form two-cluster solution with k_A classes of n_A samples and k_B
/// classes of n_B samples.
///
/// # Safety
/// `out` must point to a writable [`NcBlockParams`].
#[no_mangle]
pub unsafe extern "C" fn nc_two_cluster_solve(
    k_a: usize,
    k_b: usize,
    n_a: usize,
    n_b: usize,
    lambda_z: f64,
    lambda_b: f64,
    out: *mut NcBlockParams,
) -> NcStatus {
    guard(|| {
        non_null(out, "out")?;
        let spec = two_cluster(k_a, k_b, n_a, n_b)?;
        let c = lib(classify_and_solve(&spec, lambda_z, lambda_b))?;
        let p = c.params;
        *out = NcBlockParams {
            a: p.a,
            b: p.b,
            c: p.c,
            d: p.d,
            m: p.m,
            xi: c.xi.unwrap_or(f64::NAN),
            regime: p.regime.into(),
        };
        Ok(())
    })
}

/// λ_Z values √n_B/N and √n_A/N where minority collapse starts and where Z̄
/// becomes zero.
///
/// # Safety
/// `minority` and `complete` must point to writable values.
#[no_mangle]
pub unsafe extern "C" fn nc_collapse_lambdas(
    k_a: usize,
    k_b: usize,
    n_a: usize,
    n_b: usize,
    minority: *mut f64,
    complete: *mut f64,
) -> NcStatus {
    guard(|| {
        non_null(minority, "minority")?;
        non_null(complete, "complete")?;
        let (lo, hi) = thresholds::collapse_lambdas(&two_cluster(k_a, k_b, n_a, n_b)?);
        *minority = lo;
        *complete = hi;
        Ok(())
    })
}

/// Bias-free switch point λ* inside the collapse interval.
///
/// # Safety
/// `out` must point to a writable value.
#[no_mangle]
pub unsafe extern "C" fn nc_lambda_star(k_a: usize, k_b: usize, n_a: usize, n_b: usize, out: *mut f64) -> NcStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = lib(thresholds::lambda_star_bias_free(&two_cluster(k_a, k_b, n_a, n_b)?))?;
        Ok(())
    })
}

/// Imbalance ratio n_A/n_B from which the minority classes collapse.
///
/// # Safety
/// `out` must point to a writable [`NcRatioThreshold`].
#[no_mangle]
pub unsafe extern "C" fn nc_minority_collapse_ratio(
    lambda_z: f64,
    n_b: f64,
    k_a: usize,
    k_b: usize,
    out: *mut NcRatioThreshold,
) -> NcStatus {
    guard(|| {
        non_null(out, "out")?;
        let r = lib(thresholds::minority_collapse_ratio(lambda_z, n_b, k_a, k_b))?;
        *out = NcRatioThreshold { ratio: r.ratio, raw: r.raw, clamped: r.clamped };
        Ok(())
    })
}
