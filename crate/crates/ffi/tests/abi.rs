use std::ffi::CStr;
use std::ptr;

use ncollapse_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0u8; 512];
    let n = unsafe { nc_last_error_message(buf.as_mut_ptr().cast(), buf.len()) };
    buf.truncate(n.min(511));
    String::from_utf8(buf).unwrap()
}

#[test]
fn two_cluster_matches_library() {
    let mut p = NcBlockParams { a: 0.0, b: 0.0, c: 0.0, d: 0.0, m: 0.0, xi: 0.0, regime: NcRegime::Zero };
    assert_eq!(unsafe { nc_two_cluster_solve(5, 5, 500, 100, 0.002, 0.01, &mut p) }, NcStatus::Ok);
    let spec = ncollapse::TwoClusterSpec::new(5, 5, 500, 100).unwrap();
    let c = ncollapse::two_cluster::classify_and_solve(&spec, 0.002, 0.01).unwrap();
    assert_eq!((p.a, p.b, p.c, p.d, p.m), (c.params.a, c.params.b, c.params.c, c.params.d, c.params.m));
    assert_eq!(p.regime, NcRegime::Interior);
    assert!(p.xi.is_nan());

    // Past √n_A/N everything vanishes.
    assert_eq!(unsafe { nc_two_cluster_solve(5, 5, 500, 100, 0.01, 0.01, &mut p) }, NcStatus::Ok);
    assert_eq!(p.regime, NcRegime::Zero);
}

#[test]
fn thresholds_round_trip() {
    let (mut lo, mut hi, mut star) = (0.0, 0.0, 0.0);
    unsafe {
        assert_eq!(nc_collapse_lambdas(3, 7, 500, 100, &mut lo, &mut hi), NcStatus::Ok);
        assert_eq!(nc_lambda_star(3, 7, 500, 100, &mut star), NcStatus::Ok);
    }
    assert!((lo - 10.0 / 2200.0).abs() < 1e-15);
    assert!(lo < star && star < hi);

    let mut r = NcRatioThreshold { ratio: 0.0, raw: 0.0, clamped: true };
    assert_eq!(unsafe { nc_minority_collapse_ratio(0.005, 100.0, 5, 5, &mut r) }, NcStatus::Ok);
    assert_eq!((r.ratio, r.clamped), (3.0, false));
}

#[test]
fn reduced_solve_handles() {
    let sizes = [5usize, 5, 3, 3];
    let mut prob = ptr::null_mut();
    let mut sol = ptr::null_mut();
    unsafe {
        assert_eq!(nc_problem_new(sizes.as_ptr(), sizes.len(), &mut prob), NcStatus::Ok);
        assert_eq!(nc_problem_num_classes(prob), 4);
        assert_eq!(nc_solve_reduced(prob, 0.01, 0.1, &mut sol), NcStatus::Ok);
        assert_eq!(nc_solution_num_classes(sol), 4);
        assert!(nc_solution_converged(sol));
        assert!(nc_solution_stationarity(sol) <= 1e-8);
        assert!(nc_solution_feasibility_margin(sol) >= -1e-8);
        assert!(nc_solution_iterations(sol) > 0);

        let mut small = [0.0; 15];
        assert_eq!(nc_solution_zbar(sol, small.as_mut_ptr(), small.len()), NcStatus::BufferTooSmall);
        assert!(last_error().contains("16"));
        let mut zbar = [0.0; 16];
        let mut bias = [0.0; 4];
        assert_eq!(nc_solution_zbar(sol, zbar.as_mut_ptr(), 16), NcStatus::Ok);
        assert_eq!(nc_solution_bias(sol, bias.as_mut_ptr(), 4), NcStatus::Ok);

        let spec = ncollapse::ProblemSpec::new(&sizes).unwrap();
        let reg = ncollapse::RegParams::new(0.01, 0.1).unwrap();
        let direct = ncollapse::solver::solve_reduced(&spec, &reg, &Default::default()).unwrap();
        assert_eq!(&zbar[..], direct.mean_prediction.zbar.as_slice());
        assert_eq!(nc_solution_objective(sol), direct.objective);

        nc_solution_free(sol);
        nc_problem_free(prob);
    }
}

#[test]
fn errors_are_reported() {
    let mut out = ptr::null_mut();
    let sizes = [4usize];
    unsafe {
        assert_eq!(nc_problem_new(sizes.as_ptr(), 1, &mut out), NcStatus::InvalidArgument);
        assert!(out.is_null());
        assert!(!last_error().is_empty());
        assert_eq!(nc_problem_new(ptr::null(), 2, &mut out), NcStatus::NullPointer);
        assert_eq!(last_error(), "sizes is null");

        let mut x = 0.0;
        assert_eq!(nc_collapse_lambdas(0, 7, 500, 100, &mut x, ptr::null_mut()), NcStatus::NullPointer);
        let mut p = std::mem::zeroed::<NcBlockParams>();
        assert_eq!(nc_two_cluster_solve(5, 5, 500, 100, -1.0, 0.01, &mut p), NcStatus::InvalidArgument);
        assert!(last_error().contains("lambda_Z"));

        // Success clears the slot; a null buffer queries the length.
        assert_eq!(nc_two_cluster_solve(5, 5, 500, 100, 0.002, 0.01, &mut p), NcStatus::Ok);
        assert_eq!(nc_last_error_message(ptr::null_mut(), 0), 0);

        // Null handles are tolerated by accessors and free functions.
        assert!(nc_solution_objective(ptr::null()).is_nan());
        assert_eq!(nc_problem_num_classes(ptr::null()), 0);
        nc_solution_free(ptr::null_mut());
        nc_problem_free(ptr::null_mut());
    }
}

#[test]
fn truncated_message_is_terminated() {
    let sizes = [4usize];
    let mut out = ptr::null_mut();
    unsafe {
        nc_problem_new(sizes.as_ptr(), 1, &mut out);
        let full = nc_last_error_message(ptr::null_mut(), 0);
        let mut buf = [0x7fu8; 8];
        assert_eq!(nc_last_error_message(buf.as_mut_ptr().cast(), buf.len()), full);
        assert_eq!(CStr::from_bytes_until_nul(&buf).unwrap().to_bytes().len(), 7);
    }
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(nc_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
