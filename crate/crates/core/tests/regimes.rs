//! Pointwise behaviour of the two-cluster scalar functions and regime solvers.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ncollapse::diagnostics::{etf_deviation, nc1_metric, rank_profile};
use ncollapse::solver::{factorize_scaled, landscape_certificate, Factorization};
use ncollapse::thresholds::minority_collapse_ratio;
use ncollapse::two_cluster::{classify_and_solve, eta, m_of_t, solve_case_d, t_star, x2_fn, x_case_c, xi};
use ncollapse::{ProblemSpec, RegParams, Regime, TwoClusterSpec};

fn spec() -> TwoClusterSpec {
    TwoClusterSpec::new(5, 5, 500, 100).unwrap()
}

#[test]
fn m_vanishes_at_the_size_ratio_and_without_bias() {
    let s = spec();
    assert!(m_of_t(5.0, 0.004, 0.01, &s, 1.0).abs() < 1e-15);
    for t in [0.0, 0.3, 2.0, 9.0] {
        assert_eq!(m_of_t(t, 0.004, f64::INFINITY, &s, 1.0), 0.0);
    }
    let ms: Vec<f64> = (0..20).map(|i| m_of_t(0.5 * i as f64, 0.004, 0.01, &s, 1.0)).collect();
    assert!(ms.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn x2_identities() {
    let s = spec();
    assert!((x2_fn(5f64.sqrt(), &s).unwrap() - 1.0).abs() < 1e-14);
    for t in [0.1, 1.0, 3.0] {
        assert_eq!(x_case_c(t, 1.0, &s).unwrap(), x2_fn(t, &s).unwrap());
    }
}

#[test]
fn t_star_is_zero_when_eta_is_nonnegative() {
    // Bias-free with few majority classes: η > 0 just past √n_B/N.
    let s = TwoClusterSpec::new(3, 7, 500, 100).unwrap();
    let (lo, hi) = (10.0 / 2200.0, 500f64.sqrt() / 2200.0);
    let mut signs = (false, false);
    for i in 0..=20 {
        let lz = lo + (hi - lo) * i as f64 / 20.0;
        let t = t_star(lz, f64::INFINITY, &s).unwrap();
        if eta(lz, f64::INFINITY, &s).unwrap() >= 0.0 {
            assert_eq!(t, 0.0, "lambda_Z {lz}");
            signs.0 = true;
        } else {
            assert!(t > 0.0 && t <= 5.0, "lambda_Z {lz}: {t}");
            signs.1 = true;
        }
    }
    assert_eq!(signs, (true, true));
}

#[test]
fn xi_changes_sign_across_the_collapse_interval() {
    let s = spec();
    let (lo, hi) = (10.0 / 3000.0, 500f64.sqrt() / 3000.0);
    assert!(xi(lo, 0.01, &s).unwrap() < 0.0);
    assert!(xi(hi, 0.01, &s).unwrap() > 0.0);
    assert!(xi(0.5 * lo, 0.01, &s).is_err());
}

#[test]
fn case_d_without_bias_has_w_one() {
    let s = spec();
    let p = solve_case_d(&s, 0.01, f64::INFINITY).unwrap();
    assert_eq!((p.m, p.a, p.b, p.c, p.d), (0.0, 0.0, 0.0, 0.0, 0.0));
    assert_eq!(p.regime, Regime::Zero);
    let p = solve_case_d(&s, 0.01, 0.01).unwrap();
    let w = (p.m * 10.0).exp();
    assert!((1.0..=5.0).contains(&w));
}

#[test]
fn ratio_formula_zero_before_clamping() {
    // λ_Z √n_B = 1/k_B makes the bracket vanish.
    let r = minority_collapse_ratio(1.0 / (5.0 * 10.0), 100.0, 5, 5).unwrap();
    assert!(r.raw.abs() < 1e-12);
    assert_eq!(r.ratio, 1.0);
    assert!(r.clamped);
}

#[test]
fn imbalanced_interior_is_not_an_etf() {
    let s = spec();
    let c = classify_and_solve(&s, 0.002, 0.01).unwrap();
    assert_eq!(c.params.regime, Regime::Interior);
    assert!(etf_deviation(&c.prediction.zbar).unwrap() > 1e-3);
}

#[test]
fn rank_profile_by_regime() {
    let s = spec();
    let mut seen = Vec::new();
    for lz in [0.002, 0.0034, 0.005, 0.01] {
        let c = classify_and_solve(&s, lz, 0.01).unwrap();
        let regime = c.params.regime;
        let r = rank_profile(&c.prediction, &s, 1e-6).unwrap();
        let minority = match regime {
            Regime::Interior => 5,
            Regime::MinorityCollapsed => 1,
            Regime::MajorityOnly | Regime::Zero => 0,
        };
        assert_eq!(r.minority, minority, "lambda_Z {lz}");
        assert_eq!(r.regime, Some(regime));
        if regime == Regime::Zero {
            assert_eq!(r.majority, 0);
        }
        seen.push(regime);
    }
    assert_eq!(seen, [Regime::Interior, Regime::MinorityCollapsed, Regime::MajorityOnly, Regime::Zero]);
}

#[test]
fn nc1_detects_a_single_perturbed_sample() {
    let labels = [0, 0, 1, 1, 2, 2];
    let means = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    let mut h = DMatrix::from_fn(3, 6, |i, j| means[(i, labels[j])]);
    assert!(nc1_metric(&h, &labels).unwrap() <= 1e-25);
    h[(2, 3)] += 0.1;
    assert!(nc1_metric(&h, &labels).unwrap() > 0.0);
}

#[test]
fn certificate_is_finite_for_random_factors() {
    let ps = ProblemSpec::new(&[6, 6, 3]).unwrap();
    let reg = RegParams::new(0.02, 0.1).unwrap().with_layer_weights(0.01, 0.04).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut any_negative = false;
    for _ in 0..10 {
        let f = Factorization {
            w: DMatrix::from_fn(2, 3, |_, _| rng.gen_range(-2.0..2.0)),
            hbar: DMatrix::from_fn(2, 3, |_, _| rng.gen_range(-2.0..2.0)),
        };
        let bias = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
        let c = landscape_certificate(&f, &bias, &ps, &reg).unwrap();
        assert!(c.is_finite());
        any_negative |= c < 0.0;
    }
    assert!(any_negative);

    // Past √n_1/N the zero solution certifies itself.
    let two = spec();
    let reg = RegParams::new(0.01, 0.01).unwrap().with_layer_weights(0.005, 0.02).unwrap();
    let c = classify_and_solve(&two, 0.01, 0.01).unwrap();
    let ps = two.to_problem_spec().unwrap();
    let f = factorize_scaled(&c.prediction, &ps, &reg).unwrap();
    assert!(landscape_certificate(&f, &c.prediction.bias, &ps, &reg).unwrap() >= 0.0);
}
