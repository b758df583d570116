//! Each library routine checked against an independently computed answer.

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ncollapse::diagnostics::{
    asymptotic_sweep, convergence_slope, fit_block_structure, nc1_metric, rank_profile, LambdaBRule,
};
use ncollapse::linalg;
use ncollapse::model::{kkt_residual, reduced_objective, smooth_gradient};
use ncollapse::solver::{
    factorize, factorize_scaled, landscape_certificate, singular_value_shrink, solve_full, solve_reduced,
};
use ncollapse::thresholds::{balanced_mean_prediction, collapse_lambdas, lambda_star_bias_free};
use ncollapse::two_cluster::{build_block_matrix, classify_and_solve, solve_case_a, BlockParams, Regime};
use ncollapse::{MeanPrediction, ProblemSpec, RegParams, SolverOptions, TwoClusterSpec};

fn tight() -> SolverOptions {
    SolverOptions { kkt_tol: 1e-11, ..Default::default() }
}

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| scale * (rng.gen::<f64>() * 2.0 - 1.0))
}

/// Weighted CE plus bias ridge written out with plain loops.
fn loss_by_hand(z: &DMatrix<f64>, b: &DVector<f64>, sizes: &[usize], lambda_b: f64) -> f64 {
    let k = sizes.len();
    let total: usize = sizes.iter().sum();
    let mut loss = 0.0;
    for c in 0..k {
        let logits: Vec<f64> = (0..k).map(|r| z[(r, c)] + b[r]).collect();
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + logits.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
        loss += sizes[c] as f64 * (lse - logits[c]);
    }
    loss / total as f64 + 0.5 * lambda_b * b.norm_squared()
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = 1e-5;
    for _ in 0..100 {
        let k = rng.gen_range(2..6);
        let sizes: Vec<usize> = (0..k).map(|_| rng.gen_range(1..40)).collect();
        let spec = ProblemSpec::new(&sizes).unwrap();
        let sizes = spec.class_sizes().to_vec();
        let lb = 0.05;
        let reg = RegParams::new(0.01, lb).unwrap();
        let mp = MeanPrediction {
            zbar: gaussian(&mut rng, k, k, 3.0),
            bias: gaussian(&mut rng, k, 1, 1.0).column(0).into(),
        };
        let (gz, gb) = smooth_gradient(&mp, &spec, &reg).unwrap();
        let mut fd_z = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                let mut up = mp.zbar.clone();
                let mut dn = mp.zbar.clone();
                up[(i, j)] += h;
                dn[(i, j)] -= h;
                fd_z[(i, j)] =
                    (loss_by_hand(&up, &mp.bias, &sizes, lb) - loss_by_hand(&dn, &mp.bias, &sizes, lb)) / (2.0 * h);
            }
        }
        let fd_b = DVector::from_fn(k, |i, _| {
            let mut up = mp.bias.clone();
            let mut dn = mp.bias.clone();
            up[i] += h;
            dn[i] -= h;
            (loss_by_hand(&mp.zbar, &up, &sizes, lb) - loss_by_hand(&mp.zbar, &dn, &sizes, lb)) / (2.0 * h)
        });
        let scale = gz.norm().max(gb.norm()).max(1.0);
        assert!((&gz - fd_z).norm() / scale <= 1e-6);
        assert!((&gb - fd_b).norm() / scale <= 1e-6);
    }
}

fn prox_objective(x: &DMatrix<f64>, m: &DMatrix<f64>, tau: f64) -> f64 {
    0.5 * (x - m).norm_squared() + tau * x.clone().svd(false, false).singular_values.sum()
}

#[test]
fn shrink_is_the_nuclear_prox() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let m = gaussian(&mut rng, 4, 4, 2.0);
        let tau = 0.3;
        let x = singular_value_shrink(&m, tau).unwrap();
        let best = prox_objective(&x, &m, tau);
        // Subgradient certificate through nalgebra's SVD: M − X = τ(UVᵀ + W) with
        // W orthogonal to the active part and ‖W‖ ≤ 1.
        let g = (&m - &x) / tau;
        assert!(g.clone().svd(false, false).singular_values.max() <= 1.0 + 1e-9);
        for _ in 0..200 {
            let eps = 10f64.powf(rng.gen_range(-6.0..-1.0));
            let cand = &x + gaussian(&mut rng, 4, 4, eps);
            assert!(prox_objective(&cand, &m, tau) >= best - 1e-12);
        }
    }
}

#[test]
fn shrink_diagonal_examples() {
    let m = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 0.2]));
    let s = singular_value_shrink(&m, 0.5).unwrap();
    assert_relative_eq!(s, DMatrix::from_diagonal(&DVector::from_vec(vec![2.5, 0.5, 0.0])), epsilon = 1e-14);
}

/// Projection onto the block pattern by least squares over an explicit basis.
fn block_projection_by_qr(z: &DMatrix<f64>, spec: &ProblemSpec) -> DMatrix<f64> {
    let k = spec.num_classes();
    let mut basis: Vec<DMatrix<f64>> = Vec::new();
    for ci in spec.clusters() {
        basis.push(DMatrix::from_fn(k, k, |r, c| if r == c && ci.classes.contains(&r) { 1.0 } else { 0.0 }));
        for cj in spec.clusters() {
            basis.push(DMatrix::from_fn(k, k, |r, c| {
                if ci.classes.contains(&r) && cj.classes.contains(&c) {
                    1.0
                } else {
                    0.0
                }
            }));
        }
    }
    let a = DMatrix::from_fn(k * k, basis.len(), |i, j| basis[j][i]);
    let y = DVector::from_iterator(k * k, z.iter().cloned());
    let coef = a.clone().svd(true, true).solve(&y, 1e-12).unwrap();
    let fit = a * coef;
    DMatrix::from_iterator(k, k, fit.iter().cloned())
}

#[test]
fn block_fit_is_the_orthogonal_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for sizes in [vec![5, 5, 3, 3], vec![9, 9, 9, 2, 2], vec![7, 4, 4, 4, 1], vec![6, 6]] {
        let spec = ProblemSpec::new(&sizes).unwrap();
        let k = spec.num_classes();
        let mp = MeanPrediction { zbar: gaussian(&mut rng, k, k, 1.0), bias: DVector::zeros(k) };
        let fit = fit_block_structure(&mp, &spec).unwrap();
        let proj = block_projection_by_qr(&mp.zbar, &spec);
        assert_relative_eq!(fit.reconstruct(&spec).zbar, proj, epsilon = 1e-12);
        assert_relative_eq!(fit.residual, (&mp.zbar - &proj).norm(), epsilon = 1e-12);
    }
}

#[test]
fn block_fit_reads_back_block_parameters() {
    let two = TwoClusterSpec::new(3, 4, 50, 10).unwrap();
    let p = BlockParams {
        a: 0.7,
        b: 0.4,
        c: 0.2,
        d: 0.1,
        m: 0.05,
        alpha: None,
        tau: None,
        t: None,
        regime: Regime::Interior,
    };
    let mp = build_block_matrix(&p, &two);
    let fit = fit_block_structure(&mp, &two.to_problem_spec().unwrap()).unwrap();
    let c = fit.two_cluster.unwrap();
    for (got, want) in [(c.a, p.a), (c.b, p.b), (c.c, p.c), (c.d, p.d), (c.m, p.m)] {
        assert_relative_eq!(got, want, epsilon = 1e-14);
    }
    assert!(fit.residual < 1e-14 && fit.bias_residual < 1e-14);
}

/// (1/K) Tr(Σ_W Σ_B†) with the pseudo-inverse from a symmetric eigensolve.
fn nc1_dense(h: &DMatrix<f64>, labels: &[usize], k: usize) -> f64 {
    let d = h.nrows();
    let n = h.ncols();
    let mut means = DMatrix::<f64>::zeros(d, k);
    let mut counts = vec![0.0; k];
    for (i, &y) in labels.iter().enumerate() {
        counts[y] += 1.0;
        for r in 0..d {
            means[(r, y)] += h[(r, i)];
        }
    }
    for y in 0..k {
        for r in 0..d {
            means[(r, y)] /= counts[y];
        }
    }
    let global = h.column_mean();
    let centered_w = DMatrix::from_fn(d, n, |r, i| h[(r, i)] - means[(r, labels[i])]);
    let sw = &centered_w * centered_w.transpose() / n as f64;
    let centered_b = DMatrix::from_fn(d, k, |r, y| means[(r, y)] - global[r]);
    let sb = &centered_b * centered_b.transpose() / k as f64;
    let eig = sb.symmetric_eigen();
    let top = eig.eigenvalues.amax();
    let inv = eig.eigenvalues.map(|l| if l > 1e-10 * top { 1.0 / l } else { 0.0 });
    let pinv = &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose();
    (sw * pinv).trace() / k as f64
}

#[test]
fn nc1_matches_dense_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let k = rng.gen_range(2..5);
        let d = rng.gen_range(k..8);
        let labels: Vec<usize> = (0..30).map(|i| if i < k { i } else { rng.gen_range(0..k) }).collect();
        let h = gaussian(&mut rng, d, labels.len(), 1.0);
        let got = nc1_metric(&h, &labels).unwrap();
        assert_relative_eq!(got, nc1_dense(&h, &labels, k), max_relative = 1e-9);
    }
    // Features equal to their class means.
    let h = DMatrix::from_fn(3, 6, |r, i| (r + 2 * (i % 3)) as f64);
    assert_eq!(nc1_metric(&h, &[0, 1, 2, 0, 1, 2]).unwrap(), 0.0);
}

#[test]
fn balanced_closed_form_certified() {
    for (k, n, lz) in [(10, 1000, 0.001), (4, 400, 0.002), (3, 90, 0.01), (6, 60, 0.02)] {
        let spec = ProblemSpec::new(&vec![n / k; k]).unwrap();
        let reg = RegParams::bias_free(lz).unwrap();
        let a = balanced_mean_prediction(k, n, lz).unwrap();
        let kf = k as f64;
        let zbar = a * (DMatrix::identity(k, k) * kf - DMatrix::from_element(k, k, 1.0));
        let r = kkt_residual(&MeanPrediction { zbar: zbar.clone(), bias: DVector::zeros(k) }, &spec, &reg).unwrap();
        assert!(r.stationarity <= 1e-10 && r.feasibility_margin >= -1e-12, "{r:?}");
        let num = solve_reduced(&spec, &reg, &tight()).unwrap();
        assert!((num.mean_prediction.zbar - zbar).norm() <= 1e-7 * a.max(1.0));
    }
    // Frozen after the certification above.
    assert_relative_eq!(balanced_mean_prediction(10, 1000, 0.001).unwrap(), 0.451085950651685, max_relative = 1e-12);
}

#[test]
fn balanced_prediction_is_zero_past_the_threshold() {
    assert_eq!(balanced_mean_prediction(10, 1000, 0.0101).unwrap(), 0.0);
    let spec = ProblemSpec::new(&[100; 10]).unwrap();
    let sol = solve_reduced(&spec, &RegParams::bias_free(0.0101).unwrap(), &tight()).unwrap();
    assert!(sol.mean_prediction.zbar.amax() <= 1e-8);
}

#[test]
fn zero_beyond_the_largest_class_threshold() {
    let spec = ProblemSpec::new(&[50, 50, 20, 20, 8]).unwrap();
    let lz = 1.05 * 50f64.sqrt() / 148.0;
    for lb in [0.01, f64::INFINITY] {
        let sol = solve_reduced(&spec, &RegParams::new(lz, lb).unwrap(), &tight()).unwrap();
        assert!(sol.mean_prediction.zbar.amax() <= 1e-8);
    }
}

#[test]
fn numeric_route_matches_case_a() {
    let two = TwoClusterSpec::new(5, 5, 500, 100).unwrap();
    let spec = two.to_problem_spec().unwrap();
    for lz in [0.001, 0.002, 0.003] {
        let analytic = build_block_matrix(&solve_case_a(&two, lz, 0.01).unwrap(), &two);
        let num = solve_reduced(&spec, &RegParams::new(lz, 0.01).unwrap(), &tight()).unwrap();
        let dist = (&analytic.zbar - &num.mean_prediction.zbar).norm() / analytic.zbar.norm();
        assert!(dist <= 1e-5, "lambda_Z {lz}: {dist}");
    }
}

#[test]
fn full_and_reduced_agree() {
    let spec = ProblemSpec::new(&[5, 5, 3, 3]).unwrap();
    let reg = RegParams::new(0.01, 0.01).unwrap();
    let (full, sol) = solve_full(&spec, &reg, &tight()).unwrap();
    let red = solve_reduced(&spec, &reg, &tight()).unwrap();
    assert!((sol.objective - red.objective).abs() <= 1e-9);
    assert!(full.within_class_spread(&spec) <= 1e-7);
    assert!(full.z.row_sum().amax() <= 1e-8);
    assert!(full.bias.sum().abs() <= 1e-8);
}

#[test]
fn factorization_and_landscape_certificate() {
    let spec = ProblemSpec::new(&[30, 30, 10, 10]).unwrap();
    let (lw, lh) = (0.004, 0.009);
    let reg = RegParams::from_layer_weights(lw, lh, 0.01).unwrap();
    let sol = solve_reduced(&spec, &reg, &tight()).unwrap();
    let mp = &sol.mean_prediction;
    for f in [factorize(mp, &spec).unwrap(), factorize_scaled(mp, &spec, &reg).unwrap()] {
        assert_relative_eq!(f.product(), mp.zbar, epsilon = 1e-9);
        assert!(landscape_certificate(&f, &mp.bias, &spec, &reg).unwrap() >= -1e-9);
    }
    // The balanced split penalizes both layers equally.
    let f = factorize_scaled(mp, &spec, &reg).unwrap();
    let hy = &f.hbar * DMatrix::from_diagonal(&spec.sqrt_weights());
    assert_relative_eq!(lw * f.w.norm_squared(), lh * hy.norm_squared(), max_relative = 1e-8);
    // A perturbed point does not pass the certificate.
    let mut off = mp.clone();
    off.zbar *= 0.5;
    let fo = factorize_scaled(&off, &spec, &reg).unwrap();
    assert!(landscape_certificate(&fo, &off.bias, &spec, &reg).unwrap() < 0.0);
}

/// B(a,b,c,d)D^{1/2} has repeated singular values by construction; the SVD
/// must still reconstruct it.
#[test]
fn svd_reconstructs_block_matrices() {
    let two = TwoClusterSpec::new(5, 5, 500, 100).unwrap();
    let spec = two.to_problem_spec().unwrap();
    let lz = 1.05 * 10.0 / 3000.0;
    let c = classify_and_solve(&two, lz, f64::INFINITY).unwrap();
    let v = &c.prediction.zbar * DMatrix::from_diagonal(&spec.sqrt_weights());
    let s = linalg::svd(&v).unwrap();
    let rec = &s.u * DMatrix::from_diagonal(&s.sigma) * &s.v_t;
    assert!((rec - &v).norm() <= 1e-12 * v.norm());
    assert!(s.sigma.as_slice().windows(2).all(|w| w[0] >= w[1]));
    let r = kkt_residual(&c.prediction, &spec, &RegParams::bias_free(lz).unwrap()).unwrap();
    assert!(r.stationarity <= 1e-9);

    // The case that exposed nalgebra's implicit-QR SVD.
    let two = TwoClusterSpec::new(3, 3, 124, 32).unwrap();
    let c = classify_and_solve(&two, 4.906749804181567e-3, 0.001).unwrap();
    let spec = two.to_problem_spec().unwrap();
    let v = &c.prediction.zbar * DMatrix::from_diagonal(&spec.sqrt_weights());
    let s = linalg::svd(&v).unwrap();
    assert!((&s.u * DMatrix::from_diagonal(&s.sigma) * &s.v_t - &v).norm() <= 1e-12 * v.norm());
}

#[test]
fn threshold_values() {
    let two = TwoClusterSpec::new(3, 7, 500, 100).unwrap();
    let (lo, hi) = collapse_lambdas(&two);
    assert_relative_eq!(lo, 10.0 / 2200.0, max_relative = 1e-15);
    assert_relative_eq!(hi, 500f64.sqrt() / 2200.0, max_relative = 1e-15);
    let two = TwoClusterSpec::new(5, 5, 500, 100).unwrap();
    assert_relative_eq!(collapse_lambdas(&two).0, 1.0 / 300.0, max_relative = 1e-15);
}

/// λ* is where the bias-free optimum switches from a rank-one minority block
/// to a zero one; the rank profile sees the switch on either side.
#[test]
fn lambda_star_separates_rank_patterns() {
    for (ka, kb) in [(3, 7), (5, 5)] {
        let two = TwoClusterSpec::new(ka, kb, 500, 100).unwrap();
        let star = lambda_star_bias_free(&two).unwrap();
        let regime_at = |l: f64| {
            let c = classify_and_solve(&two, l, f64::INFINITY).unwrap();
            rank_profile(&c.prediction, &two, 1e-6).unwrap().regime
        };
        assert_eq!(regime_at(star * (1.0 - 1e-4)), Some(Regime::MinorityCollapsed));
        assert_eq!(regime_at(star * (1.0 + 1e-4)), Some(Regime::MajorityOnly));
    }
    // Frozen after the rank check above.
    let star = lambda_star_bias_free(&TwoClusterSpec::new(3, 7, 500, 100).unwrap()).unwrap();
    assert!((star - 0.00812).abs() < 5e-6, "{star}");
}

#[test]
fn asymptotic_default_grid_decreases() {
    let s =
        asymptotic_sweep(5, 5, 2.0, 0.1, LambdaBRule::Constant { value: 0.01 }, &[1e3, 1e4, 1e5, 1e6, 1e7]).unwrap();
    assert_eq!(s.rows.len(), 5);
    assert!(s.rows.windows(2).all(|w| w[1].max_dev < w[0].max_dev));
    assert!(s.rows.iter().all(|r| r.etf_dev_z > 0.0 && r.log_product > 0.0));
}

/// max_dev ~ C/log N only once log N dominates the additive constant; at
/// astronomically large N the log-log slope approaches −1.
#[test]
fn asymptotic_slope_at_large_n() {
    let grid: Vec<f64> = (0..=4).map(|i| 10f64.powi(100 + 50 * i)).collect();
    let s = asymptotic_sweep(5, 5, 2.0, 0.1, LambdaBRule::Constant { value: 0.01 }, &grid).unwrap();
    assert_eq!(s.rows.len(), 5);
    let slope = convergence_slope(&s.rows).unwrap();
    assert!((-1.3..=-0.7).contains(&slope), "{slope}");
}

/// With r → 1 the two clusters are one balanced cluster, so every ratio is 1.
#[test]
fn asymptotic_near_balanced_has_no_deviation() {
    let s = asymptotic_sweep(5, 5, 1.0 + 1e-9, 0.1, LambdaBRule::Constant { value: 0.01 }, &[1e3, 1e5, 1e7]).unwrap();
    assert_eq!(s.rows.len(), 3);
    assert!(s.rows.iter().all(|r| r.max_dev < 1e-6), "{:?}", s.rows.iter().map(|r| r.max_dev).collect::<Vec<_>>());
}

#[test]
fn asymptotic_skips_points_below_the_minority_threshold() {
    let s = asymptotic_sweep(5, 5, 2.0, 5.0, LambdaBRule::Infinite, &[100.0, 1e4]).unwrap();
    assert_eq!(s.rows.len(), 1);
    assert_eq!(s.skipped.len(), 1);
    assert_eq!(s.skipped[0].n, 100.0);
    assert!(convergence_slope(&s.rows).is_none());
}

#[test]
fn reduced_objective_matches_block_objective() {
    let two = TwoClusterSpec::new(2, 3, 40, 9).unwrap();
    let spec = two.to_problem_spec().unwrap();
    let c = classify_and_solve(&two, 0.02, 0.1).unwrap();
    let a = reduced_objective(&c.prediction, &spec, &RegParams::new(0.02, 0.1).unwrap()).unwrap();
    let b = ncollapse::two_cluster::objective(&c.prediction, &two, 0.02, 0.1).unwrap();
    assert_relative_eq!(a, b, max_relative = 1e-13);
}
