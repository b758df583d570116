//! Randomized oracle suites run by the `validate` command: finite-difference
//! gradients, prox optimality, analytic-vs-numeric agreement, KKT
//! certification of the analytic minimizers, and Hessian positivity.
//!
//! Instance `i` of every suite draws from its own ChaCha stream, so reports
//! depend on the seed only, not on the worker count.

use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg;
use crate::model::{hessian_quadratic_form, kkt_residual, reduced_objective, smooth_gradient, MeanPrediction};
use crate::model::{ProblemSpec, RegParams};
use crate::solver::{singular_value_shrink, solve_reduced, SolverOptions};
use crate::two_cluster::{classify_and_solve, TwoClusterSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Gradient,
    Prox,
    DualRoute,
    Kkt,
    Hessian,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Gradient, Suite::Prox, Suite::DualRoute, Suite::Kkt, Suite::Hessian];

    pub fn as_str(&self) -> &'static str {
        match self {
            Suite::Gradient => "gradient",
            Suite::Prox => "prox",
            Suite::DualRoute => "dual_route",
            Suite::Kkt => "kkt",
            Suite::Hessian => "hessian",
        }
    }

    fn stream(&self) -> u64 {
        *self as u64 + 1
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL.iter().copied().find(|x| x.as_str() == s).ok_or_else(|| invalid(format!("unknown suite '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidateOptions {
    pub seed: u64,
    pub gradient_instances: usize,
    pub prox_instances: usize,
    pub dual_route_instances: usize,
    pub kkt_instances: usize,
    pub hessian_instances: usize,
    /// Test hook: perturbs the checked quantity of one suite.
    #[serde(skip)]
    pub inject_fault: Option<Suite>,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            gradient_instances: 100,
            prox_instances: 50,
            dual_route_instances: 12,
            kkt_instances: 100,
            hessian_instances: 50,
            inject_fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub instances: usize,
    pub failures: usize,
    /// Worst statistic across instances, in the units of `criterion`.
    pub worst: f64,
    pub criterion: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub seed: u64,
    pub suites: Vec<SuiteReport>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }

    pub fn failed_suites(&self) -> Vec<Suite> {
        self.suites.iter().filter(|s| !s.passed).map(|s| s.suite).collect()
    }

    /// Fixed-width table; contains no timings so equal seeds give equal text.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "seed {}", self.seed);
        let _ = writeln!(
            out,
            "{:<12} {:>9} {:>8} {:>12}  {:<14} status",
            "suite", "instances", "failures", "worst", "criterion"
        );
        for s in &self.suites {
            let _ = writeln!(
                out,
                "{:<12} {:>9} {:>8} {:>12.3e}  {:<14} {}",
                s.suite.as_str(),
                s.instances,
                s.failures,
                s.worst,
                s.criterion,
                if s.passed { "PASS" } else { "FAIL" }
            );
        }
        out
    }
}

pub const GRADIENT_TOL: f64 = 1e-6;
pub const PROX_TOL: f64 = 1e-9;
pub const DUAL_ROUTE_TOL: f64 = 1e-5;
pub const STATIONARITY_TOL: f64 = 1e-7;
pub const MARGIN_TOL: f64 = 1e-9;
pub const CENTERING_TOL: f64 = 1e-8;
const FAULT: f64 = 1e-2;

pub fn run(opts: &ValidateOptions) -> Result<ValidationReport> {
    let mut suites = Vec::new();
    for suite in Suite::ALL {
        let (count, criterion, upper): (usize, &str, bool) = match suite {
            Suite::Gradient => (opts.gradient_instances, "rel <= 1e-6", true),
            Suite::Prox => (opts.prox_instances, "<= 1e-9", true),
            Suite::DualRoute => (opts.dual_route_instances, "rel <= 1e-5", true),
            Suite::Kkt => (opts.kkt_instances, "scaled <= 1", true),
            Suite::Hessian => (opts.hessian_instances, "min > 0", false),
        };
        let fault = opts.inject_fault == Some(suite);
        let stats: Vec<f64> = (0..count)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                rng.set_stream(suite.stream() << 32 | i as u64);
                let s = match suite {
                    Suite::Gradient => gradient_instance(&mut rng, fault),
                    Suite::Prox => prox_instance(&mut rng, fault),
                    Suite::DualRoute => dual_route_instance(&mut rng, fault),
                    Suite::Kkt => kkt_instance(&mut rng, fault),
                    Suite::Hessian => hessian_instance(&mut rng, fault),
                };
                // An instance that errors counts as a failure.
                s.unwrap_or(if upper { f64::INFINITY } else { f64::NEG_INFINITY })
            })
            .collect();
        let (failures, worst) = if upper {
            let bound = match suite {
                Suite::Gradient => GRADIENT_TOL,
                Suite::Prox => PROX_TOL,
                Suite::DualRoute => DUAL_ROUTE_TOL,
                _ => 1.0,
            };
            let fails = stats.iter().filter(|&&s| !(s <= bound)).count();
            (fails, stats.iter().cloned().fold(0.0, f64::max))
        } else {
            let fails = stats.iter().filter(|&&s| !(s > 0.0)).count();
            (fails, stats.iter().cloned().fold(f64::INFINITY, f64::min))
        };
        suites.push(SuiteReport {
            suite,
            instances: count,
            failures,
            worst,
            criterion: criterion.to_string(),
            passed: failures == 0,
        });
    }
    Ok(ValidationReport { seed: opts.seed, suites })
}

/// Class sizes for 2 or 3 clusters of 1..=3 classes each.
pub fn random_problem(rng: &mut impl Rng) -> ProblemSpec {
    let clusters = rng.gen_range(2..=3);
    let mut sizes = Vec::new();
    let mut n = rng.gen_range(2..=12);
    for _ in 0..clusters {
        for _ in 0..rng.gen_range(1..=3) {
            sizes.push(n);
        }
        n += rng.gen_range(1..=20);
    }
    ProblemSpec::new(&sizes).expect("sizes are positive")
}

pub fn random_two_cluster(rng: &mut impl Rng) -> TwoClusterSpec {
    let n_b = rng.gen_range(2..=60);
    let n_a = n_b + rng.gen_range(1..=5 * n_b);
    TwoClusterSpec::new(rng.gen_range(2..=4), rng.gen_range(2..=4), n_a, n_b).expect("valid by construction")
}

fn random_matrix(rng: &mut impl Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| scale * rng.gen_range(-1.0..1.0))
}

fn random_lambda_b(rng: &mut impl Rng) -> f64 {
    [0.001, 0.01, 1.0, f64::INFINITY][rng.gen_range(0..4)]
}

/// λ_Z with Nλ_Z/√n_B uniform over [0.2, 1.3·√(n_A/n_B)], which visits all regimes.
fn random_lambda_z(rng: &mut impl Rng, spec: &TwoClusterSpec) -> f64 {
    let hi = 1.3 * (spec.n_a() / spec.n_b()).sqrt();
    rng.gen_range(0.2..hi) * spec.n_b().sqrt() / spec.total()
}

fn centered_bias(rng: &mut impl Rng, k: usize, scale: f64) -> DVector<f64> {
    let b = DVector::from_fn(k, |_, _| scale * rng.gen_range(-1.0..1.0));
    let mean = b.mean();
    b.add_scalar(-mean)
}

/// Relative error of the analytic smooth gradient against central differences.
fn gradient_instance(rng: &mut ChaCha8Rng, fault: bool) -> Result<f64> {
    let spec = random_problem(rng);
    let k = spec.num_classes();
    let lb = random_lambda_b(rng);
    let reg = RegParams::new(0.0, lb)?;
    let mp = MeanPrediction { zbar: random_matrix(rng, k, k, 2.0), bias: random_vector(rng, k, lb) };
    let (mut gz, gb) = smooth_gradient(&mp, &spec, &reg)?;
    if fault {
        gz[(0, 0)] += FAULT;
    }
    let f = |m: &MeanPrediction| reduced_objective(m, &spec, &reg);
    let h = 1e-5;
    let mut err2 = 0.0;
    for i in 0..k {
        for j in 0..k {
            let (mut p, mut q) = (mp.clone(), mp.clone());
            p.zbar[(i, j)] += h;
            q.zbar[(i, j)] -= h;
            let fd = (f(&p)? - f(&q)?) / (2.0 * h);
            err2 += (fd - gz[(i, j)]).powi(2);
        }
    }
    if !reg.is_bias_free() {
        for i in 0..k {
            let (mut p, mut q) = (mp.clone(), mp.clone());
            p.bias[i] += h;
            q.bias[i] -= h;
            let fd = (f(&p)? - f(&q)?) / (2.0 * h);
            err2 += (fd - gb[i]).powi(2);
        }
    }
    let scale = (gz.norm_squared() + gb.norm_squared()).sqrt().max(1e-3);
    Ok(err2.sqrt() / scale)
}

fn random_vector(rng: &mut impl Rng, k: usize, lambda_b: f64) -> DVector<f64> {
    if lambda_b.is_infinite() {
        DVector::zeros(k)
    } else {
        DVector::from_fn(k, |_, _| rng.gen_range(-1.0..1.0))
    }
}

/// Worst of the subgradient-certificate residual of X = prox(M) and the
/// largest objective decrease found over a net of random perturbations.
fn prox_instance(rng: &mut ChaCha8Rng, fault: bool) -> Result<f64> {
    let (r, c) = (rng.gen_range(2..=6), rng.gen_range(2..=6));
    let m = random_matrix(rng, r, c, 3.0);
    let tau = rng.gen_range(0.05..2.0);
    let mut x = singular_value_shrink(&m, tau)?;
    if fault {
        x[(0, 0)] += FAULT;
    }
    let phi = |y: &DMatrix<f64>| -> Result<f64> { Ok(0.5 * (y - &m).norm_squared() + tau * linalg::nuclear_norm(y)?) };

    // M − X must equal τ(U_rV_rᵀ + W) with W orthogonal to the range of X and ‖W‖_op ≤ 1.
    let s = linalg::svd(&x)?;
    let rank = s.rank(1e-10, 1e-12);
    let (u, v) = (s.u_cols(rank), s.v_cols(rank));
    let g = (&m - &x) / tau - &u * v.transpose();
    let pu = &u * u.transpose();
    let pv = &v * v.transpose();
    let tangent = &pu * &g + &g * &pv - &pu * &g * &pv;
    let normal = linalg::op_norm(&(&g - &tangent))?;
    let mut worst = tangent.norm().max(normal - 1.0);

    let base = phi(&x)?;
    for _ in 0..24 {
        let step = 10f64.powf(rng.gen_range(-4.0..-1.0));
        let y = &x + random_matrix(rng, r, c, step);
        worst = worst.max(base - phi(&y)?);
    }
    Ok(worst.max(0.0))
}

fn dual_route_instance(rng: &mut ChaCha8Rng, fault: bool) -> Result<f64> {
    let two = random_two_cluster(rng);
    let spec = two.to_problem_spec()?;
    let lz = random_lambda_z(rng, &two);
    let lb = random_lambda_b(rng);
    let analytic = classify_and_solve(&two, lz, lb)?.prediction;
    let opts = SolverOptions { kkt_tol: 1e-11, ..Default::default() };
    let numeric = solve_reduced(&spec, &RegParams::new(lz, lb)?, &opts)?.mean_prediction;
    let mut d = relative_distance(&analytic.zbar, &numeric.zbar);
    if fault {
        d += FAULT;
    }
    Ok(d)
}

/// ‖A − B‖_F / max(‖A‖_F, ‖B‖_F, 1); the floor keeps the Z̄ = 0 regime meaningful.
pub fn relative_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(1.0)
}

/// Max of the KKT and centering residuals of an analytic minimizer, each
/// divided by its tolerance.
fn kkt_instance(rng: &mut ChaCha8Rng, fault: bool) -> Result<f64> {
    let two = random_two_cluster(rng);
    let spec = two.to_problem_spec()?;
    let lz = random_lambda_z(rng, &two);
    let lb = random_lambda_b(rng);
    let mut mp = classify_and_solve(&two, lz, lb)?.prediction;
    if fault {
        mp.zbar[(0, 0)] += FAULT;
    }
    let r = kkt_residual(&mp, &spec, &RegParams::new(lz, lb)?)?;
    let col = mp.zbar.row_sum().abs().max();
    Ok((r.stationarity / STATIONARITY_TOL)
        .max(-r.feasibility_margin / MARGIN_TOL)
        .max(r.bias_residual / STATIONARITY_TOL)
        .max(col / CENTERING_TOL)
        .max(mp.bias.sum().abs() / CENTERING_TOL))
}

/// Smallest curvature of the cross-entropy along a centered direction,
/// normalized by the squared direction norm.
fn hessian_instance(rng: &mut ChaCha8Rng, fault: bool) -> Result<f64> {
    let spec = random_problem(rng);
    let k = spec.num_classes();
    let mp = MeanPrediction { zbar: random_matrix(rng, k, k, 3.0), bias: random_vector(rng, k, 1.0) };
    let mut dz = random_matrix(rng, k, k, 1.0);
    for mut col in dz.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let db = centered_bias(rng, k, 1.0);
    let q = hessian_quadratic_form(&mp, &spec, &dz, &db)?;
    let norm2 = dz.norm_squared() + db.norm_squared();
    Ok(if fault { -q } else { q / norm2 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> ValidateOptions {
        ValidateOptions {
            seed,
            gradient_instances: 5,
            prox_instances: 5,
            dual_route_instances: 2,
            kkt_instances: 5,
            hessian_instances: 5,
            inject_fault: None,
        }
    }

    #[test]
    fn small_run_passes_and_repeats() {
        let a = run(&small(7)).unwrap();
        assert!(a.passed(), "{}", a.table());
        assert_eq!(a.table(), run(&small(7)).unwrap().table());
    }

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.as_str().parse::<Suite>().unwrap(), s);
        }
        assert!("nope".parse::<Suite>().is_err());
    }
}
