//! Accelerated proximal gradient for the nuclear-norm regularized
//! cross-entropy program, in class-mean form (K×K) and full form (K×N).
//!
//! Both forms are solved over scaled variables so that every block of the
//! smooth Hessian is O(1):
//!   reduced: X = Z̄D^{1/2}, full: X = Z, and in both β = √N b,
//! minimizing N·F, i.e. Σ_j ω_j CE(x_j/s_j + β/√N, ℓ_j) + (λ_b/2)‖β‖² + Nλ_Z‖X‖_*.
//! The prox of the last term is singular-value soft-thresholding.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{self, logsumexp};
use crate::model::{
    kkt_residual, reduced_objective, FullPrediction, KktResidual, MeanPrediction, ProblemSpec, RegParams,
};
use crate::two_cluster::Regime;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Relative objective decrease over a window below which the run stalls out.
    pub objective_tol: f64,
    pub kkt_tol: f64,
    pub initial_step: f64,
    pub backtracking_factor: f64,
    pub restart: bool,
    /// Largest N accepted by [`solve_full`].
    pub full_cap: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200_000,
            objective_tol: 1e-14,
            kkt_tol: 1e-9,
            initial_step: 1.0,
            backtracking_factor: 0.5,
            restart: true,
            full_cap: 5000,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(invalid("max_iterations must be positive"));
        }
        for (name, v) in
            [("objective_tol", self.objective_tol), ("kkt_tol", self.kkt_tol), ("initial_step", self.initial_step)]
        {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.backtracking_factor > 0.0 && self.backtracking_factor < 1.0) {
            return Err(invalid("backtracking_factor must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Numeric,
    Analytic(Regime),
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub mean_prediction: MeanPrediction,
    pub objective: f64,
    pub kkt: KktResidual,
    pub iterations: usize,
    /// Set when the KKT stopping rule was met.
    pub converged: bool,
    /// Largest relative objective increase over accepted steps; at most the
    /// roundoff slack of the monotone acceptance test.
    pub max_rise: f64,
    pub provenance: Provenance,
}

/// Soft-thresholds the singular values of `m` by `tau`.
pub fn singular_value_shrink(m: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    if tau < 0.0 {
        return Err(invalid("shrinkage threshold must be nonnegative"));
    }
    if tau == 0.0 {
        return Ok(m.clone());
    }
    let s = linalg::svd(m)?;
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for i in 0..s.sigma.len() {
        let sh = s.sigma[i] - tau;
        if sh <= 0.0 {
            break;
        }
        out += sh * s.u.column(i) * s.v_t.row(i);
    }
    Ok(out)
}

/// Column j of X carries label ℓ_j, multiplicity ω_j and scale s_j.
struct Composite {
    labels: Vec<usize>,
    omega: Vec<f64>,
    scale: Vec<f64>,
    total: f64,
    nu: f64,
    lambda_b: Option<f64>,
}

struct Point {
    x: DMatrix<f64>,
    beta: DVector<f64>,
}

impl Point {
    fn zeros(k: usize, m: usize) -> Self {
        Self { x: DMatrix::zeros(k, m), beta: DVector::zeros(k) }
    }

    fn lin(&self, a: f64, other: &Point, b: f64) -> Point {
        Point { x: a * &self.x + b * &other.x, beta: a * &self.beta + b * &other.beta }
    }

    fn dot(&self, o: &Point) -> f64 {
        self.x.dot(&o.x) + self.beta.dot(&o.beta)
    }

    fn norm_sq(&self) -> f64 {
        self.x.norm_squared() + self.beta.norm_squared()
    }
}

impl Composite {
    fn logits(&self, p: &Point, j: usize) -> DVector<f64> {
        p.x.column(j) / self.scale[j] + &p.beta / self.total.sqrt()
    }

    fn smooth(&self, p: &Point) -> f64 {
        let mut f = 0.0;
        for j in 0..self.labels.len() {
            let z = self.logits(p, j);
            f += self.omega[j] * (logsumexp(z.iter().cloned()) - z[self.labels[j]]);
        }
        if let Some(lb) = self.lambda_b {
            f += 0.5 * lb * p.beta.norm_squared();
        }
        f
    }

    fn smooth_and_grad(&self, p: &Point) -> (f64, Point) {
        let k = p.x.nrows();
        let mut f = 0.0;
        let mut gx = DMatrix::zeros(k, p.x.ncols());
        let mut gb = DVector::zeros(k);
        for j in 0..self.labels.len() {
            let z = self.logits(p, j);
            let lse = logsumexp(z.iter().cloned());
            f += self.omega[j] * (lse - z[self.labels[j]]);
            let mut r = z.map(|v| (v - lse).exp());
            r[self.labels[j]] -= 1.0;
            gx.set_column(j, &(&r * (self.omega[j] / self.scale[j])));
            gb += &r * self.omega[j];
        }
        let grad_beta = match self.lambda_b {
            Some(lb) => {
                f += 0.5 * lb * p.beta.norm_squared();
                gb / self.total.sqrt() + lb * &p.beta
            }
            None => DVector::zeros(k),
        };
        (f, Point { x: gx, beta: grad_beta })
    }

    fn nonsmooth(&self, p: &Point) -> Result<f64> {
        if self.nu == 0.0 {
            return Ok(0.0);
        }
        Ok(self.nu * linalg::nuclear_norm(&p.x)?)
    }

    fn prox(&self, p: &Point, t: f64) -> Result<Point> {
        Ok(Point { x: singular_value_shrink(&p.x, t * self.nu)?, beta: p.beta.clone() })
    }
}

struct RunOutcome {
    point: Point,
    objective: f64,
    iterations: usize,
    converged: bool,
    max_rise: f64,
}

/// Relative objective increase a monotone FISTA step may still be accepted with.
pub const ACCEPT_SLACK: f64 = 1e-13;

/// FISTA with backtracking, monotone acceptance and adaptive restart.
///
/// A candidate is rejected only if it raises the objective by more than
/// roundoff (`ACCEPT_SLACK` relative); near the optimum objective differences
/// drown in roundoff long before the iterate converges, so acceptance cannot
/// demand a strict decrease. Momentum restarts on a rejected step or when
/// the step opposes the momentum direction.
///
/// `check` evaluates the KKT stopping rule and returns (satisfied, residual).
/// The run also stops when, over `STALL_WINDOW` iterations, the objective
/// moved less than `objective_tol` and the residual stopped improving.
fn fista(
    prob: &Composite,
    opts: &SolverOptions,
    init: Point,
    mut check: impl FnMut(&Point) -> Result<(bool, f64)>,
) -> Result<RunOutcome> {
    opts.validate()?;
    const CHECK_EVERY: usize = 5;
    const STALL_WINDOW: usize = 1000;

    let mut x = init;
    let mut fx = prob.smooth(&x) + prob.nonsmooth(&x)?;
    let mut y = Point { x: x.x.clone(), beta: x.beta.clone() };
    let mut theta = 1.0_f64;
    let mut t = opts.initial_step;

    let (ok, mut best_res) = check(&x)?;
    if ok {
        return Ok(RunOutcome { point: x, objective: fx, iterations: 0, converged: true, max_rise: 0.0 });
    }
    let mut window_start = (0usize, fx, best_res);
    let mut max_rise = 0.0_f64;

    for it in 1..=opts.max_iterations {
        let (fy, gy) = prob.smooth_and_grad(&y);
        let slack = 1e-13 * fy.abs().max(1.0);
        let (z, fz_smooth) = loop {
            let step = y.lin(1.0, &gy, -t);
            let z = prob.prox(&step, t)?;
            let fz = prob.smooth(&z);
            let d = z.lin(1.0, &y, -1.0);
            if fz <= fy + gy.dot(&d) + d.norm_sq() / (2.0 * t) + slack {
                break (z, fz);
            }
            t *= opts.backtracking_factor;
            if t < 1e-30 {
                return Err(Error::Numeric("line search step underflow".into()));
            }
        };
        let fz = fz_smooth + prob.nonsmooth(&z)?;
        let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        if fz <= fx + ACCEPT_SLACK * fx.abs().max(1.0) {
            let x_old = std::mem::replace(&mut x, z);
            max_rise = max_rise.max((fz - fx) / fx.abs().max(1.0));
            fx = fz;
            let step = x.lin(1.0, &x_old, -1.0);
            let against = y.lin(1.0, &x, -1.0).dot(&step) > 0.0;
            if opts.restart && against {
                y = Point { x: x.x.clone(), beta: x.beta.clone() };
                theta = 1.0;
            } else {
                let mom = (theta - 1.0) / theta_next;
                y = x.lin(1.0 + mom, &x_old, -mom);
                theta = theta_next;
            }
        } else if opts.restart {
            y = Point { x: x.x.clone(), beta: x.beta.clone() };
            theta = 1.0;
        } else {
            // Beck-Teboulle monotone step: x stays, y leans towards z.
            y = x.lin(1.0 - theta / theta_next, &z, theta / theta_next);
            theta = theta_next;
        }

        if it % CHECK_EVERY == 0 {
            let (ok, res) = check(&x)?;
            if ok {
                return Ok(RunOutcome { point: x, objective: fx, iterations: it, converged: true, max_rise });
            }
            best_res = best_res.min(res);
        }
        if it - window_start.0 >= STALL_WINDOW {
            let (_, f0, r0) = window_start;
            let flat = (f0 - fx).abs() <= opts.objective_tol * fx.abs().max(1.0);
            if flat && best_res >= 0.5 * r0 {
                let (ok, _) = check(&x)?;
                return Ok(RunOutcome { point: x, objective: fx, iterations: it, converged: ok, max_rise });
            }
            window_start = (it, fx, best_res);
        }
    }
    let (ok, _) = check(&x)?;
    Ok(RunOutcome { point: x, objective: fx, iterations: opts.max_iterations, converged: ok, max_rise })
}

/// (stopping rule met, worst residual in the units of `tol`).
fn kkt_ok(r: &KktResidual, reg: &RegParams, tol: f64) -> (bool, f64) {
    let excess = if reg.lambda_z() == 0.0 { 0.0 } else { (-r.feasibility_margin).max(0.0) * reg.lambda_z() };
    let worst = r.stationarity.max(r.bias_residual).max(excess);
    (worst <= tol, worst)
}

fn reduced_composite(spec: &ProblemSpec, reg: &RegParams) -> Composite {
    let k = spec.num_classes();
    let total = spec.total_samples() as f64;
    Composite {
        labels: (0..k).collect(),
        omega: spec.class_sizes().iter().map(|&n| n as f64).collect(),
        scale: spec.class_sizes().iter().map(|&n| (n as f64).sqrt()).collect(),
        total,
        nu: total * reg.lambda_z(),
        lambda_b: if reg.is_bias_free() { None } else { Some(reg.lambda_b()) },
    }
}

fn reduced_to_mean(p: &Point, spec: &ProblemSpec) -> MeanPrediction {
    let inv = DMatrix::from_diagonal(&spec.sqrt_weights().map(|s| 1.0 / s));
    let total = spec.total_samples() as f64;
    MeanPrediction { zbar: &p.x * inv, bias: &p.beta / total.sqrt() }
}

/// Minimizes the class-mean objective from Z̄ = 0, b = 0. Hitting
/// `max_iterations` returns the best iterate with `converged = false`.
pub fn solve_reduced(spec: &ProblemSpec, reg: &RegParams, opts: &SolverOptions) -> Result<Solution> {
    let k = spec.num_classes();
    let prob = reduced_composite(spec, reg);
    let out = fista(&prob, opts, Point::zeros(k, k), |p| {
        let mp = reduced_to_mean(p, spec);
        Ok(kkt_ok(&kkt_residual(&mp, spec, reg)?, reg, opts.kkt_tol))
    })?;
    let mp = reduced_to_mean(&out.point, spec);
    let kkt = kkt_residual(&mp, spec, reg)?;
    let objective = reduced_objective(&mp, spec, reg)?;
    debug_assert!((objective - out.objective / prob.total).abs() <= 1e-9 * objective.abs().max(1.0));
    Ok(Solution {
        mean_prediction: mp,
        objective,
        kkt,
        iterations: out.iterations,
        converged: out.converged,
        max_rise: out.max_rise,
        provenance: Provenance::Numeric,
    })
}

/// Minimizes over all N sample columns from Z = 0. Within-class equality is
/// not imposed; the returned [`Solution`] describes the class means.
pub fn solve_full(spec: &ProblemSpec, reg: &RegParams, opts: &SolverOptions) -> Result<(FullPrediction, Solution)> {
    let k = spec.num_classes();
    solve_full_from(
        spec,
        reg,
        opts,
        &FullPrediction { z: DMatrix::zeros(k, spec.total_samples()), bias: DVector::zeros(k) },
    )
}

/// [`solve_full`] from an arbitrary starting point.
pub fn solve_full_from(
    spec: &ProblemSpec,
    reg: &RegParams,
    opts: &SolverOptions,
    init: &FullPrediction,
) -> Result<(FullPrediction, Solution)> {
    let k = spec.num_classes();
    let total = spec.total_samples();
    if total > opts.full_cap {
        return Err(Error::TooLarge { n: total, cap: opts.full_cap });
    }
    if init.z.shape() != (k, total) || init.bias.len() != k {
        return Err(Error::DimensionMismatch {
            context: "solve_full_from",
            expected: format!("{k}x{total}"),
            got: format!("{}x{}", init.z.nrows(), init.z.ncols()),
        });
    }
    if reg.is_bias_free() && init.bias.iter().any(|&b| b != 0.0) {
        return Err(invalid("bias must start at zero in bias-free mode"));
    }
    let nf = total as f64;
    let prob = Composite {
        labels: spec.labels(),
        omega: vec![1.0; total],
        scale: vec![1.0; total],
        total: nf,
        nu: nf * reg.lambda_z(),
        lambda_b: if reg.is_bias_free() { None } else { Some(reg.lambda_b()) },
    };
    let to_full = |p: &Point| FullPrediction { z: p.x.clone(), bias: &p.beta / nf.sqrt() };
    let start = Point { x: init.z.clone(), beta: &init.bias * nf.sqrt() };
    let tol = opts.kkt_tol;
    let out = fista(&prob, opts, start, |p| {
        let fp = to_full(p);
        let spread = fp.within_class_spread(spec);
        let (ok, res) = kkt_ok(&kkt_residual(&fp.class_means(spec), spec, reg)?, reg, tol);
        Ok((ok && spread <= tol, res.max(spread)))
    })?;
    let fp = to_full(&out.point);
    let mp = fp.class_means(spec);
    let kkt = kkt_residual(&mp, spec, reg)?;
    let objective = crate::model::full_objective(&fp, spec, reg)?;
    let sol = Solution {
        mean_prediction: mp,
        objective,
        kkt,
        iterations: out.iterations,
        converged: out.converged,
        max_rise: out.max_rise,
        provenance: Provenance::Numeric,
    };
    Ok((fp, sol))
}

/// Balanced split Z̄ = WᵀH̄ from the SVD Z̄D^{1/2} = UΣVᵀ:
/// W = Σ^{1/2}Uᵀ, H̄ = Σ^{1/2}VᵀD^{-1/2}. Rows are latent dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Factorization {
    pub w: DMatrix<f64>,
    pub hbar: DMatrix<f64>,
}

impl Factorization {
    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn product(&self) -> DMatrix<f64> {
        self.w.transpose() * &self.hbar
    }
}

pub fn factorize(mp: &MeanPrediction, spec: &ProblemSpec) -> Result<Factorization> {
    factorize_weighted(mp, spec, 1.0)
}

/// Factorization minimizing (λ_W/2)‖W‖² + (λ_H/2)‖H̄Y‖² for the layer weights
/// in `reg`; identical to [`factorize`] when they are absent or equal.
pub fn factorize_scaled(mp: &MeanPrediction, spec: &ProblemSpec, reg: &RegParams) -> Result<Factorization> {
    let c = match reg.layer_weights() {
        Some((lw, lh)) => (lh / lw).powf(0.25),
        None => 1.0,
    };
    factorize_weighted(mp, spec, c)
}

fn factorize_weighted(mp: &MeanPrediction, spec: &ProblemSpec, c: f64) -> Result<Factorization> {
    let k = spec.num_classes();
    let sq = spec.sqrt_weights();
    let v = &mp.zbar * DMatrix::from_diagonal(&sq);
    let s = linalg::svd(&v)?;
    let d = s.rank(1e-12, 0.0);
    let root = DMatrix::from_diagonal(&s.sigma.rows(0, d).map(f64::sqrt));
    let w = c * &root * s.u_cols(d).transpose();
    let hbar = (&root * s.v_t.rows(0, d)) * DMatrix::from_diagonal(&sq.map(|x| 1.0 / x)) / c;
    debug_assert_eq!(w.ncols(), k);
    Ok(Factorization { w, hbar })
}

/// √(λ_Wλ_H) − ‖∇L₁(WᵀH̄Y + b1ᵀ)‖_op with ∇L₁ = N⁻¹(P − Y); nonnegative
/// certifies a global minimizer of the factored problem.
pub fn landscape_certificate(
    f: &Factorization,
    bias: &DVector<f64>,
    spec: &ProblemSpec,
    reg: &RegParams,
) -> Result<f64> {
    let (lw, lh) = reg.layer_weights().ok_or_else(|| invalid("landscape_certificate needs lambda_W and lambda_H"))?;
    let k = spec.num_classes();
    let zbar = if f.dim() == 0 { DMatrix::zeros(k, k) } else { f.product() };
    let p = crate::model::softmax_columns(&zbar, bias)?.into_matrix();
    // (P̄ − I)Y has the same singular values as (P̄ − I)D^{1/2}.
    let g = (p - DMatrix::<f64>::identity(k, k)) * DMatrix::from_diagonal(&spec.sqrt_weights())
        / spec.total_samples() as f64;
    Ok((lw * lh).sqrt() - linalg::op_norm(&g)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shrink_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 0.2]));
        let s = singular_value_shrink(&m, 0.5).unwrap();
        let want = DMatrix::from_diagonal(&DVector::from_vec(vec![2.5, 0.5, 0.0]));
        assert!((s - want).norm() < 1e-14);
        assert_eq!(singular_value_shrink(&m, 0.0).unwrap(), m);
    }

    #[test]
    fn options_validate() {
        assert!(SolverOptions::default().validate().is_ok());
        let bad = SolverOptions { backtracking_factor: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn full_refuses_large_problems() {
        let spec = ProblemSpec::new(&[3000, 3000]).unwrap();
        let reg = RegParams::new(0.01, 0.01).unwrap();
        assert!(matches!(
            solve_full(&spec, &reg, &SolverOptions::default()),
            Err(Error::TooLarge { n: 6000, cap: 5000 })
        ));
    }

    #[test]
    fn zero_factorization_is_empty() {
        let spec = ProblemSpec::new(&[3, 2]).unwrap();
        let f = factorize(&MeanPrediction::zeros(2), &spec).unwrap();
        assert_eq!(f.dim(), 0);
    }
}
