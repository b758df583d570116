//! Problem data, the cross-entropy objective in full and class-mean form, its
//! gradient, Hessian, and the first-order optimality residual.
//!
//! Classes are always stored by non-increasing size. Samples of a
//! [`FullPrediction`] are laid out class by class in that order.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim, invalid, Error, Result};
use crate::linalg::{self, logsumexp};
use crate::policy::NumericPolicy;

/// A maximal run of classes sharing one sample count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub size: usize,
    pub classes: Range<usize>,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemSpec {
    class_sizes: Vec<usize>,
    permutation: Vec<usize>,
    clusters: Vec<Cluster>,
}

impl ProblemSpec {
    /// Sorts `sizes` non-increasingly (stable), remembering where each class
    /// came from.
    pub fn new(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(invalid("need at least two classes"));
        }
        if sizes.contains(&0) {
            return Err(invalid("every class needs at least one sample"));
        }
        let mut permutation: Vec<usize> = (0..sizes.len()).collect();
        permutation.sort_by(|&i, &j| sizes[j].cmp(&sizes[i]));
        let class_sizes: Vec<usize> = permutation.iter().map(|&i| sizes[i]).collect();
        let mut clusters: Vec<Cluster> = Vec::new();
        for (k, &n) in class_sizes.iter().enumerate() {
            match clusters.last_mut() {
                Some(c) if c.size == n => c.classes.end = k + 1,
                _ => clusters.push(Cluster { size: n, classes: k..k + 1 }),
            }
        }
        Ok(Self { class_sizes, permutation, clusters })
    }

    pub fn class_sizes(&self) -> &[usize] {
        &self.class_sizes
    }

    /// `permutation()[k]` is the caller's index of sorted class `k`.
    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn num_classes(&self) -> usize {
        self.class_sizes.len()
    }

    pub fn total_samples(&self) -> usize {
        self.class_sizes.iter().sum()
    }

    /// The diagonal of D as a vector n.
    pub fn weights(&self) -> DVector<f64> {
        DVector::from_iterator(self.num_classes(), self.class_sizes.iter().map(|&n| n as f64))
    }

    pub fn sqrt_weights(&self) -> DVector<f64> {
        self.weights().map(f64::sqrt)
    }

    /// Column range of class `k` inside a full prediction.
    pub fn sample_range(&self, k: usize) -> Range<usize> {
        let start: usize = self.class_sizes[..k].iter().sum();
        start..start + self.class_sizes[k]
    }

    /// Class label of every sample column.
    pub fn labels(&self) -> Vec<usize> {
        self.class_sizes.iter().enumerate().flat_map(|(k, &n)| std::iter::repeat_n(k, n)).collect()
    }
}

/// Regularization weights. `lambda_b = +inf` pins the bias at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegParams {
    lambda_z: f64,
    lambda_b: f64,
    layer: Option<(f64, f64)>,
}

impl RegParams {
    pub fn new(lambda_z: f64, lambda_b: f64) -> Result<Self> {
        if !(lambda_z >= 0.0 && lambda_z.is_finite()) {
            return Err(invalid(format!("lambda_Z must be finite and >= 0, got {lambda_z}")));
        }
        if !(lambda_b > 0.0) {
            return Err(invalid(format!("lambda_b must be > 0 or +inf, got {lambda_b}")));
        }
        Ok(Self { lambda_z, lambda_b, layer: None })
    }

    pub fn bias_free(lambda_z: f64) -> Result<Self> {
        Self::new(lambda_z, f64::INFINITY)
    }

    /// Attaches the per-layer weights; their geometric mean must equal lambda_Z.
    pub fn with_layer_weights(mut self, lambda_w: f64, lambda_h: f64) -> Result<Self> {
        if !(lambda_w > 0.0 && lambda_h > 0.0) {
            return Err(invalid("lambda_W and lambda_H must be positive"));
        }
        let gm = (lambda_w * lambda_h).sqrt();
        if (gm - self.lambda_z).abs() > 1e-12 * self.lambda_z {
            return Err(invalid(format!(
                "sqrt(lambda_W * lambda_H) = {gm} does not match lambda_Z = {}",
                self.lambda_z
            )));
        }
        self.layer = Some((lambda_w, lambda_h));
        Ok(self)
    }

    /// Builds the triple from per-layer weights alone.
    pub fn from_layer_weights(lambda_w: f64, lambda_h: f64, lambda_b: f64) -> Result<Self> {
        Self::new((lambda_w * lambda_h).sqrt(), lambda_b)?.with_layer_weights(lambda_w, lambda_h)
    }

    pub fn lambda_z(&self) -> f64 {
        self.lambda_z
    }

    pub fn lambda_b(&self) -> f64 {
        self.lambda_b
    }

    pub fn layer_weights(&self) -> Option<(f64, f64)> {
        self.layer
    }

    pub fn is_bias_free(&self) -> bool {
        self.lambda_b.is_infinite()
    }
}

/// Class-mean logits: column k of `zbar` is the mean prediction for class k.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanPrediction {
    pub zbar: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl MeanPrediction {
    pub fn zeros(k: usize) -> Self {
        Self { zbar: DMatrix::zeros(k, k), bias: DVector::zeros(k) }
    }

    /// Z = Z̄Y: every sample column is its class mean.
    pub fn expand(&self, spec: &ProblemSpec) -> FullPrediction {
        let k = spec.num_classes();
        let mut z = DMatrix::zeros(k, spec.total_samples());
        for c in 0..k {
            for i in spec.sample_range(c) {
                z.set_column(i, &self.zbar.column(c));
            }
        }
        FullPrediction { z, bias: self.bias.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullPrediction {
    pub z: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl FullPrediction {
    /// Class means of the sample columns.
    pub fn class_means(&self, spec: &ProblemSpec) -> MeanPrediction {
        let k = spec.num_classes();
        let mut zbar = DMatrix::zeros(k, k);
        for c in 0..k {
            let r = spec.sample_range(c);
            let n = r.len() as f64;
            let sum = self.z.columns(r.start, r.len()).column_sum();
            zbar.set_column(c, &(sum / n));
        }
        MeanPrediction { zbar, bias: self.bias.clone() }
    }

    /// max over samples of ‖z_i − z̄_{class(i)}‖.
    pub fn within_class_spread(&self, spec: &ProblemSpec) -> f64 {
        let mp = self.class_means(spec);
        let mut worst: f64 = 0.0;
        for c in 0..spec.num_classes() {
            for i in spec.sample_range(c) {
                worst = worst.max((self.z.column(i) - mp.zbar.column(c)).norm());
            }
        }
        worst
    }
}

/// Column-stochastic matrix of softmax probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMatrix(DMatrix<f64>);

impl ProbabilityMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

/// Softmax of every column of `z + bias 1ᵀ`.
pub fn softmax_columns(z: &DMatrix<f64>, bias: &DVector<f64>) -> Result<ProbabilityMatrix> {
    if bias.len() != z.nrows() {
        return Err(dim("softmax_columns", z.nrows(), bias.len()));
    }
    if z.iter().chain(bias.iter()).any(|x| !x.is_finite()) {
        return Err(invalid("softmax of non-finite logits"));
    }
    let mut p = z.clone();
    for mut col in p.column_iter_mut() {
        col += bias;
        let mx = col.max();
        col.apply(|x| *x = (*x - mx).exp());
        let s = col.sum();
        col /= s;
    }
    Ok(ProbabilityMatrix(p))
}

fn check_mean(mp: &MeanPrediction, spec: &ProblemSpec, context: &'static str) -> Result<()> {
    let k = spec.num_classes();
    if mp.zbar.shape() != (k, k) {
        return Err(Error::DimensionMismatch {
            context,
            expected: format!("{k}x{k}"),
            got: format!("{}x{}", mp.zbar.nrows(), mp.zbar.ncols()),
        });
    }
    if mp.bias.len() != k {
        return Err(dim(context, k, mp.bias.len()));
    }
    Ok(())
}

fn bias_penalty(bias: &DVector<f64>, reg: &RegParams) -> Result<f64> {
    if reg.is_bias_free() {
        if bias.iter().any(|&b| b != 0.0) {
            return Err(invalid("bias must be zero when lambda_b is infinite"));
        }
        Ok(0.0)
    } else {
        Ok(0.5 * reg.lambda_b() * bias.norm_squared())
    }
}

fn cross_entropy(z: impl Iterator<Item = f64> + Clone, label: usize) -> f64 {
    let zl = z.clone().nth(label).expect("label within range");
    logsumexp(z) - zl
}

/// (1/N) Σ_k n_k CE(z̄_k + b, e_k) + λ_Z‖Z̄D^{1/2}‖_* + (λ_b/2)‖b‖².
pub fn reduced_objective(mp: &MeanPrediction, spec: &ProblemSpec, reg: &RegParams) -> Result<f64> {
    check_mean(mp, spec, "reduced_objective")?;
    let n = spec.weights();
    let total = spec.total_samples() as f64;
    let mut loss = 0.0;
    for k in 0..spec.num_classes() {
        let col = mp.zbar.column(k) + &mp.bias;
        loss += n[k] * cross_entropy(col.iter().cloned(), k);
    }
    let v = &mp.zbar * DMatrix::from_diagonal(&spec.sqrt_weights());
    let nuc = if reg.lambda_z() > 0.0 { reg.lambda_z() * linalg::nuclear_norm(&v)? } else { 0.0 };
    Ok(loss / total + nuc + bias_penalty(&mp.bias, reg)?)
}

/// (1/N) CE(Z + b1ᵀ, Y) + λ_Z‖Z‖_* + (λ_b/2)‖b‖² over all sample columns.
pub fn full_objective(fp: &FullPrediction, spec: &ProblemSpec, reg: &RegParams) -> Result<f64> {
    let k = spec.num_classes();
    let total = spec.total_samples();
    if fp.z.shape() != (k, total) {
        return Err(Error::DimensionMismatch {
            context: "full_objective",
            expected: format!("{k}x{total}"),
            got: format!("{}x{}", fp.z.nrows(), fp.z.ncols()),
        });
    }
    if fp.bias.len() != k {
        return Err(dim("full_objective", k, fp.bias.len()));
    }
    let mut loss = 0.0;
    for c in 0..k {
        for i in spec.sample_range(c) {
            let col = fp.z.column(i) + &fp.bias;
            loss += cross_entropy(col.iter().cloned(), c);
        }
    }
    let nuc = if reg.lambda_z() > 0.0 { reg.lambda_z() * linalg::nuclear_norm(&fp.z)? } else { 0.0 };
    Ok(loss / total as f64 + nuc + bias_penalty(&fp.bias, reg)?)
}

/// Gradient of the smooth part (weighted CE plus bias ridge) with respect to
/// (Z̄, b). The bias gradient is zero in bias-free mode.
pub fn smooth_gradient(
    mp: &MeanPrediction,
    spec: &ProblemSpec,
    reg: &RegParams,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_mean(mp, spec, "smooth_gradient")?;
    let k = spec.num_classes();
    let total = spec.total_samples() as f64;
    let n = spec.weights();
    let pm = softmax_columns(&mp.zbar, &mp.bias)?.into_matrix() - DMatrix::<f64>::identity(k, k);
    let gz = &pm * DMatrix::from_diagonal(&n) / total;
    let gb = if reg.is_bias_free() { DVector::zeros(k) } else { &pm * &n / total + reg.lambda_b() * &mp.bias };
    Ok((gz, gb))
}

/// Residuals of the first-order conditions
/// N⁻¹(I−P̄) = λ_Z([(Z̄DZ̄ᵀ)†]^{1/2}Z̄ + R̄), ‖R̄D^{1/2}‖_op ≤ 1, N⁻¹(I−P̄)n = λ_b b.
///
/// Both sides are right-multiplied by D^{1/2}, where [(Z̄DZ̄ᵀ)†]^{1/2}Z̄D^{1/2}
/// is the polar factor UVᵀ of Z̄D^{1/2} and the tangent-space projection is
/// exact.
#[derive(Debug, Clone, PartialEq)]
pub struct KktResidual {
    /// Frobenius norm of the residual projected onto the tangent space of Z̄D^{1/2}.
    pub stationarity: f64,
    /// 1 − ‖R̄D^{1/2}‖_op; negative means the subgradient is infeasible.
    pub feasibility_margin: f64,
    pub bias_residual: f64,
    /// The recovered R̄.
    pub certificate: DMatrix<f64>,
    /// Rank of Z̄D^{1/2} used for the tangent space.
    pub rank: usize,
}

pub fn kkt_residual(mp: &MeanPrediction, spec: &ProblemSpec, reg: &RegParams) -> Result<KktResidual> {
    kkt_residual_with(mp, spec, reg, &NumericPolicy::default())
}

pub fn kkt_residual_with(
    mp: &MeanPrediction,
    spec: &ProblemSpec,
    reg: &RegParams,
    policy: &NumericPolicy,
) -> Result<KktResidual> {
    check_mean(mp, spec, "kkt_residual")?;
    let k = spec.num_classes();
    let total = spec.total_samples() as f64;
    let n = spec.weights();
    let sq = spec.sqrt_weights();
    let p = softmax_columns(&mp.zbar, &mp.bias)?.into_matrix();
    let g = (DMatrix::<f64>::identity(k, k) - &p) / total;

    let bias_residual = if reg.is_bias_free() { mp.bias.norm() } else { (&g * &n - reg.lambda_b() * &mp.bias).norm() };

    let lz = reg.lambda_z();
    if lz == 0.0 {
        let grad = &g * DMatrix::from_diagonal(&n);
        return Ok(KktResidual {
            stationarity: grad.norm(),
            feasibility_margin: 1.0,
            bias_residual,
            certificate: DMatrix::zeros(k, k),
            rank: 0,
        });
    }

    let sqd = DMatrix::from_diagonal(&sq);
    let v = &mp.zbar * &sqd;
    let gd = &g * &sqd;
    let s = linalg::svd(&v)?;
    let r = s.rank(policy.rank_rel_cutoff, 1e-14 * total.sqrt());
    let u = s.u_cols(r);
    let vr = s.v_cols(r);
    let e = &gd - lz * &u * vr.transpose();
    let pu = &u * u.transpose();
    let pv = &vr * vr.transpose();
    let tangent = &pu * &e + &e * &pv - &pu * &e * &pv;
    let normal = &e - &tangent;
    let margin = 1.0 - linalg::op_norm(&normal)? / lz;
    let inv_sq = DMatrix::from_diagonal(&sq.map(|x| 1.0 / x));
    Ok(KktResidual {
        stationarity: tangent.norm(),
        feasibility_margin: margin,
        bias_residual,
        certificate: normal / lz * inv_sq,
        rank: r,
    })
}

/// Second derivative of the weighted cross-entropy along (ΔZ̄, Δb):
/// (1/N) Σ_k n_k δ_kᵀ(diag(p_k) − p_kp_kᵀ)δ_k with δ_k = Δz̄_k + Δb.
///
/// Directions must be column-centered: 1ᵀδ_k = 0.
pub fn hessian_quadratic_form(
    mp: &MeanPrediction,
    spec: &ProblemSpec,
    delta_z: &DMatrix<f64>,
    delta_b: &DVector<f64>,
) -> Result<f64> {
    check_mean(mp, spec, "hessian_quadratic_form")?;
    let k = spec.num_classes();
    if delta_z.shape() != (k, k) || delta_b.len() != k {
        return Err(dim("hessian_quadratic_form", k, delta_b.len()));
    }
    let p = softmax_columns(&mp.zbar, &mp.bias)?.into_matrix();
    let n = spec.weights();
    let mut q = 0.0;
    for c in 0..k {
        let d = delta_z.column(c) + delta_b;
        if d.sum().abs() > 1e-10 * d.norm().max(1.0) {
            return Err(invalid(format!("direction column {c} is not centered (sum {})", d.sum())));
        }
        let pc = p.column(c);
        let quad: f64 = d.iter().zip(pc.iter()).map(|(x, w)| w * x * x).sum::<f64>() - pc.dot(&d).powi(2);
        q += n[c] * quad;
    }
    Ok(q / spec.total_samples() as f64)
}
