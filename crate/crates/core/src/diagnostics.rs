//! Neural-collapse metrics and structure checks: NC₁, pairwise correlation
//! and ETF deviation, block-structure fitting, rank profiles, and the
//! large-N sweep towards the ETF.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim, invalid, Error, Result};
use crate::linalg;
use crate::model::{MeanPrediction, ProblemSpec};
use crate::two_cluster::{build_block_matrix, solve_case_a, Regime, TwoClusterSpec};

/// Singular values of Σ_B below this fraction of the largest are dropped.
pub const PINV_REL_CUTOFF: f64 = 1e-10;

/// Columns with norm at most this fraction of the largest column norm are
/// treated as zero by [`correlation_matrix`].
pub const ZERO_COLUMN_REL: f64 = 1e-12;

/// (1/K) Tr(Σ_W Σ_B†) for features stored one sample per column.
/// Returns +∞ when Σ_B vanishes but Σ_W does not.
pub fn nc1_metric(features: &DMatrix<f64>, labels: &[usize]) -> Result<f64> {
    let n = features.ncols();
    if labels.len() != n {
        return Err(dim("nc1_metric labels", n, labels.len()));
    }
    if n == 0 {
        return Err(invalid("nc1_metric needs at least one sample"));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(invalid("nc1_metric: non-finite feature"));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let d = features.nrows();
    let mut counts = vec![0usize; k];
    let mut means = DMatrix::<f64>::zeros(d, k);
    for (i, &y) in labels.iter().enumerate() {
        counts[y] += 1;
        let mut col = means.column_mut(y);
        col += features.column(i);
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(invalid(format!("nc1_metric: class {empty} has no samples")));
    }
    for (y, &c) in counts.iter().enumerate() {
        let mut col = means.column_mut(y);
        col /= c as f64;
    }
    let global = features.column_sum() / n as f64;

    let mut within = DMatrix::<f64>::zeros(d, d);
    for (i, &y) in labels.iter().enumerate() {
        let r = features.column(i) - means.column(y);
        within.ger(1.0, &r, &r, 1.0);
    }
    within /= n as f64;
    let mut between = DMatrix::<f64>::zeros(d, d);
    for y in 0..k {
        let r = means.column(y) - &global;
        between.ger(1.0, &r, &r, 1.0);
    }
    between /= k as f64;

    let within_zero = within.iter().all(|&v| v == 0.0);
    if within_zero {
        return Ok(0.0);
    }
    if between.iter().all(|&v| v == 0.0) {
        return Ok(f64::INFINITY);
    }
    let bp = linalg::pinv(&between, PINV_REL_CUTOFF)?;
    Ok((within * bp).trace().max(0.0) / k as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Correlation {
    /// Θ̂ with NaN in every row and column of a zero column.
    pub matrix: DMatrix<f64>,
    /// Indices of columns treated as zero.
    pub undefined: Vec<usize>,
}

/// Θ̂ = diag(Z̄ᵀZ̄)^{-1/2} Z̄ᵀZ̄ diag(Z̄ᵀZ̄)^{-1/2}, clipped to [−1, 1].
pub fn correlation_matrix(zbar: &DMatrix<f64>) -> Result<Correlation> {
    if zbar.iter().any(|v| !v.is_finite()) {
        return Err(invalid("correlation_matrix: non-finite entry"));
    }
    let k = zbar.ncols();
    let norms: Vec<f64> = (0..k).map(|j| zbar.column(j).norm()).collect();
    let max = norms.iter().cloned().fold(0.0, f64::max);
    let undefined: Vec<usize> = (0..k).filter(|&j| max == 0.0 || norms[j] <= ZERO_COLUMN_REL * max).collect();
    let matrix = DMatrix::from_fn(k, k, |i, j| {
        if undefined.contains(&i) || undefined.contains(&j) {
            f64::NAN
        } else if i == j {
            1.0
        } else {
            (zbar.column(i).dot(&zbar.column(j)) / (norms[i] * norms[j])).clamp(-1.0, 1.0)
        }
    });
    Ok(Correlation { matrix, undefined })
}

/// max over k ≠ l of |Θ̂_kl + 1/(K−1)|.
pub fn etf_deviation(zbar: &DMatrix<f64>) -> Result<f64> {
    let k = zbar.ncols();
    if k < 2 {
        return Err(invalid("etf_deviation needs K >= 2"));
    }
    let c = correlation_matrix(zbar)?;
    if !c.undefined.is_empty() {
        return Err(Error::DegenerateColumns(c.undefined));
    }
    let target = -1.0 / (k as f64 - 1.0);
    let mut worst = 0.0f64;
    for i in 0..k {
        for j in 0..k {
            if i != j {
                worst = worst.max((c.matrix[(i, j)] - target).abs());
            }
        }
    }
    Ok(worst)
}

/// (a, b, c, d, m) read off a two-cluster block fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoClusterCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub m: f64,
}

/// Projection of (Z̄, b) onto Σ_j a_j I_{Γ_j} + Σ_{j,j'} a_{jj'} 1_{Γ_j}1_{Γ_j'}ᵀ
/// with a bias constant on each cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockFit {
    /// a_j: diagonal excess in cluster j. Singleton clusters put everything here.
    pub diag_coeffs: Vec<f64>,
    /// a_{jj'}: constant level of block (Γ_j, Γ_j').
    pub cross_coeffs: Vec<Vec<f64>>,
    /// Mean bias per cluster.
    pub bias_coeffs: Vec<f64>,
    /// ‖Z̄ − projection‖_F.
    pub residual: f64,
    /// ‖b − projection‖₂.
    pub bias_residual: f64,
    /// Present when there are exactly two clusters.
    pub two_cluster: Option<TwoClusterCoefficients>,
}

impl BlockFit {
    pub fn reconstruct(&self, spec: &ProblemSpec) -> MeanPrediction {
        let k = spec.num_classes();
        let owner = cluster_of(spec);
        let zbar = DMatrix::from_fn(k, k, |r, c| {
            let (i, j) = (owner[r], owner[c]);
            let diag = if r == c { self.diag_coeffs[i] } else { 0.0 };
            diag + self.cross_coeffs[i][j]
        });
        let bias = DVector::from_fn(k, |r, _| self.bias_coeffs[owner[r]]);
        MeanPrediction { zbar, bias }
    }
}

fn cluster_of(spec: &ProblemSpec) -> Vec<usize> {
    let mut owner = vec![0; spec.num_classes()];
    for (j, cl) in spec.clusters().iter().enumerate() {
        for r in cl.classes.clone() {
            owner[r] = j;
        }
    }
    owner
}

/// Least-squares block fit by averaging over block positions; the block
/// indicator matrices are orthogonal so this is the exact projection.
pub fn fit_block_structure(mp: &MeanPrediction, spec: &ProblemSpec) -> Result<BlockFit> {
    let k = spec.num_classes();
    if mp.zbar.shape() != (k, k) {
        return Err(dim("fit_block_structure Zbar", k, mp.zbar.nrows()));
    }
    if mp.bias.len() != k {
        return Err(dim("fit_block_structure bias", k, mp.bias.len()));
    }
    let clusters = spec.clusters();
    let nj = clusters.len();
    let mut diag_coeffs = vec![0.0; nj];
    let mut cross = vec![vec![0.0; nj]; nj];
    for (i, ci) in clusters.iter().enumerate() {
        for (j, cj) in clusters.iter().enumerate() {
            let (mut sum, mut count) = (0.0, 0usize);
            let mut diag = 0.0;
            for r in ci.classes.clone() {
                for c in cj.classes.clone() {
                    if r == c {
                        diag += mp.zbar[(r, c)];
                    } else {
                        sum += mp.zbar[(r, c)];
                        count += 1;
                    }
                }
            }
            if i == j {
                let s = ci.len() as f64;
                if count == 0 {
                    diag_coeffs[i] = diag / s;
                } else {
                    cross[i][j] = sum / count as f64;
                    diag_coeffs[i] = diag / s - cross[i][j];
                }
            } else {
                cross[i][j] = sum / count as f64;
            }
        }
    }
    let bias_coeffs: Vec<f64> =
        clusters.iter().map(|cl| cl.classes.clone().map(|r| mp.bias[r]).sum::<f64>() / cl.len() as f64).collect();

    let mut fit = BlockFit {
        diag_coeffs,
        cross_coeffs: cross,
        bias_coeffs,
        residual: 0.0,
        bias_residual: 0.0,
        two_cluster: None,
    };
    let proj = fit.reconstruct(spec);
    fit.residual = (&mp.zbar - &proj.zbar).norm();
    fit.bias_residual = (&mp.bias - &proj.bias).norm();
    if nj == 2 {
        let (ka, kb) = (clusters[0].len() as f64, clusters[1].len() as f64);
        let cr = &fit.cross_coeffs;
        // Bias m(k_B 1; −k_A 1) fitted in least squares: m = (c_A − c_B)/K.
        let m = (fit.bias_coeffs[0] - fit.bias_coeffs[1]) / (ka + kb);
        fit.two_cluster = Some(TwoClusterCoefficients { a: -cr[0][0], b: -cr[0][1], c: -cr[1][0], d: -cr[1][1], m });
    }
    Ok(fit)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankProfile {
    /// Effective rank of the majority column block Z̄[:, A].
    pub majority: usize,
    /// Effective rank of the minority column block Z̄[:, B].
    pub minority: usize,
    /// Regime implied by the rank pattern, if any.
    pub regime: Option<Regime>,
}

/// Block ranks with singular values below `cutoff`·σ_max(Z̄) dropped; a Z̄
/// with σ_max ≤ `cutoff` counts as zero.
pub fn rank_profile(mp: &MeanPrediction, spec: &TwoClusterSpec, cutoff: f64) -> Result<RankProfile> {
    let (ka, kb) = (spec.k_a(), spec.k_b());
    let k = ka + kb;
    if mp.zbar.shape() != (k, k) {
        return Err(dim("rank_profile Zbar", k, mp.zbar.nrows()));
    }
    if !(cutoff > 0.0 && cutoff < 1.0) {
        return Err(invalid(format!("rank cutoff must lie in (0, 1), got {cutoff}")));
    }
    let top = linalg::op_norm(&mp.zbar)?;
    if top <= cutoff {
        return Ok(RankProfile { majority: 0, minority: 0, regime: Some(Regime::Zero) });
    }
    let abs = cutoff * top;
    let majority = linalg::svd(&mp.zbar.columns(0, ka).into_owned())?.rank(0.0, abs);
    let minority = linalg::svd(&mp.zbar.columns(ka, kb).into_owned())?.rank(0.0, abs);
    let regime = match (majority, minority) {
        (0, 0) => Some(Regime::Zero),
        (_, 0) => Some(Regime::MajorityOnly),
        (_, 1) => Some(Regime::MinorityCollapsed),
        (_, r) if r == kb => Some(Regime::Interior),
        _ => None,
    };
    Ok(RankProfile { majority, minority, regime })
}

/// How λ_b scales with N along an asymptotic sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LambdaBRule {
    Constant {
        value: f64,
    },
    Infinite,
    /// λ_b = scale·N^exponent.
    PowerLaw {
        scale: f64,
        exponent: f64,
    },
}

impl LambdaBRule {
    pub fn at(&self, n: f64) -> f64 {
        match *self {
            LambdaBRule::Constant { value } => value,
            LambdaBRule::Infinite => f64::INFINITY,
            LambdaBRule::PowerLaw { scale, exponent } => scale * n.powf(exponent),
        }
    }

    /// λ_b⁻¹ must grow slower than √N log N; exponents below −1/2 break that.
    pub fn validate(&self) -> Result<()> {
        match *self {
            LambdaBRule::Constant { value } if !(value > 0.0 && value.is_finite()) => {
                Err(invalid(format!("constant lambda_b must be positive, got {value}")))
            }
            LambdaBRule::PowerLaw { scale, exponent } if !(scale > 0.0 && scale.is_finite()) || exponent < -0.5 => Err(
                invalid(format!("power-law lambda_b needs scale > 0 and exponent >= -0.5, got {scale}, {exponent}")),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticRow {
    pub n: f64,
    pub n_a: f64,
    pub n_b: f64,
    pub lambda_b: f64,
    /// (b/c, a/c, d/b).
    pub ratios: [f64; 3],
    pub max_dev: f64,
    /// max_dev · log N.
    pub log_product: f64,
    pub etf_dev_z: f64,
    /// Same deviation for the balanced-split mean features H̄.
    pub etf_dev_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedPoint {
    pub n: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticSweep {
    pub rows: Vec<AsymptoticRow>,
    pub skipped: Vec<SkippedPoint>,
}

/// Case (a) along N with Nλ_Z = `lambda` and n_A/n_B = `r` held fixed, so
/// n_B = N/(k_A r + k_B) need not be an integer.
pub fn asymptotic_sweep(
    k_a: usize,
    k_b: usize,
    r: f64,
    lambda: f64,
    rule: LambdaBRule,
    n_grid: &[f64],
) -> Result<AsymptoticSweep> {
    if k_a < 2 || k_b < 2 {
        return Err(invalid("asymptotic_sweep needs k_A, k_B >= 2"));
    }
    if !(r > 1.0 && r.is_finite()) {
        return Err(invalid(format!("imbalance ratio must exceed 1, got {r}")));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(invalid(format!("N*lambda_Z must be positive, got {lambda}")));
    }
    rule.validate()?;
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for &n in n_grid {
        if !(n > 0.0 && n.is_finite()) {
            skipped.push(SkippedPoint { n, reason: "N must be positive and finite".into() });
            continue;
        }
        let n_b = n / (k_a as f64 * r + k_b as f64);
        if lambda >= n_b.sqrt() {
            skipped.push(SkippedPoint { n, reason: format!("N*lambda_Z = {lambda} >= sqrt(n_B) = {}", n_b.sqrt()) });
            continue;
        }
        let spec = TwoClusterSpec::from_real(k_a, k_b, r * n_b, n_b)?;
        let lambda_b = rule.at(n);
        let p = solve_case_a(&spec, lambda / spec.total(), lambda_b)?;
        let ratios = [p.b / p.c, p.a / p.c, p.d / p.b];
        let max_dev = ratios.iter().map(|q| (q - 1.0).abs()).fold(0.0, f64::max);
        let mp = build_block_matrix(&p, &spec);
        let etf_dev_z = etf_deviation(&mp.zbar)?;
        let etf_dev_h = etf_deviation(&mean_features(&mp.zbar, &spec.weights())?)?;
        rows.push(AsymptoticRow {
            n: spec.total(),
            n_a: spec.n_a(),
            n_b,
            lambda_b,
            ratios,
            max_dev,
            log_product: max_dev * n.ln(),
            etf_dev_z,
            etf_dev_h,
        });
    }
    Ok(AsymptoticSweep { rows, skipped })
}

/// H̄ = Σ^{1/2}VᵀD^{-1/2} from Z̄D^{1/2} = UΣVᵀ, with real class counts.
fn mean_features(zbar: &DMatrix<f64>, weights: &DVector<f64>) -> Result<DMatrix<f64>> {
    let sq = weights.map(f64::sqrt);
    let s = linalg::svd(&(zbar * DMatrix::from_diagonal(&sq)))?;
    let d = s.rank(1e-12, 0.0);
    let root = DMatrix::from_diagonal(&s.sigma.rows(0, d).map(f64::sqrt));
    Ok((root * s.v_t.rows(0, d)) * DMatrix::from_diagonal(&sq.map(|x| 1.0 / x)))
}

/// Least-squares slope of log(max_dev) against log(log N); None with fewer
/// than two usable rows.
pub fn convergence_slope(rows: &[AsymptoticRow]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.max_dev > 0.0 && r.n > std::f64::consts::E)
        .map(|r| (r.n.ln().ln(), r.max_dev.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let len = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / len;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / len;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}
