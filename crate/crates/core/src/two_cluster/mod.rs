//! Semi-analytic minimizers for two clusters: k_A majority classes with n_A
//! samples each and k_B minority classes with n_B < n_A samples each.
//!
//! The optimum has the block form Z̄ = B(a, b, c, d) (columns are classes,
//! majority first)
//!
//! ```text
//!   [ a(k_A I − J) + c k_B I    −b J                   ]
//!   [ −c J                      d(k_B I − J) + b k_A I ]
//! ```
//!
//! with bias b = m (k_B 1_{k_A}; −k_A 1_{k_B}). Which of four regimes holds is
//! decided by ν = Nλ_Z against √n_B and √n_A, and in between by the sign of ξ.

mod cases;
mod scalar;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::logsumexp;
use crate::model::{MeanPrediction, ProblemSpec};

pub use cases::{classify_and_solve, solve_case_a, solve_case_b, solve_case_c, solve_case_d, Boundary, Classified};
pub use scalar::{
    eta, f2_fn, g1, g2, h_fn, m_of_t, t_star, x1_case_a, x1_case_b, x1_case_b_limit, x2_fn, x_case_c, xi, xi_bias_free,
};

/// ξ values within this distance of zero are treated as the (b)/(c) boundary.
pub const XI_BOUNDARY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    /// Minority block of full rank k_B.
    Interior,
    /// Minority columns coincide: k_A b + k_B d = 0.
    MinorityCollapsed,
    /// Only the majority block survives: b = c = d = 0.
    MajorityOnly,
    /// Z̄ = 0.
    Zero,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Interior => "Interior",
            Regime::MinorityCollapsed => "MinorityCollapsed",
            Regime::MajorityOnly => "MajorityOnly",
            Regime::Zero => "Zero",
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Two-cluster geometry. Sample counts are real so that asymptotic sweeps can
/// use N/(k_A r + k_B) directly; [`TwoClusterSpec::to_problem_spec`] needs
/// integral counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoClusterSpec {
    k_a: f64,
    k_b: f64,
    n_a: f64,
    n_b: f64,
}

impl TwoClusterSpec {
    pub fn new(k_a: usize, k_b: usize, n_a: usize, n_b: usize) -> Result<Self> {
        Self::from_real(k_a, k_b, n_a as f64, n_b as f64)
    }

    pub fn from_real(k_a: usize, k_b: usize, n_a: f64, n_b: f64) -> Result<Self> {
        if k_a < 2 || k_b < 2 {
            return Err(invalid(format!("need k_A >= 2 and k_B >= 2, got {k_a}, {k_b}")));
        }
        if !(n_b >= 1.0 && n_a > n_b && n_a.is_finite()) {
            return Err(invalid(format!("need n_A > n_B >= 1, got n_A = {n_a}, n_B = {n_b}")));
        }
        Ok(Self { k_a: k_a as f64, k_b: k_b as f64, n_a, n_b })
    }

    pub fn k_a(&self) -> usize {
        self.k_a as usize
    }

    pub fn k_b(&self) -> usize {
        self.k_b as usize
    }

    pub fn n_a(&self) -> f64 {
        self.n_a
    }

    pub fn n_b(&self) -> f64 {
        self.n_b
    }

    pub fn k(&self) -> f64 {
        self.k_a + self.k_b
    }

    pub fn num_classes(&self) -> usize {
        self.k_a() + self.k_b()
    }

    pub fn total(&self) -> f64 {
        self.k_a * self.n_a + self.k_b * self.n_b
    }

    pub fn ratio(&self) -> f64 {
        self.n_a / self.n_b
    }

    /// Per-class sample counts, majority first.
    pub fn weights(&self) -> DVector<f64> {
        DVector::from_fn(self.num_classes(), |i, _| if i < self.k_a() { self.n_a } else { self.n_b })
    }

    pub fn to_problem_spec(&self) -> Result<ProblemSpec> {
        if self.n_a.fract() != 0.0 || self.n_b.fract() != 0.0 {
            return Err(invalid("sample counts must be integers to build a ProblemSpec"));
        }
        let mut sizes = vec![self.n_a as usize; self.k_a()];
        sizes.extend(std::iter::repeat_n(self.n_b as usize, self.k_b()));
        ProblemSpec::new(&sizes)
    }

    /// Recognizes a spec with exactly two clusters, each of at least two classes.
    pub fn from_problem_spec(spec: &ProblemSpec) -> Option<Self> {
        match spec.clusters() {
            [a, b] => Self::new(a.len(), b.len(), a.size, b.size).ok(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    /// Bias scale.
    pub m: f64,
    /// Minority-block certificate scale 1/(Nλ_Z) (regimes past minority collapse).
    pub alpha: Option<f64>,
    /// Majority-only certificate scale.
    pub tau: Option<f64>,
    /// Root of the reduced scalar equation (b/c in the first two regimes).
    pub t: Option<f64>,
    pub regime: Regime,
}

impl BlockParams {
    pub fn zero(m: f64, alpha: f64) -> Self {
        Self { a: 0.0, b: 0.0, c: 0.0, d: 0.0, m, alpha: Some(alpha), tau: None, t: None, regime: Regime::Zero }
    }
}

/// Assembles B(a, b, c, d) and the bias vector.
pub fn build_block_matrix(params: &BlockParams, spec: &TwoClusterSpec) -> MeanPrediction {
    let (ka, kb) = (spec.k_a(), spec.k_b());
    let k = ka + kb;
    let BlockParams { a, b, c, d, m, .. } = *params;
    let zbar = DMatrix::from_fn(k, k, |i, j| {
        let same = if i == j { 1.0 } else { 0.0 };
        match (i < ka, j < ka) {
            (true, true) => a * (spec.k_a * same - 1.0) + c * spec.k_b * same,
            (true, false) => -b,
            (false, true) => -c,
            (false, false) => d * (spec.k_b * same - 1.0) + b * spec.k_a * same,
        }
    });
    let bias = DVector::from_fn(k, |i, _| if i < ka { m * spec.k_b } else { -m * spec.k_a });
    MeanPrediction { zbar, bias }
}

/// Reduced objective with real-valued class counts.
pub fn objective(mp: &MeanPrediction, spec: &TwoClusterSpec, lambda_z: f64, lambda_b: f64) -> Result<f64> {
    let n = spec.weights();
    let k = spec.num_classes();
    let mut loss = 0.0;
    for c in 0..k {
        let col = mp.zbar.column(c) + &mp.bias;
        loss += n[c] * (logsumexp(col.iter().cloned()) - col[c]);
    }
    let v = &mp.zbar * DMatrix::from_diagonal(&n.map(f64::sqrt));
    let nuc = if lambda_z > 0.0 { lambda_z * crate::linalg::nuclear_norm(&v)? } else { 0.0 };
    let ridge = if lambda_b.is_infinite() { 0.0 } else { 0.5 * lambda_b * mp.bias.norm_squared() };
    Ok(loss / spec.total() + nuc + ridge)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_block_matrix() {
        let spec = TwoClusterSpec::new(3, 2, 10, 5).unwrap();
        let p = BlockParams {
            a: 0.7,
            b: 0.7,
            c: 0.7,
            d: 0.7,
            m: 0.0,
            alpha: None,
            tau: None,
            t: None,
            regime: Regime::Interior,
        };
        let mp = build_block_matrix(&p, &spec);
        let want = (DMatrix::<f64>::identity(5, 5) * 5.0 - DMatrix::from_element(5, 5, 1.0)) * 0.7;
        assert!((mp.zbar - want).norm() < 1e-14);
    }

    #[test]
    fn block_matrix_columns_are_centered() {
        let spec = TwoClusterSpec::new(4, 3, 10, 5).unwrap();
        let p = BlockParams {
            a: 0.3,
            b: -1.2,
            c: 2.0,
            d: 0.1,
            m: 0.4,
            alpha: None,
            tau: None,
            t: None,
            regime: Regime::Interior,
        };
        let mp = build_block_matrix(&p, &spec);
        for col in mp.zbar.column_iter() {
            assert!(col.sum().abs() < 1e-14);
        }
        assert!(mp.bias.sum().abs() < 1e-14);
    }

    #[test]
    fn spec_validation() {
        assert!(TwoClusterSpec::new(1, 3, 10, 5).is_err());
        assert!(TwoClusterSpec::new(2, 3, 5, 5).is_err());
        let s = TwoClusterSpec::new(3, 7, 500, 100).unwrap();
        assert_eq!(s.total(), 2200.0);
        let ps = s.to_problem_spec().unwrap();
        assert_eq!(TwoClusterSpec::from_problem_spec(&ps), Some(s));
        assert!(TwoClusterSpec::from_real(2, 2, 10.5, 3.0).unwrap().to_problem_spec().is_err());
    }
}
