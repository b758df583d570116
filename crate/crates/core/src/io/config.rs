//! Run configuration. TOML by default, JSON when the file ends in `.json`.
//! Unknown keys are rejected so typos surface as errors naming the key.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::diagnostics::LambdaBRule;
use crate::model::{ProblemSpec, RegParams};
use crate::solver::SolverOptions;
use crate::two_cluster::TwoClusterSpec;
use crate::validate::ValidateOptions;

use super::ConfigError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: Option<ProblemConfig>,
    pub reg: Option<RegConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    pub sweep: Option<SweepConfig>,
    pub asymptotic: Option<AsymptoticConfig>,
    #[serde(default)]
    pub output: OutputConfig,
    pub validate: Option<ValidateConfig>,
}

/// Either explicit per-class sizes or a two-cluster description.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub class_sizes: Option<Vec<usize>>,
    #[serde(alias = "k_A")]
    pub k_a: Option<usize>,
    #[serde(alias = "k_B")]
    pub k_b: Option<usize>,
    #[serde(alias = "n_A")]
    pub n_a: Option<usize>,
    #[serde(alias = "n_B")]
    pub n_b: Option<usize>,
}

/// The resolved problem: a two-cluster spec whenever the sizes take exactly
/// two distinct values with at least two classes each.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub spec: ProblemSpec,
    pub two: Option<TwoClusterSpec>,
}

impl ProblemConfig {
    pub fn resolve(&self) -> Result<Problem, ConfigError> {
        let two_keys = [self.k_a, self.k_b, self.n_a, self.n_b];
        match (&self.class_sizes, two_keys) {
            (Some(sizes), [None, None, None, None]) => {
                let spec = ProblemSpec::new(sizes).map_err(|e| ConfigError::invalid("problem.class_sizes", e))?;
                let two = TwoClusterSpec::from_problem_spec(&spec);
                Ok(Problem { spec, two })
            }
            (None, [Some(ka), Some(kb), Some(na), Some(nb)]) => {
                let two = TwoClusterSpec::new(ka, kb, na, nb).map_err(|e| ConfigError::invalid("problem", e))?;
                let spec = two.to_problem_spec().map_err(|e| ConfigError::invalid("problem", e))?;
                Ok(Problem { spec, two: Some(two) })
            }
            (Some(_), _) => Err(ConfigError::Invalid {
                key: "problem".into(),
                message: "give either class_sizes or k_a/k_b/n_a/n_b, not both".into(),
            }),
            (None, _) => Err(ConfigError::Invalid {
                key: "problem".into(),
                message: "needs class_sizes or all of k_a, k_b, n_a, n_b".into(),
            }),
        }
    }
}

/// A positive real or `"inf"` for the bias-free model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaB(pub f64);

impl Serialize for LambdaB {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for LambdaB {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = LambdaB;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a positive number or \"inf\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<LambdaB, E> {
                Ok(LambdaB(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<LambdaB, E> {
                Ok(LambdaB(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<LambdaB, E> {
                Ok(LambdaB(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<LambdaB, E> {
                match v.to_ascii_lowercase().as_str() {
                    "inf" | "+inf" | "infinity" => Ok(LambdaB(f64::INFINITY)),
                    _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegConfig {
    #[serde(alias = "lambda_Z")]
    pub lambda_z: f64,
    pub lambda_b: LambdaB,
    /// Optional per-layer weights; their geometric mean must equal lambda_z.
    #[serde(alias = "lambda_W")]
    pub lambda_w: Option<f64>,
    #[serde(alias = "lambda_H")]
    pub lambda_h: Option<f64>,
}

impl RegConfig {
    pub fn resolve(&self, bias_free: bool) -> Result<RegParams, ConfigError> {
        let lb = if bias_free { f64::INFINITY } else { self.lambda_b.0 };
        let reg = RegParams::new(self.lambda_z, lb).map_err(|e| ConfigError::invalid("reg", e))?;
        match (self.lambda_w, self.lambda_h) {
            (None, None) => Ok(reg),
            (Some(w), Some(h)) => reg.with_layer_weights(w, h).map_err(|e| ConfigError::invalid("reg.lambda_w", e)),
            _ => Err(ConfigError::Invalid {
                key: "reg.lambda_w".into(),
                message: "lambda_w and lambda_h must be given together".into(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Analytic,
    Numeric,
    #[default]
    Both,
}

impl Route {
    pub fn analytic(&self) -> bool {
        matches!(self, Route::Analytic | Route::Both)
    }

    pub fn numeric(&self) -> bool {
        matches!(self, Route::Numeric | Route::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iterations: Option<usize>,
    pub objective_tol: Option<f64>,
    pub kkt_tol: Option<f64>,
    pub initial_step: Option<f64>,
    pub backtracking_factor: Option<f64>,
    pub restart: Option<bool>,
    pub full_cap: Option<usize>,
    /// Which solver routes to run; sweeps default to analytic when unset.
    pub route: Option<Route>,
    /// Also solve over all N sample columns and report NC₁.
    #[serde(default)]
    pub full: bool,
    /// Relative singular-value cutoff for block ranks.
    pub rank_cutoff: Option<f64>,
}

pub const DEFAULT_RANK_CUTOFF: f64 = 1e-6;

impl SolverConfig {
    pub fn options(&self) -> Result<SolverOptions, ConfigError> {
        let d = SolverOptions::default();
        let o = SolverOptions {
            max_iterations: self.max_iterations.unwrap_or(d.max_iterations),
            objective_tol: self.objective_tol.unwrap_or(d.objective_tol),
            kkt_tol: self.kkt_tol.unwrap_or(d.kkt_tol),
            initial_step: self.initial_step.unwrap_or(d.initial_step),
            backtracking_factor: self.backtracking_factor.unwrap_or(d.backtracking_factor),
            restart: self.restart.unwrap_or(d.restart),
            full_cap: self.full_cap.unwrap_or(d.full_cap),
        };
        o.validate().map_err(|e| ConfigError::invalid("solver", e))?;
        Ok(o)
    }

    pub fn rank_cutoff(&self) -> Result<f64, ConfigError> {
        let c = self.rank_cutoff.unwrap_or(DEFAULT_RANK_CUTOFF);
        if !(c > 0.0 && c < 1.0) {
            return Err(ConfigError::Invalid {
                key: "solver.rank_cutoff".into(),
                message: format!("must lie in (0, 1), got {c}"),
            });
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    #[serde(rename = "lambda_Z", alias = "lambda_z")]
    LambdaZ,
    #[serde(rename = "lambda_b")]
    LambdaB,
    #[serde(rename = "n_A", alias = "n_a")]
    NA,
    #[serde(rename = "N")]
    N,
}

impl Axis {
    pub fn as_str(&self) -> &'static str {
        match self {
            Axis::LambdaZ => "lambda_Z",
            Axis::LambdaB => "lambda_b",
            Axis::NA => "n_A",
            Axis::N => "N",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    #[default]
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: Axis,
    pub min: f64,
    pub max: f64,
    pub steps: usize,
    #[serde(default)]
    pub spacing: Spacing,
    /// Relative bracket width at which transition refinement stops.
    #[serde(default = "default_refine_tol")]
    pub refine_tol: f64,
}

fn default_refine_tol() -> f64 {
    1e-6
}

impl SweepConfig {
    pub fn grid(&self) -> Result<Vec<f64>, ConfigError> {
        let bad = |message: String| ConfigError::Invalid { key: "sweep".into(), message };
        if self.steps < 2 {
            return Err(ConfigError::Invalid {
                key: "sweep.steps".into(),
                message: format!("needs at least 2 points, got {}", self.steps),
            });
        }
        if !(self.min.is_finite() && self.max.is_finite() && self.min < self.max) {
            return Err(bad(format!("needs finite min < max, got [{}, {}]", self.min, self.max)));
        }
        if !(self.refine_tol > 0.0 && self.refine_tol < 1.0) {
            return Err(ConfigError::Invalid { key: "sweep.refine_tol".into(), message: "must lie in (0, 1)".into() });
        }
        let last = (self.steps - 1) as f64;
        Ok(match self.spacing {
            Spacing::Linear => (0..self.steps).map(|i| self.min + (self.max - self.min) * i as f64 / last).collect(),
            Spacing::Log => {
                if self.min <= 0.0 {
                    return Err(bad("log spacing needs min > 0".into()));
                }
                let (a, b) = (self.min.ln(), self.max.ln());
                (0..self.steps).map(|i| (a + (b - a) * i as f64 / last).exp()).collect()
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsymptoticConfig {
    #[serde(alias = "k_A")]
    pub k_a: usize,
    #[serde(alias = "k_B")]
    pub k_b: usize,
    /// n_A/n_B.
    pub r: f64,
    /// The constant Nλ_Z.
    pub lambda: f64,
    #[serde(default = "default_lambda_b_rule")]
    pub lambda_b: LambdaBRule,
    #[serde(default = "default_n_grid")]
    pub n_grid: Vec<f64>,
}

fn default_lambda_b_rule() -> LambdaBRule {
    LambdaBRule::Constant { value: 0.01 }
}

pub fn default_n_grid() -> Vec<f64> {
    vec![1e3, 1e4, 1e5, 1e6, 1e7]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Used when --out is not given.
    pub dir: Option<PathBuf>,
    #[serde(default = "yes")]
    pub csv: bool,
    #[serde(default = "yes")]
    pub json: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: None, csv: true, json: true }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateConfig {
    pub seed: Option<u64>,
    pub gradient_instances: Option<usize>,
    pub prox_instances: Option<usize>,
    pub dual_route_instances: Option<usize>,
    pub kkt_instances: Option<usize>,
    pub hessian_instances: Option<usize>,
}

impl ValidateConfig {
    pub fn options(&self, seed_override: Option<u64>) -> ValidateOptions {
        let d = ValidateOptions::default();
        ValidateOptions {
            seed: seed_override.or(self.seed).unwrap_or(d.seed),
            gradient_instances: self.gradient_instances.unwrap_or(d.gradient_instances),
            prox_instances: self.prox_instances.unwrap_or(d.prox_instances),
            dual_route_instances: self.dual_route_instances.unwrap_or(d.dual_route_instances),
            kkt_instances: self.kkt_instances.unwrap_or(d.kkt_instances),
            hessian_instances: self.hessian_instances.unwrap_or(d.hessian_instances),
            inject_fault: None,
        }
    }
}

impl RunConfig {
    pub fn parse_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse { path: None, message: e.to_string() })
    }

    pub fn parse_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse { path: None, message: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.to_path_buf(), message: e.to_string() })?;
        let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let parsed = if json { Self::parse_json(&text) } else { Self::parse_toml(&text) };
        parsed.map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse { path: Some(path.to_path_buf()), message },
            other => other,
        })
    }

    pub fn problem(&self) -> Result<Problem, ConfigError> {
        self.problem.as_ref().ok_or_else(|| ConfigError::Missing("problem".into()))?.resolve()
    }

    pub fn reg(&self, bias_free: bool) -> Result<RegParams, ConfigError> {
        self.reg.as_ref().ok_or_else(|| ConfigError::Missing("reg".into()))?.resolve(bias_free)
    }
}
