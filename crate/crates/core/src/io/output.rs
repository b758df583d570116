//! Result records, the CSV number format, and the per-run output files.
//!
//! Data files (results.csv, summary.json) are pure functions of the config
//! and seed. Anything that varies between runs goes to metadata.json.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::diagnostics::{RankProfile, TwoClusterCoefficients};
use crate::model::KktResidual;
use crate::two_cluster::{BlockParams, Regime};

use super::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// C's `%.12g`: 12 significant digits, trailing zeros dropped, exponent form
/// outside [1e-4, 1e12).
pub fn fmt_g(x: f64) -> String {
    const P: i32 = 12;
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    // The exponent after rounding to P digits decides the style.
    let sci = format!("{:.*e}", (P - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..P).contains(&exp) {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        strip_zeros(&format!("{:.*}", (P - 1 - exp) as usize, x)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Header plus rows; every line ends with '\n'.
#[derive(Debug, Clone, PartialEq)]
pub struct Csv {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

/// One CSV field.
pub enum Cell<'a> {
    Num(f64),
    Int(i64),
    Text(&'a str),
    Empty,
}

impl From<f64> for Cell<'_> {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<usize> for Cell<'_> {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}

impl<'a> From<&'a str> for Cell<'a> {
    fn from(s: &'a str) -> Self {
        Cell::Text(s)
    }
}

impl<'a, T: Into<Cell<'a>>> From<Option<T>> for Cell<'a> {
    fn from(o: Option<T>) -> Self {
        o.map_or(Cell::Empty, Into::into)
    }
}

impl Csv {
    pub fn new(header: &[&'static str]) -> Self {
        Self { header: header.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, cells: Vec<Cell<'_>>) {
        assert_eq!(cells.len(), self.header.len(), "row width must match the header");
        let row = cells
            .into_iter()
            .map(|c| match c {
                Cell::Num(x) => fmt_g(x),
                Cell::Int(i) => i.to_string(),
                Cell::Text(s) => {
                    debug_assert!(!s.contains([',', '"', '\n']));
                    s.to_string()
                }
                Cell::Empty => String::new(),
            })
            .collect();
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktSummary {
    pub stationarity: f64,
    pub feasibility_margin: f64,
    pub bias_residual: f64,
    pub rank: usize,
}

impl From<&KktResidual> for KktSummary {
    fn from(k: &KktResidual) -> Self {
        Self {
            stationarity: k.stationarity,
            feasibility_margin: k.feasibility_margin,
            bias_residual: k.bias_residual,
            rank: k.rank,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct Diagnostics {
    pub nc1: Option<f64>,
    pub within_class_spread: Option<f64>,
    pub etf_deviation: Option<f64>,
    pub rank_profile: Option<RankProfile>,
    pub block_fit_residual: Option<f64>,
    pub column_sum_max: f64,
    pub bias_sum: f64,
}

/// One solver route's answer for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRecord {
    pub schema_version: u32,
    pub route: &'static str,
    pub class_sizes: Vec<usize>,
    pub lambda_z: f64,
    /// None encodes +∞ (bias-free).
    pub lambda_b: Option<f64>,
    /// The analytic case, or for numeric routes the one implied by block ranks.
    pub regime: Option<Regime>,
    /// (a, b, c, d, m) from the block fit; two-cluster problems only.
    pub block: Option<TwoClusterCoefficients>,
    pub analytic_params: Option<BlockParams>,
    pub objective: f64,
    pub kkt: KktSummary,
    pub diagnostics: Diagnostics,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub zbar: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

/// Wall-clock data kept apart from the reproducible outputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metadata {
    pub command: String,
    pub version: &'static str,
    pub config: PathBuf,
    pub started_unix_s: f64,
    pub wall_time_s: f64,
    pub workers: usize,
    pub seed: Option<u64>,
    /// Per-route or per-phase timings.
    pub timings_s: Vec<(String, f64)>,
}

/// `None` for +∞ so JSON stays valid.
pub fn finite_or_none(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

pub struct RunOutput {
    pub csv: Option<Csv>,
    pub summary: serde_json::Value,
    pub metadata: Metadata,
}

pub fn write_run(dir: &Path, out: &RunOutput, csv: bool, json: bool) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Output { path: dir.to_path_buf(), source })?;
    let mut written = Vec::new();
    let mut put = |name: &str, text: String| -> Result<(), CliError> {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|source| CliError::Output { path: path.clone(), source })?;
        written.push(path);
        Ok(())
    };
    if csv {
        if let Some(c) = &out.csv {
            put("results.csv", c.render())?;
        }
    }
    if json {
        put("summary.json", to_json(&out.summary))?;
    }
    put("metadata.json", to_json(&out.metadata))?;
    Ok(written)
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g_format_matches_c() {
        assert_eq!(fmt_g(1.0), "1");
        assert_eq!(fmt_g(0.1), "0.1");
        assert_eq!(fmt_g(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_g(123456789012.0), "123456789012");
        assert_eq!(fmt_g(1234567890123.0), "1.23456789012e+12");
        assert_eq!(fmt_g(0.0001), "0.0001");
        assert_eq!(fmt_g(0.00001234), "1.234e-05");
        assert_eq!(fmt_g(-2.5e-300), "-2.5e-300");
        assert_eq!(fmt_g(0.999999999999951), "1");
        assert_eq!(fmt_g(f64::INFINITY), "inf");
    }

    #[test]
    fn csv_lines_end_with_newline() {
        let mut c = Csv::new(&["x", "name", "opt"]);
        c.push(vec![0.5.into(), "Interior".into(), Cell::Empty]);
        assert_eq!(c.render(), "x,name,opt\n0.5,Interior,\n");
    }
}
