//! The five subcommands. Each builds a [`RunOutput`] from a parsed config;
//! [`run_command`] wraps them with config loading, the worker pool, file
//! output and exit codes.

use std::path::PathBuf;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::diagnostics::{
    asymptotic_sweep, convergence_slope, etf_deviation, fit_block_structure, nc1_metric, rank_profile, RankProfile,
};
use crate::linalg;
use crate::model::{kkt_residual, reduced_objective, MeanPrediction, RegParams};
use crate::solver::{solve_full, solve_reduced, SolverOptions};
use crate::thresholds::{collapse_lambdas, collapse_n_a, lambda_star_bias_free, minority_collapse_ratio};
use crate::two_cluster::{classify_and_solve, BlockParams, Regime, TwoClusterSpec};
use crate::validate::{self, relative_distance, Suite};

use super::config::{Axis, Problem, Route, RunConfig, SweepConfig};
use super::output::{finite_or_none, write_run, Cell, Csv, Diagnostics, KktSummary, Metadata, ResultRecord, RunOutput};
use super::{exit, CliError, ConfigError, SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Sweep,
    Threshold,
    Asymptotic,
    Validate,
}

impl Command {
    pub fn as_str(&self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Sweep => "sweep",
            Command::Threshold => "threshold",
            Command::Asymptotic => "asymptotic",
            Command::Validate => "validate",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct CommandOptions {
    pub config_path: PathBuf,
    /// Overrides `[output] dir`; falls back to ./out.
    pub out: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism.
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    /// Forces λ_b = +∞.
    pub bias_free: bool,
    pub inject_fault: Option<Suite>,
}

/// What a command produced, before anything is written.
pub struct Outcome {
    pub output: RunOutput,
    /// Human-readable text for stdout.
    pub report: String,
    /// Warnings for stderr.
    pub warnings: Vec<String>,
    /// False only for a failed validation.
    pub passed: bool,
}

/// Loads the config, runs the command on a pool of `workers` threads, writes
/// the output files and returns the process exit code.
pub fn run_command(cmd: Command, opts: &CommandOptions) -> i32 {
    match run_inner(cmd, opts) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run_inner(cmd: Command, opts: &CommandOptions) -> Result<i32, CliError> {
    let config = RunConfig::load(&opts.config_path)?;
    let workers = match opts.workers {
        Some(0) => return Err(CliError::Usage("--workers must be positive".into())),
        Some(w) => w,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {workers} workers: {e}")))?;
    let outcome = pool.install(|| execute(cmd, &config, opts))?;
    let mut out = outcome.output;
    out.metadata.workers = workers;
    let dir = opts.out.clone().or_else(|| config.output.dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    write_run(&dir, &out, config.output.csv, config.output.json)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    print!("{}", outcome.report);
    Ok(if outcome.passed { exit::OK } else { exit::VALIDATION })
}

/// Runs a command on the current rayon pool without touching the filesystem.
pub fn execute(cmd: Command, config: &RunConfig, opts: &CommandOptions) -> Result<Outcome, CliError> {
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64());
    let clock = Instant::now();
    let mut outcome = match cmd {
        Command::Solve => cmd_solve(config, opts),
        Command::Sweep => cmd_sweep(config, opts),
        Command::Threshold => cmd_threshold(config, opts),
        Command::Asymptotic => cmd_asymptotic(config),
        Command::Validate => cmd_validate(config, opts),
    }?;
    let m = &mut outcome.output.metadata;
    m.command = cmd.as_str().to_string();
    m.config = opts.config_path.clone();
    m.started_unix_s = started;
    m.wall_time_s = clock.elapsed().as_secs_f64();
    m.workers = rayon::current_num_threads();
    Ok(outcome)
}

fn metadata() -> Metadata {
    Metadata {
        command: String::new(),
        version: env!("CARGO_PKG_VERSION"),
        config: PathBuf::new(),
        started_unix_s: 0.0,
        wall_time_s: 0.0,
        workers: 0,
        seed: None,
        timings_s: Vec::new(),
    }
}

fn two_cluster_of(problem: &Problem, what: &str) -> Result<TwoClusterSpec, CliError> {
    problem.two.ok_or_else(|| {
        CliError::Config(ConfigError::Invalid {
            key: "problem".into(),
            message: format!("{what} needs exactly two clusters of at least two classes each"),
        })
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
struct Comparison {
    zbar_relative_distance: f64,
    bias_distance: f64,
    objective_gap: f64,
}

fn summarize(
    route: &'static str,
    mp: &MeanPrediction,
    problem: &Problem,
    reg: &RegParams,
    rank_cutoff: f64,
) -> Result<ResultRecord, CliError> {
    let spec = &problem.spec;
    let kkt = kkt_residual(mp, spec, reg)?;
    let objective = reduced_objective(mp, spec, reg)?;
    let fit = fit_block_structure(mp, spec)?;
    let ranks = problem.two.map(|t| rank_profile(mp, &t, rank_cutoff)).transpose()?;
    let k = spec.num_classes();
    Ok(ResultRecord {
        schema_version: SCHEMA_VERSION,
        route,
        class_sizes: spec.class_sizes().to_vec(),
        lambda_z: reg.lambda_z(),
        lambda_b: finite_or_none(reg.lambda_b()),
        regime: ranks.and_then(|r| r.regime),
        block: fit.two_cluster,
        analytic_params: None,
        objective,
        kkt: KktSummary::from(&kkt),
        diagnostics: Diagnostics {
            nc1: None,
            within_class_spread: None,
            etf_deviation: etf_deviation(&mp.zbar).ok(),
            rank_profile: ranks,
            block_fit_residual: Some(fit.residual),
            column_sum_max: mp.zbar.row_sum().abs().max(),
            bias_sum: mp.bias.sum(),
        },
        iterations: None,
        converged: None,
        zbar: (0..k).map(|i| mp.zbar.row(i).iter().cloned().collect()).collect(),
        bias: mp.bias.iter().cloned().collect(),
    })
}

fn solve_csv(records: &[ResultRecord]) -> Csv {
    let mut csv = Csv::new(&[
        "route",
        "regime",
        "a",
        "b",
        "c",
        "d",
        "m",
        "objective",
        "stationarity",
        "feasibility_margin",
        "bias_residual",
        "kkt_rank",
        "majority_rank",
        "minority_rank",
        "etf_deviation",
        "block_fit_residual",
        "nc1",
        "iterations",
        "converged",
    ]);
    for r in records {
        let b = r.block.as_ref();
        let rp = r.diagnostics.rank_profile.as_ref();
        csv.push(vec![
            r.route.into(),
            r.regime.map(|g| g.as_str()).into(),
            b.map(|b| b.a).into(),
            b.map(|b| b.b).into(),
            b.map(|b| b.c).into(),
            b.map(|b| b.d).into(),
            b.map(|b| b.m).into(),
            r.objective.into(),
            r.kkt.stationarity.into(),
            r.kkt.feasibility_margin.into(),
            r.kkt.bias_residual.into(),
            r.kkt.rank.into(),
            rp.map(|p| p.majority).into(),
            rp.map(|p| p.minority).into(),
            r.diagnostics.etf_deviation.into(),
            r.diagnostics.block_fit_residual.into(),
            r.diagnostics.nc1.into(),
            r.iterations.into(),
            r.converged.map(|c| if c { "true" } else { "false" }).into(),
        ]);
    }
    csv
}

fn cmd_solve(config: &RunConfig, opts: &CommandOptions) -> Result<Outcome, CliError> {
    let problem = config.problem()?;
    let reg = config.reg(opts.bias_free)?;
    let solver = config.solver.options()?;
    let cutoff = config.solver.rank_cutoff()?;
    let route = config.solver.route.unwrap_or_default();
    let mut warnings = Vec::new();
    let mut meta = metadata();
    let mut records = Vec::new();

    let analytic = match (route.analytic(), problem.two) {
        (true, Some(two)) => {
            let t = Instant::now();
            let c = classify_and_solve(&two, reg.lambda_z(), reg.lambda_b())?;
            let mut r = summarize("analytic", &c.prediction, &problem, &reg, cutoff)?;
            r.regime = Some(c.params.regime);
            r.analytic_params = Some(c.params);
            if let Some(b) = &c.boundary {
                warnings.push(format!(
                    "xi = {:e} is on the regime boundary; kept the lower-objective case (gap {:e})",
                    b.xi,
                    b.alternative_objective - b.objective
                ));
            }
            meta.timings_s.push(("analytic".into(), t.elapsed().as_secs_f64()));
            records.push(r);
            Some(c.prediction)
        }
        (true, None) if route == Route::Analytic => {
            return Err(CliError::Usage(
                "the analytic route needs a two-cluster problem; use route = \"numeric\"".into(),
            ));
        }
        (true, None) => {
            warnings.push(format!(
                "{} clusters: analytic route unavailable, running numeric only",
                problem.spec.clusters().len()
            ));
            None
        }
        (false, _) => None,
    };

    let mut comparison = None;
    if route.numeric() || problem.two.is_none() {
        let t = Instant::now();
        let sol = solve_reduced(&problem.spec, &reg, &solver)?;
        let mut r = summarize("numeric", &sol.mean_prediction, &problem, &reg, cutoff)?;
        r.iterations = Some(sol.iterations);
        r.converged = Some(sol.converged);
        if !sol.converged {
            warnings.push(format!("numeric route stopped after {} iterations without meeting kkt_tol", sol.iterations));
        }
        if let Some(a) = &analytic {
            let obj_a = records[0].objective;
            comparison = Some(Comparison {
                zbar_relative_distance: relative_distance(&a.zbar, &sol.mean_prediction.zbar),
                bias_distance: (&a.bias - &sol.mean_prediction.bias).norm(),
                objective_gap: sol.objective - obj_a,
            });
        }
        meta.timings_s.push(("numeric".into(), t.elapsed().as_secs_f64()));
        records.push(r);
    }

    if config.solver.full {
        let t = Instant::now();
        let (fp, sol) = solve_full(&problem.spec, &reg, &solver)?;
        let mut r = summarize("full", &sol.mean_prediction, &problem, &reg, cutoff)?;
        r.iterations = Some(sol.iterations);
        r.converged = Some(sol.converged);
        r.diagnostics.within_class_spread = Some(fp.within_class_spread(&problem.spec));
        r.diagnostics.nc1 = Some(nc1_metric(&balanced_features(&fp.z)?, &problem.spec.labels())?);
        meta.timings_s.push(("full".into(), t.elapsed().as_secs_f64()));
        records.push(r);
    }

    let mut report = String::new();
    for r in &records {
        report.push_str(&format!(
            "{:<9} regime={:<18} objective={:.12e} stationarity={:.3e} margin={:.3e}\n",
            r.route,
            r.regime.map_or("-", |g| g.as_str()),
            r.objective,
            r.kkt.stationarity,
            r.kkt.feasibility_margin
        ));
    }
    if let Some(c) = &comparison {
        report
            .push_str(&format!("analytic vs numeric: relative Frobenius distance {:.3e}\n", c.zbar_relative_distance));
    }
    let summary = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "solve",
        "records": records,
        "comparison": comparison,
    });
    Ok(Outcome {
        output: RunOutput { csv: Some(solve_csv(&records)), summary, metadata: meta },
        report,
        warnings,
        passed: true,
    })
}

/// Features H with Z = WᵀH from the balanced split of Z = UΣVᵀ: H = Σ^{1/2}Vᵀ.
fn balanced_features(z: &DMatrix<f64>) -> Result<DMatrix<f64>, CliError> {
    let s = linalg::svd(z)?;
    let d = s.rank(1e-12, 0.0).max(1);
    let root = DMatrix::from_diagonal(&s.sigma.rows(0, d).map(f64::sqrt));
    Ok(root * s.v_t.rows(0, d))
}

/// One sweep grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
struct SweepPoint {
    value: f64,
    regime: Option<Regime>,
    params: Option<BlockParams>,
    xi: Option<f64>,
    ranks: Option<RankProfile>,
    /// Effective rank of Z̄D^{1/2} when no two-cluster structure is known.
    rank: Option<usize>,
    etf_deviation: Option<f64>,
    objective: Option<f64>,
    stationarity: Option<f64>,
    numeric_distance: Option<f64>,
    numeric_converged: Option<bool>,
}

impl SweepPoint {
    /// The rank pattern transitions are detected on.
    fn rank_key(&self) -> (usize, usize) {
        match (self.ranks, self.rank) {
            (Some(r), _) => (r.majority, r.minority),
            (None, Some(r)) => (r, 0),
            (None, None) => (0, 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct Transition {
    /// "rank" for block-rank changes, "regime" for changes of the analytic case.
    kind: &'static str,
    from: String,
    to: String,
    lo: f64,
    hi: f64,
    estimate: f64,
    /// n_A sweeps: first integer n_A showing the new pattern.
    integer_crossing: Option<u64>,
}

struct SweepCtx<'a> {
    axis: Axis,
    problem: &'a Problem,
    reg: RegParams,
    solver: SolverOptions,
    route: Route,
    cutoff: f64,
}

impl SweepCtx<'_> {
    /// Two-cluster spec and (λ_Z, λ_b) at an axis value; n_A and N sweeps keep
    /// the other counts (for N, the ratio n_A/n_B) fixed.
    fn at(&self, v: f64) -> crate::Result<(Option<TwoClusterSpec>, f64, f64)> {
        let (lz, lb) = (self.reg.lambda_z(), self.reg.lambda_b());
        let two = self.problem.two;
        Ok(match self.axis {
            Axis::LambdaZ => (two, v, lb),
            Axis::LambdaB => (two, lz, v),
            Axis::NA => {
                let t = two.expect("checked before the sweep");
                (Some(TwoClusterSpec::from_real(t.k_a(), t.k_b(), v, t.n_b())?), lz, lb)
            }
            Axis::N => {
                let t = two.expect("checked before the sweep");
                let n_b = v / (t.k_a() as f64 * t.ratio() + t.k_b() as f64);
                (Some(TwoClusterSpec::from_real(t.k_a(), t.k_b(), t.ratio() * n_b, n_b)?), lz, lb)
            }
        })
    }

    fn eval(&self, v: f64, full: bool) -> crate::Result<SweepPoint> {
        let (two, lz, lb) = self.at(v)?;
        let mut p = SweepPoint {
            value: v,
            regime: None,
            params: None,
            xi: None,
            ranks: None,
            rank: None,
            etf_deviation: None,
            objective: None,
            stationarity: None,
            numeric_distance: None,
            numeric_converged: None,
        };
        let mut analytic = None;
        if self.route.analytic() {
            let t = two.expect("analytic sweeps need two clusters");
            let c = classify_and_solve(&t, lz, lb)?;
            p.regime = Some(c.params.regime);
            p.params = Some(c.params);
            p.xi = c.xi;
            p.ranks = Some(rank_profile(&c.prediction, &t, self.cutoff)?);
            if full {
                p.etf_deviation = etf_deviation(&c.prediction.zbar).ok();
                p.objective = Some(crate::two_cluster::objective(&c.prediction, &t, lz, lb)?);
            }
            analytic = Some(c.prediction);
        }
        let numeric_spec = match two {
            Some(t) => t.to_problem_spec().ok(),
            None => Some(self.problem.spec.clone()),
        };
        let run_numeric = self.route.numeric() && (full || analytic.is_none());
        if let (true, Some(spec)) = (run_numeric, numeric_spec) {
            let reg = RegParams::new(lz, lb)?;
            let sol = solve_reduced(&spec, &reg, &self.solver)?;
            let mp = &sol.mean_prediction;
            match (&analytic, two) {
                (Some(a), _) => p.numeric_distance = Some(relative_distance(&a.zbar, &mp.zbar)),
                (None, Some(t)) => p.ranks = Some(rank_profile(mp, &t, self.cutoff)?),
                (None, None) => {
                    let sq = DMatrix::from_diagonal(&spec.sqrt_weights());
                    p.rank = Some(linalg::effective_rank(&(&mp.zbar * sq), self.cutoff, self.cutoff)?);
                }
            }
            if analytic.is_none() {
                p.etf_deviation = etf_deviation(&mp.zbar).ok();
                p.objective = Some(sol.objective);
                p.stationarity = Some(sol.kkt.stationarity);
            }
            p.numeric_converged = Some(sol.converged);
        }
        Ok(p)
    }

    /// Shrinks [lo, hi] around the change of `key` until its width is at most
    /// `tol`·|hi|.
    fn refine<K: PartialEq>(
        &self,
        mut lo: f64,
        mut hi: f64,
        tol: f64,
        key: impl Fn(&SweepPoint) -> K,
    ) -> crate::Result<(f64, f64)> {
        let left = key(&self.eval(lo, false)?);
        for _ in 0..200 {
            if hi - lo <= tol * hi.abs().max(f64::MIN_POSITIVE) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if key(&self.eval(mid, false)?) == left {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok((lo, hi))
    }
}

fn pattern_name(k: (usize, usize), two: bool) -> String {
    if two {
        format!("ranks({},{})", k.0, k.1)
    } else {
        format!("rank {}", k.0)
    }
}

fn cmd_sweep(config: &RunConfig, opts: &CommandOptions) -> Result<Outcome, CliError> {
    let sweep: &SweepConfig = config.sweep.as_ref().ok_or_else(|| ConfigError::Missing("sweep".into()))?;
    let grid = sweep.grid()?;
    let problem = config.problem()?;
    let reg = config.reg(opts.bias_free)?;
    let axis = sweep.parameter;
    if matches!(axis, Axis::NA | Axis::N) && problem.two.is_none() {
        two_cluster_of(&problem, "an n_A or N sweep")?;
    }
    if axis == Axis::LambdaB && opts.bias_free {
        return Err(CliError::Usage("--bias-free conflicts with a lambda_b sweep".into()));
    }
    if matches!(axis, Axis::LambdaB | Axis::N | Axis::NA) && grid[0] <= 0.0 {
        return Err(ConfigError::Invalid {
            key: "sweep.min".into(),
            message: format!("{} must be positive", axis.as_str()),
        }
        .into());
    }
    let route = match (config.solver.route, problem.two) {
        (Some(r), Some(_)) => r,
        (None, Some(_)) => Route::Analytic,
        (Some(Route::Analytic), None) => {
            return Err(CliError::Usage("the analytic route needs a two-cluster problem".into()));
        }
        (_, None) => Route::Numeric,
    };
    let ctx = SweepCtx {
        axis,
        problem: &problem,
        reg,
        solver: config.solver.options()?,
        route,
        cutoff: config.solver.rank_cutoff()?,
    };
    let mut meta = metadata();
    let t = Instant::now();
    let points: Vec<SweepPoint> = grid.par_iter().map(|&v| ctx.eval(v, true)).collect::<crate::Result<_>>()?;
    meta.timings_s.push(("grid".into(), t.elapsed().as_secs_f64()));

    let t = Instant::now();
    let two = problem.two.is_some();
    let mut transitions = Vec::new();
    for w in points.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if a.rank_key() != b.rank_key() {
            let (lo, hi) = ctx.refine(a.value, b.value, sweep.refine_tol, SweepPoint::rank_key)?;
            let to = ctx.eval(hi, false)?.rank_key();
            let integer_crossing = if axis == Axis::NA {
                let first = lo.floor().max(a.value.ceil());
                let mut found = None;
                for cand in [first, first + 1.0, first + 2.0] {
                    if cand <= b.value && ctx.eval(cand, false)?.rank_key() == to {
                        found = Some(cand as u64);
                        break;
                    }
                }
                found
            } else {
                None
            };
            transitions.push(Transition {
                kind: "rank",
                from: pattern_name(a.rank_key(), two),
                to: pattern_name(to, two),
                lo,
                hi,
                estimate: 0.5 * (lo + hi),
                integer_crossing,
            });
        }
        if let (Some(ra), Some(rb)) = (a.regime, b.regime) {
            if ra != rb {
                let (lo, hi) = ctx.refine(a.value, b.value, sweep.refine_tol, |p| p.regime)?;
                transitions.push(Transition {
                    kind: "regime",
                    from: ra.to_string(),
                    to: ctx.eval(hi, false)?.regime.map_or("-".into(), |r| r.to_string()),
                    lo,
                    hi,
                    estimate: 0.5 * (lo + hi),
                    integer_crossing: None,
                });
            }
        }
    }
    meta.timings_s.push(("refine".into(), t.elapsed().as_secs_f64()));

    let predicted = predicted_thresholds(axis, &problem, &reg)?;
    let mut csv = Csv::new(&[
        axis.as_str(),
        "regime",
        "a",
        "b",
        "c",
        "d",
        "m",
        "majority_rank",
        "minority_rank",
        "etf_deviation",
        "xi",
        "objective",
        "stationarity",
        "numeric_distance",
    ]);
    for p in &points {
        let b = p.params.as_ref();
        let k = p.rank_key();
        csv.push(vec![
            p.value.into(),
            p.regime.map(|r| r.as_str()).into(),
            b.map(|b| b.a).into(),
            b.map(|b| b.b).into(),
            b.map(|b| b.c).into(),
            b.map(|b| b.d).into(),
            b.map(|b| b.m).into(),
            k.0.into(),
            if two { Cell::from(k.1) } else { Cell::Empty },
            p.etf_deviation.into(),
            p.xi.into(),
            p.objective.into(),
            p.stationarity.into(),
            p.numeric_distance.into(),
        ]);
    }
    let mut warnings = Vec::new();
    let unconverged = points.iter().filter(|p| p.numeric_converged == Some(false)).count();
    if unconverged > 0 {
        warnings.push(format!("{unconverged} grid points did not meet kkt_tol"));
    }
    let mut report =
        format!("{} sweep over {} points: {} transitions\n", axis.as_str(), points.len(), transitions.len());
    for t in &transitions {
        report.push_str(&format!(
            "  {:<6} {} -> {} at {} (bracket [{}, {}]){}\n",
            t.kind,
            t.from,
            t.to,
            super::fmt_g(t.estimate),
            super::fmt_g(t.lo),
            super::fmt_g(t.hi),
            t.integer_crossing.map_or(String::new(), |n| format!(", first integer {n}"))
        ));
    }
    let summary = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "sweep",
        "axis": axis.as_str(),
        "route": route,
        "points": points.len(),
        "transitions": transitions,
        "predicted": predicted,
    });
    Ok(Outcome { output: RunOutput { csv: Some(csv), summary, metadata: meta }, report, warnings, passed: true })
}

/// Closed-form transition locations along the sweep axis, when known.
fn predicted_thresholds(axis: Axis, problem: &Problem, reg: &RegParams) -> Result<serde_json::Value, CliError> {
    let Some(two) = problem.two else { return Ok(serde_json::Value::Null) };
    let lz = reg.lambda_z();
    Ok(match axis {
        Axis::LambdaZ => {
            let (lo, hi) = collapse_lambdas(&two);
            let star = if reg.is_bias_free() { Some(lambda_star_bias_free(&two)?) } else { None };
            json!({ "minority": lo, "complete": hi, "lambda_star": star })
        }
        Axis::NA if lz > 0.0 => {
            let (m, c) = collapse_n_a(lz, two.n_b(), two.k_a(), two.k_b())?;
            json!({ "minority": m, "complete": c })
        }
        Axis::N if lz > 0.0 => {
            let s = two.k_a() as f64 * two.ratio() + two.k_b() as f64;
            json!({ "minority": 1.0 / (lz * lz * s), "complete": two.ratio() / (lz * lz * s) })
        }
        _ => serde_json::Value::Null,
    })
}

fn cmd_threshold(config: &RunConfig, opts: &CommandOptions) -> Result<Outcome, CliError> {
    let problem = config.problem()?;
    let two = two_cluster_of(&problem, "threshold")?;
    let (minority, complete) = collapse_lambdas(&two);
    let bias_free = opts.bias_free || config.reg.as_ref().is_some_and(|r| r.lambda_b.0.is_infinite());
    let lambda_star = if bias_free { Some(lambda_star_bias_free(&two)?) } else { None };
    let lz = config.reg.as_ref().map(|r| r.lambda_z);
    let ratio = match lz {
        Some(l) if l > 0.0 => Some(minority_collapse_ratio(l, two.n_b(), two.k_a(), two.k_b())?),
        _ => None,
    };
    let n_a = match lz {
        Some(l) if l > 0.0 => Some(collapse_n_a(l, two.n_b(), two.k_a(), two.k_b())?),
        _ => None,
    };

    let mut csv = Csv::new(&["quantity", "value"]);
    csv.push(vec!["lambda_minority".into(), minority.into()]);
    csv.push(vec!["lambda_complete".into(), complete.into()]);
    if let Some(s) = lambda_star {
        csv.push(vec!["lambda_star".into(), s.into()]);
    }
    if let Some(r) = ratio {
        csv.push(vec!["ratio_threshold".into(), r.ratio.into()]);
        csv.push(vec!["ratio_raw".into(), r.raw.into()]);
        csv.push(vec!["ratio_clamped".into(), (if r.clamped { "true" } else { "false" }).into()]);
    }
    if let Some((m, c)) = n_a {
        csv.push(vec!["n_A_minority".into(), m.into()]);
        csv.push(vec!["n_A_complete".into(), c.into()]);
    }
    let mut report = format!(
        "minority collapse for lambda_Z > {}\ncomplete collapse for lambda_Z >= {}\n",
        super::fmt_g(minority),
        super::fmt_g(complete)
    );
    if let Some(s) = lambda_star {
        report.push_str(&format!("bias-free lambda* = {}\n", super::fmt_g(s)));
    }
    if let Some(r) = ratio {
        report.push_str(&format!(
            "minority collapse once n_A/n_B >= {}{}\n",
            super::fmt_g(r.ratio),
            if r.clamped { " (clamped: collapse at any imbalance)" } else { "" }
        ));
    }
    let summary = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "threshold",
        "spec": { "k_a": two.k_a(), "k_b": two.k_b(), "n_a": two.n_a(), "n_b": two.n_b() },
        "lambda_minority": minority,
        "lambda_complete": complete,
        "lambda_star": lambda_star,
        "ratio": ratio,
        "n_a_crossings": n_a.map(|(m, c)| json!({ "minority": m, "complete": c })),
    });
    Ok(Outcome {
        output: RunOutput { csv: Some(csv), summary, metadata: metadata() },
        report,
        warnings: Vec::new(),
        passed: true,
    })
}

fn cmd_asymptotic(config: &RunConfig) -> Result<Outcome, CliError> {
    let a = config.asymptotic.as_ref().ok_or_else(|| ConfigError::Missing("asymptotic".into()))?;
    if a.n_grid.is_empty() {
        return Err(ConfigError::Invalid { key: "asymptotic.n_grid".into(), message: "empty grid".into() }.into());
    }
    let s = asymptotic_sweep(a.k_a, a.k_b, a.r, a.lambda, a.lambda_b, &a.n_grid)
        .map_err(|e| ConfigError::invalid("asymptotic", e))?;
    let slope = convergence_slope(&s.rows);
    let decreasing = s.rows.windows(2).all(|w| w[1].max_dev < w[0].max_dev);
    let mut csv = Csv::new(&[
        "N",
        "n_A",
        "n_B",
        "lambda_b",
        "b_over_c",
        "a_over_c",
        "d_over_b",
        "max_dev",
        "log_product",
        "etf_dev_z",
        "etf_dev_h",
    ]);
    for r in &s.rows {
        csv.push(vec![
            r.n.into(),
            r.n_a.into(),
            r.n_b.into(),
            r.lambda_b.into(),
            r.ratios[0].into(),
            r.ratios[1].into(),
            r.ratios[2].into(),
            r.max_dev.into(),
            r.log_product.into(),
            r.etf_dev_z.into(),
            r.etf_dev_h.into(),
        ]);
    }
    let mut warnings: Vec<String> = s.skipped.iter().map(|p| format!("skipped N = {}: {}", p.n, p.reason)).collect();
    if slope.is_none() {
        warnings.push("fewer than two usable rows: convergence slope omitted".into());
    }
    let mut report = format!("{} rows, max_dev strictly decreasing: {}\n", s.rows.len(), decreasing);
    if let Some(sl) = slope {
        report.push_str(&format!("slope of log max_dev against log log N: {sl:.4}\n"));
    }
    let summary = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "asymptotic",
        "rows": s.rows,
        "skipped": s.skipped,
        "slope": slope,
        "strictly_decreasing": decreasing,
    });
    Ok(Outcome { output: RunOutput { csv: Some(csv), summary, metadata: metadata() }, report, warnings, passed: true })
}

fn cmd_validate(config: &RunConfig, opts: &CommandOptions) -> Result<Outcome, CliError> {
    let mut vo = config.validate.clone().unwrap_or_default().options(opts.seed);
    vo.inject_fault = opts.inject_fault;
    let report = validate::run(&vo)?;
    let mut csv = Csv::new(&["suite", "instances", "failures", "worst", "criterion", "status"]);
    for s in &report.suites {
        csv.push(vec![
            s.suite.as_str().into(),
            s.instances.into(),
            s.failures.into(),
            s.worst.into(),
            s.criterion.as_str().into(),
            (if s.passed { "PASS" } else { "FAIL" }).into(),
        ]);
    }
    let mut meta = metadata();
    meta.seed = Some(vo.seed);
    let passed = report.passed();
    let summary = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "validate",
        "seed": vo.seed,
        "passed": passed,
        "suites": report.suites,
    });
    let warnings = if passed {
        Vec::new()
    } else {
        let names: Vec<&str> = report.failed_suites().iter().map(|s| s.as_str()).collect();
        vec![format!("failed suites: {}", names.join(", "))]
    };
    Ok(Outcome {
        output: RunOutput { csv: Some(csv), summary, metadata: meta },
        report: report.table(),
        warnings,
        passed,
    })
}
