//! Benchmark suite over synthetic markets: every cell of the suite is run
//! on the same seeded instances, per-run records are kept as JSON, and rows
//! aggregate them into summary statistics.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use implied_corr::{
    adjusted_ex_post, economic_implied_corr, equicorrelation, solve_nicm, CorrMatrix, MarketSpec,
    Orthogonalize, SolverConfig,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::estimate::{estimate_factor_correlations, estimate_target_matrix, TargetMode, DEFAULT_THETA_MAX};
use crate::io;
use crate::synth::{generate_synthetic_market, SynthParams, SyntheticMarket};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    Equicorrelation,
    AdjustedExPost,
    Nicm,
    /// NICM with the adjusted ex-post matrix of the target as its target.
    Repair,
    Economic,
}

impl Model {
    pub fn label(self) -> &'static str {
        match self {
            Model::Equicorrelation => "equicorrelation",
            Model::AdjustedExPost => "adjusted-ex-post",
            Model::Nicm => "nicm",
            Model::Repair => "repair",
            Model::Economic => "economic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetSource {
    /// The generating correlation matrix.
    True,
    Historical,
    MeanReverting,
}

impl TargetSource {
    pub fn label(self) -> &'static str {
        match self {
            TargetSource::True => "true",
            TargetSource::Historical => "historical",
            TargetSource::MeanReverting => "mean-reverting",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub model: Model,
    #[serde(default)]
    pub k: Option<usize>,
    pub target: TargetSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub n: usize,
    pub k_true: usize,
    pub crp: f64,
    pub periods: usize,
    pub window: usize,
    pub instances: usize,
    pub seed: u64,
    pub jobs: Option<usize>,
    /// When false, run times are recorded as zero so tables are reproducible.
    pub record_timings: bool,
    pub solver: SolverConfig,
    pub cells: Vec<Cell>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            n: 50,
            k_true: 5,
            crp: 0.05,
            periods: 120,
            window: 24,
            instances: 10,
            seed: 0,
            jobs: None,
            record_timings: true,
            solver: SolverConfig::default(),
            cells: vec![
                Cell { model: Model::Equicorrelation, k: None, target: TargetSource::Historical },
                Cell { model: Model::AdjustedExPost, k: None, target: TargetSource::Historical },
                Cell { model: Model::Nicm, k: Some(1), target: TargetSource::Historical },
                Cell { model: Model::Nicm, k: Some(3), target: TargetSource::Historical },
                Cell { model: Model::Nicm, k: Some(5), target: TargetSource::Historical },
                Cell { model: Model::Repair, k: Some(3), target: TargetSource::MeanReverting },
                Cell { model: Model::Economic, k: None, target: TargetSource::Historical },
            ],
        }
    }
}

/// Outcome of one cell on one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub cell: usize,
    pub model: Model,
    pub k: Option<usize>,
    pub target: TargetSource,
    pub instance: usize,
    pub seed: u64,
    /// Seconds spent in the model call.
    pub time: f64,
    #[serde(rename = "fn")]
    pub fn_value: Option<f64>,
    pub v_tol: Option<f64>,
    pub iterations: Option<usize>,
    pub alpha: Option<f64>,
    pub converged: bool,
    pub fn_trace: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub model: String,
    pub k: Option<usize>,
    pub target: String,
    pub runs: usize,
    pub failures: usize,
    pub t: Stat,
    #[serde(rename = "fn")]
    pub fn_stat: Stat,
    pub v_tol_mean: f64,
    pub v_tol_max: f64,
    pub iter: Stat,
    pub alpha: Option<Stat>,
}

/// Mean and sample standard deviation; the deviation is zero below two values.
pub fn mean_sd(values: &[f64]) -> Stat {
    if values.is_empty() {
        return Stat { mean: f64::NAN, sd: f64::NAN };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Stat { mean, sd }
}

fn seed_for(suite_seed: u64, instance: usize) -> u64 {
    suite_seed.wrapping_add(instance as u64)
}

fn target_for(market: &SyntheticMarket, source: TargetSource, suite: &SuiteConfig, seed: u64) -> CliResult<CorrMatrix> {
    let returns = &market.snapshot.returns.as_ref().expect("synthetic markets carry returns").assets;
    match source {
        TargetSource::True => Ok(market.truth.c_true.clone()),
        TargetSource::Historical => {
            estimate_target_matrix(returns, TargetMode::Historical, suite.window, DEFAULT_THETA_MAX, seed)
        }
        TargetSource::MeanReverting => {
            estimate_target_matrix(returns, TargetMode::MeanReverting, suite.window, DEFAULT_THETA_MAX, seed)
        }
    }
}

struct Measured {
    fn_value: f64,
    v_tol: f64,
    iterations: usize,
    alpha: Option<f64>,
    converged: bool,
    fn_trace: Vec<f64>,
    time: f64,
}

fn closed_form(c: &CorrMatrix, target: &CorrMatrix, spec: &MarketSpec, time: f64) -> CliResult<Measured> {
    let fit = objective_against(c, target);
    let v_tol = implied_corr::corr::check_feasibility(c, spec, 0.0)?.constraint_residuals[0];
    Ok(Measured {
        fn_value: fit,
        v_tol: v_tol.abs(),
        iterations: 0,
        alpha: None,
        converged: true,
        fn_trace: Vec::new(),
        time,
    })
}

/// `|C - A|_F^2` over the off-diagonal entries.
pub fn objective_against(c: &CorrMatrix, target: &CorrMatrix) -> f64 {
    let mut d = c.matrix() - target.matrix();
    d.fill_diagonal(0.0);
    d.norm_squared()
}

fn run_cell(cell: &Cell, market: &SyntheticMarket, suite: &SuiteConfig, seed: u64) -> CliResult<Measured> {
    let spec = &market.snapshot.spec;
    let target = target_for(market, cell.target, suite, seed)?;
    let solver = |a: &CorrMatrix| -> CliResult<Measured> {
        let config = SolverConfig {
            k: cell.k.unwrap_or(suite.solver.k),
            ..suite.solver.clone()
        };
        let r = solve_nicm(a, spec, &config)?;
        Ok(Measured {
            fn_value: r.fn_value,
            v_tol: r.constraint_residual.abs(),
            iterations: r.outer_iterations,
            alpha: None,
            converged: r.converged,
            time: r.wall_time.as_secs_f64(),
            fn_trace: r.fn_trace,
        })
    };
    match cell.model {
        Model::Equicorrelation => {
            let started = Instant::now();
            let e = equicorrelation(spec)?;
            closed_form(&e.matrix, &target, spec, started.elapsed().as_secs_f64())
        }
        Model::AdjustedExPost => {
            let started = Instant::now();
            let a = adjusted_ex_post(&target, spec)?;
            let time = started.elapsed().as_secs_f64();
            let mut m = closed_form(&a.matrix, &target, spec, time)?;
            m.alpha = Some(a.alpha_hat);
            Ok(m)
        }
        Model::Nicm => solver(&target),
        Model::Repair => {
            let started = Instant::now();
            let prior = adjusted_ex_post(&target, spec)?.matrix;
            let pre = started.elapsed().as_secs_f64();
            let mut m = solver(&prior)?;
            m.time += pre;
            Ok(m)
        }
        Model::Economic => {
            let returns = market.snapshot.returns.as_ref().expect("synthetic markets carry returns");
            let started = Instant::now();
            let x_p = estimate_factor_correlations(&returns.assets, &returns.factors, suite.window)?;
            let r = economic_implied_corr(&x_p, spec, Orthogonalize::Auto)?;
            let time = started.elapsed().as_secs_f64();
            let mut m = closed_form(&r.matrix, &target, spec, time)?;
            m.alpha = Some(r.alpha_tilde);
            Ok(m)
        }
    }
}

/// Runs every cell on every instance. Records come back in suite order
/// (cell-major, then instance) regardless of scheduling.
pub fn run_suite(suite: &SuiteConfig) -> CliResult<Vec<RunRecord>> {
    if suite.instances == 0 || suite.cells.is_empty() {
        return Err(CliError::Validation("bench suite needs at least one cell and one instance".into()));
    }
    suite.solver.validate()?;
    let markets: Vec<(u64, CliResult<SyntheticMarket>)> = (0..suite.instances)
        .map(|i| {
            let seed = seed_for(suite.seed, i);
            let params = SynthParams {
                n: suite.n,
                k_true: suite.k_true,
                crp: suite.crp,
                seed,
                periods: suite.periods,
                window: suite.window,
                ..SynthParams::default()
            };
            (seed, generate_synthetic_market(&params))
        })
        .collect();
    if let Some((_, Err(e))) = markets.iter().find(|(_, m)| m.is_err()) {
        return Err(CliError::Validation(format!("synthetic market generation failed: {e}")));
    }
    let tasks: Vec<(usize, usize)> = (0..suite.cells.len())
        .flat_map(|c| (0..suite.instances).map(move |i| (c, i)))
        .collect();
    let run = |&(c, i): &(usize, usize)| {
        let cell = &suite.cells[c];
        let (seed, market) = &markets[i];
        let market = market.as_ref().expect("checked above");
        let outcome = run_cell(cell, market, suite, *seed);
        let mut record = RunRecord {
            cell: c,
            model: cell.model,
            k: cell.k,
            target: cell.target,
            instance: i,
            seed: *seed,
            time: 0.0,
            fn_value: None,
            v_tol: None,
            iterations: None,
            alpha: None,
            converged: false,
            fn_trace: Vec::new(),
            error: None,
        };
        match outcome {
            Ok(m) => {
                record.time = if suite.record_timings { m.time } else { 0.0 };
                record.fn_value = Some(m.fn_value);
                record.v_tol = Some(m.v_tol);
                record.iterations = Some(m.iterations);
                record.alpha = m.alpha;
                record.converged = m.converged;
                record.fn_trace = m.fn_trace;
            }
            Err(e) => record.error = Some(e.to_string()),
        }
        record
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(suite.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Validation(format!("thread pool: {e}")))?;
    Ok(pool.install(|| tasks.par_iter().map(run).collect()))
}

/// One row per cell from the records of that cell; failed runs are counted
/// but excluded from the statistics.
pub fn aggregate(cells: &[Cell], records: &[RunRecord]) -> Vec<BenchRow> {
    cells
        .iter()
        .enumerate()
        .map(|(c, cell)| {
            let mine: Vec<&RunRecord> = records.iter().filter(|r| r.cell == c).collect();
            let ok: Vec<&RunRecord> = mine.iter().copied().filter(|r| r.error.is_none()).collect();
            let col = |f: &dyn Fn(&RunRecord) -> Option<f64>| -> Vec<f64> { ok.iter().filter_map(|r| f(r)).collect() };
            let v_tol = col(&|r| r.v_tol);
            let alpha = col(&|r| r.alpha);
            BenchRow {
                model: cell.model.label().to_string(),
                k: cell.k,
                target: cell.target.label().to_string(),
                runs: mine.len(),
                failures: mine.len() - ok.len(),
                t: mean_sd(&col(&|r| Some(r.time))),
                fn_stat: mean_sd(&col(&|r| r.fn_value)),
                v_tol_mean: mean_sd(&v_tol).mean,
                v_tol_max: v_tol.iter().copied().fold(f64::NAN, f64::max),
                iter: mean_sd(&col(&|r| r.iterations.map(|i| i as f64))),
                alpha: (!alpha.is_empty()).then(|| mean_sd(&alpha)),
            }
        })
        .collect()
}

const COLUMNS: [&str; 15] = [
    "model", "k", "target", "runs", "failed", "t.mean", "t.sd", "fn.mean", "fn.sd", "|v.tol|.mean",
    "|v.tol|.max", "iter.mean", "iter.sd", "alpha.mean", "alpha.sd",
];

fn cells_of(row: &BenchRow, precise: bool) -> Vec<String> {
    let num = |v: f64| if precise { v.to_string() } else { format!("{v:.4e}") };
    let short = |v: f64| if precise { v.to_string() } else { format!("{v:.3}") };
    let opt = |v: Option<f64>, f: &dyn Fn(f64) -> String| v.map_or_else(|| "-".to_string(), f);
    vec![
        row.model.clone(),
        row.k.map_or_else(|| "-".to_string(), |k| k.to_string()),
        row.target.clone(),
        row.runs.to_string(),
        row.failures.to_string(),
        num(row.t.mean),
        num(row.t.sd),
        num(row.fn_stat.mean),
        num(row.fn_stat.sd),
        num(row.v_tol_mean),
        num(row.v_tol_max),
        short(row.iter.mean),
        short(row.iter.sd),
        opt(row.alpha.map(|a| a.mean), &num),
        opt(row.alpha.map(|a| a.sd), &num),
    ]
}

/// Aligned plain-text table.
pub fn render_text(rows: &[BenchRow]) -> String {
    let body: Vec<Vec<String>> = rows.iter().map(|r| cells_of(r, false)).collect();
    let mut widths: Vec<usize> = COLUMNS.iter().map(|c| c.len()).collect();
    for line in &body {
        for (w, cell) in widths.iter_mut().zip(line) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let mut emit = |fields: Vec<&str>| {
        let padded: Vec<String> = fields
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (f, w))| if i < 3 { format!("{f:<w$}") } else { format!("{f:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    emit(COLUMNS.to_vec());
    for line in &body {
        emit(line.iter().map(String::as_str).collect());
    }
    out
}

/// CSV with full-precision values.
pub fn render_csv(rows: &[BenchRow]) -> String {
    let mut out = COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&cells_of(r, true).join(","));
        out.push('\n');
    }
    out
}

pub fn artifact_name(r: &RunRecord) -> String {
    format!(
        "cell{:02}_{}_k{}_{}_inst{:03}.json",
        r.cell,
        r.model.label(),
        r.k.map_or_else(|| "-".to_string(), |k| k.to_string()),
        r.target.label(),
        r.instance
    )
}

pub struct BenchOutput {
    pub records: Vec<RunRecord>,
    pub rows: Vec<BenchRow>,
    pub text: String,
    pub csv: String,
}

/// Runs the suite and, when `out_dir` is given, writes `runs/*.json`,
/// `bench.txt` and `bench.csv` beneath it.
pub fn run_bench(suite: &SuiteConfig, out_dir: Option<&Path>) -> CliResult<BenchOutput> {
    let records = run_suite(suite)?;
    let rows = aggregate(&suite.cells, &records);
    let text = render_text(&rows);
    let csv = render_csv(&rows);
    if let Some(dir) = out_dir {
        for r in &records {
            io::write_json(&dir.join("runs").join(artifact_name(r)), r)?;
        }
        io::write_json(&dir.join("suite.json"), suite)?;
        io::write_text(&dir.join("bench.txt"), &text)?;
        io::write_text(&dir.join("bench.csv"), &csv)?;
    }
    Ok(BenchOutput {
        records,
        rows,
        text,
        csv,
    })
}

/// Reads back every per-run artifact in `dir/runs`, in file-name order.
pub fn load_artifacts(dir: &Path) -> CliResult<Vec<RunRecord>> {
    let runs = dir.join("runs");
    let mut paths: Vec<_> = std::fs::read_dir(&runs)
        .map_err(|e| CliError::io(&runs, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| io::read_json(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_suite() -> SuiteConfig {
        SuiteConfig {
            n: 10,
            k_true: 2,
            instances: 2,
            seed: 5,
            record_timings: false,
            cells: vec![
                Cell { model: Model::Equicorrelation, k: None, target: TargetSource::True },
                Cell { model: Model::Nicm, k: Some(1), target: TargetSource::Historical },
            ],
            ..SuiteConfig::default()
        }
    }

    #[test]
    fn counts_rows_and_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_bench(&small_suite(), Some(dir.path())).unwrap();
        assert_eq!(out.rows.len(), 2);
        assert_eq!(load_artifacts(dir.path()).unwrap().len(), 4);
        assert!(out.rows[0].v_tol_max <= 1e-12);
    }

    #[test]
    fn aggregates_recompute_from_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let suite = SuiteConfig { record_timings: true, ..small_suite() };
        let out = run_bench(&suite, Some(dir.path())).unwrap();
        let reloaded = load_artifacts(dir.path()).unwrap();
        assert_eq!(aggregate(&suite.cells, &reloaded), out.rows);
    }

    #[test]
    fn failures_are_recorded_not_fatal() {
        let suite = SuiteConfig {
            cells: vec![Cell { model: Model::Nicm, k: Some(50), target: TargetSource::True }],
            ..small_suite()
        };
        let records = run_suite(&suite).unwrap();
        assert!(records.iter().all(|r| r.error.is_some()));
        let rows = aggregate(&suite.cells, &records);
        assert_eq!(rows[0].failures, 2);
    }

    #[test]
    fn order_is_independent_of_jobs() {
        let one = run_suite(&SuiteConfig { jobs: Some(1), ..small_suite() }).unwrap();
        let many = run_suite(&SuiteConfig { jobs: Some(4), ..small_suite() }).unwrap();
        assert_eq!(one, many);
    }

    #[test]
    fn stats() {
        let s = mean_sd(&[1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.sd, 1.0);
        assert_eq!(mean_sd(&[4.0]).sd, 0.0);
    }
}
