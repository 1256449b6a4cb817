//! Command-line dispatch. Every command prints a report on stdout (JSON by
//! default) and, with `--out-dir`, writes its matrices as CSV beneath it.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use implied_corr::vg::{direct_to_centered_corr, vg_market_constraint};
use implied_corr::{
    adjusted_ex_post, check_feasibility, economic_implied_corr, equicorrelation, solve_nicm, CorrMatrix,
    FactorLoadings, MarketSpec, Orthogonalize, SolverConfig, SolverResult, VgParams,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bench::{run_bench, SuiteConfig};
use crate::error::{CliError, CliResult};
use crate::estimate::estimate_factor_correlations;
use crate::io;
use crate::snapshot::{load_snapshot, save_snapshot, MarketSnapshot};
use crate::synth::{generate_synthetic_market, SynthParams, SynthTarget};

pub const SEED_ENV: &str = "IMPLIEDCORR_SEED";

#[derive(Debug, Parser)]
#[command(name = "impliedcorr", version, about = "Implied correlation matrices from index and constituent volatilities")]
pub struct Cli {
    /// Solver configuration (JSON); flags below override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for randomized commands.
    #[arg(long, global = true, env = SEED_ENV)]
    pub seed: Option<u64>,
    /// Market-constraint tolerance [default: 1e-6].
    #[arg(long, global = true)]
    pub tol_var: Option<f64>,
    /// Stopping tolerance on the objective improvement [default: 1e-3].
    #[arg(long, global = true)]
    pub tol_fn: Option<f64>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Feasibility report for a correlation matrix.
    Check {
        #[command(flatten)]
        market: MarketArgs,
        /// Matrix to check; defaults to the snapshot target.
        #[arg(long)]
        matrix: Option<PathBuf>,
        /// Tolerance on the constraint residuals; defaults to the variance tolerance.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Equicorrelation matrix meeting the index constraint.
    Equicorr {
        #[command(flatten)]
        market: MarketArgs,
    },
    /// Adjusted ex-post blend of a prior matrix.
    Adjust {
        #[command(flatten)]
        market: MarketArgs,
        /// Prior matrix; defaults to the snapshot target.
        #[arg(long)]
        prior: Option<PathBuf>,
    },
    /// Nearest implied correlation matrix with a k-factor structure.
    Nearest {
        #[command(flatten)]
        market: MarketArgs,
        /// Target matrix; defaults to the snapshot target.
        #[arg(long)]
        target: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Nearest implied correlation matrix to the adjusted ex-post blend of a prior.
    Repair {
        #[command(flatten)]
        market: MarketArgs,
        /// Prior matrix; defaults to the snapshot target.
        #[arg(long)]
        prior: Option<PathBuf>,
        /// Use the prior itself as the target instead of its adjusted blend.
        #[arg(long)]
        direct: bool,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Economic approach from physical factor loadings.
    Economic {
        #[command(flatten)]
        market: MarketArgs,
        /// Loadings CSV (header row of factor names); defaults to the snapshot
        /// loadings, else estimated from the snapshot returns.
        #[arg(long)]
        loadings: Option<PathBuf>,
        /// Trailing periods for estimated loadings.
        #[arg(long, default_value_t = 12)]
        window: usize,
        #[arg(long, value_enum, default_value_t = OrthoArg::Auto)]
        orthogonalize: OrthoArg,
    },
    /// Variance-gamma direct to centered parametrization; with a snapshot,
    /// also solves for C_dir under the adjusted index constraint.
    VgConvert {
        /// JSON with xi, omega, theta, nu and an optional c_dir CSV path.
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        snapshot: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Seeded synthetic market snapshot with its ground truth.
    Synth {
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 3)]
        k_true: usize,
        #[arg(long, default_value_t = 0.0)]
        crp: f64,
        #[arg(long, default_value_t = 120)]
        periods: usize,
        #[arg(long, default_value_t = 24)]
        window: usize,
        #[arg(long, value_enum, default_value_t = TargetArg::True)]
        target: TargetArg,
    },
    /// Benchmark suite over synthetic markets.
    Bench {
        /// Suite JSON; defaults to the built-in suite.
        #[arg(long)]
        suite: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

#[derive(Debug, Args)]
pub struct MarketArgs {
    /// Snapshot manifest.
    #[arg(long)]
    pub snapshot: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OrthoArg {
    Auto,
    Always,
    Never,
}

impl From<OrthoArg> for Orthogonalize {
    fn from(o: OrthoArg) -> Self {
        match o {
            OrthoArg::Auto => Orthogonalize::Auto,
            OrthoArg::Always => Orthogonalize::Always,
            OrthoArg::Never => Orthogonalize::Never,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    True,
    Historical,
    MeanReverting,
}

impl From<TargetArg> for SynthTarget {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::True => SynthTarget::True,
            TargetArg::Historical => SynthTarget::Historical,
            TargetArg::MeanReverting => SynthTarget::MeanReverting,
        }
    }
}

/// On-disk form of the variance-gamma parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VgParamsFile {
    pub xi: Vec<f64>,
    pub omega: Vec<f64>,
    pub theta: Vec<f64>,
    pub nu: f64,
    /// CSV path, relative to the parameter file.
    #[serde(default)]
    pub c_dir: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code; output goes to stdout, diagnostics to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(Failure { error, output }) => {
            if let Some(out) = output {
                print!("{out}");
            }
            eprintln!("error: {error}");
            error.exit_code()
        }
    }
}

/// A failed command, with the report it produced before failing, if any.
pub struct Failure {
    pub error: CliError,
    pub output: Option<String>,
}

impl From<CliError> for Failure {
    fn from(error: CliError) -> Self {
        Self { error, output: None }
    }
}

impl From<implied_corr::Error> for Failure {
    fn from(e: implied_corr::Error) -> Self {
        CliError::from(e).into()
    }
}

/// Runs a parsed command and returns its stdout text.
pub fn execute(cli: &Cli) -> Result<String, Failure> {
    let config = solver_config(cli)?;
    let format = cli.format.unwrap_or(Format::Json);
    let out_dir = cli.out_dir.as_deref();
    match &cli.command {
        Command::Check { market, matrix, tol } => {
            let snap = load_snapshot(&market.snapshot)?;
            let c = match matrix {
                Some(p) => read_corr(p)?,
                None => snapshot_target(&snap, "check")?,
            };
            let report = check_feasibility(&c, &snap.spec, tol.unwrap_or(config.var_tol))?;
            let value = json!({
                "report": report,
                "mathematically_feasible": report.mathematically_feasible(),
                "max_abs_residual": report.max_abs_residual(),
            });
            Ok(render(&value, format))
        }
        Command::Equicorr { market } => {
            let snap = load_snapshot(&market.snapshot)?;
            let e = equicorrelation(&snap.spec)?;
            if let Some(dir) = out_dir {
                io::write_matrix(&dir.join("C_equicorr.csv"), e.matrix.matrix())?;
            }
            let value = json!({
                "c_bar": e.c_bar,
                "psd_range": e.psd_range,
                "constraint_residual": residual(&e.matrix, &snap.spec)?,
            });
            Ok(render(&value, format))
        }
        Command::Adjust { market, prior } => {
            let snap = load_snapshot(&market.snapshot)?;
            let prior = match prior {
                Some(p) => read_corr(p)?,
                None => snapshot_target(&snap, "adjust")?,
            };
            let a = adjusted_ex_post(&prior, &snap.spec)?;
            if let Some(dir) = out_dir {
                io::write_matrix(&dir.join("C_adjusted.csv"), a.matrix.matrix())?;
            }
            let report = check_feasibility(&a.matrix, &snap.spec, config.var_tol)?;
            let value = json!({
                "alpha_hat": a.alpha_hat,
                "used_lower_bound": a.used_lower_bound,
                "crp_sign": a.crp_sign,
                "in_bounds": a.in_bounds,
                "psd": report.psd,
                "min_eigenvalue": report.min_eigenvalue,
                "constraint_residual": report.constraint_residuals[0],
            });
            Ok(render(&value, format))
        }
        Command::Nearest { market, target, k } => {
            let snap = load_snapshot(&market.snapshot)?;
            let a = match target {
                Some(p) => read_corr(p)?,
                None => snapshot_target(&snap, "nearest")?,
            };
            let config = with_k(config, *k);
            let r = solve_nicm(&a, &snap.spec, &config)?;
            let value = solver_report(&r, &snap.spec, &config, json!({}))?;
            finish_solve(&r, value, out_dir, format)
        }
        Command::Repair {
            market,
            prior,
            direct,
            k,
        } => {
            let snap = load_snapshot(&market.snapshot)?;
            let prior = match prior {
                Some(p) => read_corr(p)?,
                None => snapshot_target(&snap, "repair")?,
            };
            let prior_psd = prior.min_eigenvalue();
            let (target, alpha_hat) = if *direct {
                (prior, None)
            } else {
                let a = adjusted_ex_post(&prior, &snap.spec)?;
                (a.matrix, Some(a.alpha_hat))
            };
            let config = with_k(config, *k);
            let r = solve_nicm(&target, &snap.spec, &config)?;
            let extra = json!({
                "prior_min_eigenvalue": prior_psd,
                "target_min_eigenvalue": target.min_eigenvalue(),
                "alpha_hat": alpha_hat,
            });
            let value = solver_report(&r, &snap.spec, &config, extra)?;
            if let Some(dir) = out_dir {
                io::write_matrix(&dir.join("C_target.csv"), target.matrix())?;
            }
            finish_solve(&r, value, out_dir, format)
        }
        Command::Economic {
            market,
            loadings,
            window,
            orthogonalize,
        } => {
            let snap = load_snapshot(&market.snapshot)?;
            let (names, x_p) = physical_loadings(&snap, loadings.as_deref(), *window)?;
            let r = economic_implied_corr(&x_p, &snap.spec, (*orthogonalize).into())?;
            if let Some(dir) = out_dir {
                io::write_matrix(&dir.join("C_Q.csv"), r.matrix.matrix())?;
                io::write_table(&dir.join("X_Q.csv"), &names, r.x_q.matrix())?;
                io::write_json(&dir.join("economic.json"), &r)?;
            }
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
            Ok(render(&serde_json::to_value(&r).expect("serializable"), format))
        }
        Command::VgConvert { params, snapshot, k } => {
            let p = read_vg_params(params)?;
            let (sigma, c_cen) = direct_to_centered_corr(&p)?;
            if let Some(dir) = out_dir {
                io::write_vector(&dir.join("sigma_centered.csv"), "sigma", &sigma)?;
                io::write_matrix(&dir.join("C_centered.csv"), c_cen.matrix())?;
            }
            let mut value = json!({
                "sigma_centered": sigma.as_slice(),
                "c_centered_min_eigenvalue": c_cen.min_eigenvalue(),
            });
            let Some(snapshot) = snapshot else {
                return Ok(render(&value, format));
            };
            let snap = load_snapshot(snapshot)?;
            let adjusted = vg_market_constraint(&p, &snap.spec)?;
            let target = p.c_dir().cloned().map_or_else(|| snapshot_target(&snap, "vg-convert"), Ok)?;
            let config = with_k(config, *k);
            let r = solve_nicm(&target, &adjusted, &config)?;
            let solved = p.clone().with_c_dir(r.c_star.clone())?;
            let (sigma_s, c_s) = direct_to_centered_corr(&solved)?;
            let w = snap.spec.sole_constraint()?.weights();
            let v = sigma_s.component_mul(w);
            let recovered = (v.transpose() * c_s.matrix() * &v)[(0, 0)];
            value["adjusted_variance"] = json!(adjusted.sole_constraint()?.variance());
            value["index_variance"] = json!(snap.spec.sole_constraint()?.variance());
            value["recovered_index_variance"] = json!(recovered);
            value["solver"] = serde_json::to_value(&r).expect("serializable");
            if let Some(dir) = out_dir {
                io::write_matrix(&dir.join("C_dir_star.csv"), r.c_star.matrix())?;
                io::write_matrix(&dir.join("C_centered_star.csv"), c_s.matrix())?;
            }
            finish_solve(&r, value, None, format)
        }
        Command::Synth {
            n,
            k_true,
            crp,
            periods,
            window,
            target,
        } => {
            let dir = out_dir.ok_or_else(|| CliError::Validation("synth needs --out-dir".into()))?;
            let params = SynthParams {
                n: *n,
                k_true: *k_true,
                crp: *crp,
                seed: cli.seed.unwrap_or(0),
                periods: *periods,
                window: *window,
                target: (*target).into(),
            };
            let m = generate_synthetic_market(&params)?;
            let manifest = save_snapshot(&m.snapshot, dir)?;
            io::write_table(&dir.join("x_true.csv"), &factor_names(m.truth.x_true.k()), m.truth.x_true.matrix())?;
            io::write_matrix(&dir.join("c_true.csv"), m.truth.c_true.matrix())?;
            for w in &m.warnings {
                eprintln!("warning: {w}");
            }
            let value = json!({
                "manifest": manifest,
                "params": params,
                "warnings": m.warnings,
            });
            Ok(render(&value, format))
        }
        Command::Bench { suite, jobs } => {
            let mut s: SuiteConfig = match suite {
                Some(p) => io::read_json(p)?,
                None => SuiteConfig {
                    solver: config.clone(),
                    ..SuiteConfig::default()
                },
            };
            if cli.config.is_some() || cli.tol_var.is_some() || cli.tol_fn.is_some() {
                s.solver = SolverConfig { k: s.solver.k, ..config };
            }
            if let Some(seed) = cli.seed {
                s.seed = seed;
            }
            if jobs.is_some() {
                s.jobs = *jobs;
            }
            let out = run_bench(&s, out_dir)?;
            Ok(match cli.format {
                None => out.text,
                Some(Format::Csv) => out.csv,
                Some(Format::Json) => io::to_json(&out.rows),
            })
        }
    }
}

/// Defaults, then `--config`, then the tolerance flags.
fn solver_config(cli: &Cli) -> CliResult<SolverConfig> {
    let mut c: SolverConfig = match &cli.config {
        Some(p) => io::read_json(p)?,
        None => SolverConfig::default(),
    };
    if let Some(t) = cli.tol_var {
        c.var_tol = t;
    }
    if let Some(t) = cli.tol_fn {
        c.fn_tol = t;
    }
    c.validate()?;
    Ok(c)
}

fn with_k(config: SolverConfig, k: Option<usize>) -> SolverConfig {
    match k {
        Some(k) => config.with_k(k),
        None => config,
    }
}

fn read_corr(path: &Path) -> CliResult<CorrMatrix> {
    let m = io::read_matrix(path)?;
    CorrMatrix::new(m).map_err(|e| CliError::parse(path, e.to_string()))
}

fn snapshot_target(snap: &MarketSnapshot, command: &str) -> CliResult<CorrMatrix> {
    snap.target
        .clone()
        .ok_or_else(|| CliError::Validation(format!("{command}: snapshot has no target matrix and none was given")))
}

fn residual(c: &CorrMatrix, spec: &MarketSpec) -> CliResult<f64> {
    Ok(check_feasibility(c, spec, 0.0)?.constraint_residuals[0])
}

fn factor_names(k: usize) -> Vec<String> {
    (1..=k).map(|d| format!("F{d}")).collect()
}

fn physical_loadings(
    snap: &MarketSnapshot,
    path: Option<&Path>,
    window: usize,
) -> CliResult<(Vec<String>, FactorLoadings)> {
    if let Some(p) = path {
        let (names, m) = io::read_table(p)?;
        let x = FactorLoadings::new(m).map_err(|e| CliError::parse(p, e.to_string()))?;
        return Ok((names, x));
    }
    if let Some(l) = &snap.factor_loadings {
        return Ok((l.factor_names.clone(), l.loadings.clone()));
    }
    let r = snap.returns.as_ref().ok_or_else(|| {
        CliError::Validation("economic: need --loadings or a snapshot with loadings or returns".into())
    })?;
    let x = estimate_factor_correlations(&r.assets, &r.factors, window)?;
    Ok((r.factor_names.clone(), x))
}

fn read_vg_params(path: &Path) -> CliResult<VgParams> {
    let f: VgParamsFile = io::read_json(path)?;
    let c_dir = match &f.c_dir {
        Some(rel) => Some(read_corr(&path.parent().unwrap_or(Path::new(".")).join(rel))?),
        None => None,
    };
    Ok(VgParams::new(f.xi, f.omega, f.theta, f.nu, c_dir)?)
}

fn solver_report(r: &SolverResult, spec: &MarketSpec, config: &SolverConfig, extra: Value) -> CliResult<Value> {
    let report = check_feasibility(&r.c_star, spec, config.var_tol)?;
    let mut value = json!({
        "k": config.k,
        "solver": r,
        "psd": report.psd,
        "mathematically_feasible": report.mathematically_feasible(),
        "economically_matched": report.economically_matched,
        "report": report,
    });
    if let (Value::Object(v), Value::Object(e)) = (&mut value, extra) {
        v.extend(e);
    }
    Ok(value)
}

/// Writes solver outputs and maps non-convergence to its exit code while
/// still printing the report.
fn finish_solve(r: &SolverResult, value: Value, out_dir: Option<&Path>, format: Format) -> Result<String, Failure> {
    if let Some(dir) = out_dir {
        io::write_matrix(&dir.join("C_star.csv"), r.c_star.matrix())?;
        io::write_table(&dir.join("X_star.csv"), &factor_names(r.x_star.k()), r.x_star.matrix())?;
        io::write_json(&dir.join("result.json"), &value)?;
    }
    let out = render(&value, format);
    if r.converged {
        Ok(out)
    } else {
        Err(Failure {
            error: CliError::NotConverged(format!(
                "{:?} after {} iterations, |g| = {:e}",
                r.termination, r.outer_iterations, r.constraint_residual
            )),
            output: Some(out),
        })
    }
}

fn render(value: &Value, format: Format) -> String {
    match format {
        Format::Json => io::to_json(value),
        Format::Csv => {
            let mut rows = Vec::new();
            flatten("", value, &mut rows);
            let mut out = String::from("key,value\n");
            for (k, v) in rows {
                out.push_str(&format!("{k},{v}\n"));
            }
            out
        }
    }
}

/// Dotted keys for nested objects, indices for arrays.
fn flatten(prefix: &str, value: &Value, rows: &mut Vec<(String, String)>) {
    let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match value {
        Value::Object(m) => m.iter().for_each(|(k, v)| flatten(&key(k), v, rows)),
        Value::Array(a) => a.iter().enumerate().for_each(|(i, v)| flatten(&key(&i.to_string()), v, rows)),
        Value::String(s) => rows.push((prefix.to_string(), s.clone())),
        other => rows.push((prefix.to_string(), other.to_string())),
    }
}
