//! Market snapshots on disk: a JSON manifest naming CSV files relative to
//! its own directory.

use std::path::{Path, PathBuf};

use implied_corr::{Constraint, CorrMatrix, FactorLoadings, MarketSpec};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::io;

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintEntry {
    pub name: String,
    pub weights: PathBuf,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub date: String,
    pub sigma: PathBuf,
    pub constraints: Vec<ConstraintEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asset_returns: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor_returns: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor_loadings: Option<PathBuf>,
}

/// Aligned per-period returns: `T x n` assets and `T x k` factors.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnWindow {
    pub asset_names: Vec<String>,
    pub assets: DMatrix<f64>,
    pub factor_names: Vec<String>,
    pub factors: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedLoadings {
    pub factor_names: Vec<String>,
    pub loadings: FactorLoadings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketSnapshot {
    pub date: String,
    pub spec: MarketSpec,
    pub target: Option<CorrMatrix>,
    pub returns: Option<ReturnWindow>,
    pub factor_loadings: Option<NamedLoadings>,
}

fn mismatch(file: &Path, what: &str, expected: usize, actual: usize) -> CliError {
    CliError::Validation(format!(
        "{}: {what} has {actual} entries, expected {expected} from the volatility file",
        file.display()
    ))
}

/// Loads and validates the snapshot described by the manifest at `path`.
pub fn load_snapshot(path: &Path) -> CliResult<MarketSnapshot> {
    let manifest: Manifest = io::read_json(path)?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(CliError::Validation(format!(
            "{}: unsupported schema_version {} (expected {SCHEMA_VERSION})",
            path.display(),
            manifest.schema_version
        )));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &Path| base.join(p);

    let sigma_path = resolve(&manifest.sigma);
    let sigma = io::read_vector(&sigma_path)?;
    let n = sigma.len();
    let mut constraints = Vec::new();
    for entry in &manifest.constraints {
        let wpath = resolve(&entry.weights);
        let w = io::read_vector(&wpath)?;
        if w.len() != n {
            return Err(mismatch(&wpath, "weight vector", n, w.len()));
        }
        let c = Constraint::new(entry.name.clone(), w.iter().copied().collect(), entry.variance)
            .map_err(|e| CliError::Validation(format!("{}: {e}", wpath.display())))?;
        constraints.push(c);
    }
    let spec = MarketSpec::new(sigma.iter().copied().collect(), constraints)
        .map_err(|e| CliError::Validation(format!("{}: {e}", sigma_path.display())))?;

    let target = match &manifest.target {
        Some(p) => {
            let p = resolve(p);
            let m = io::read_matrix(&p)?;
            if m.nrows() != n || m.ncols() != n {
                return Err(mismatch(&p, "target matrix", n, m.nrows().max(m.ncols())));
            }
            Some(CorrMatrix::new(m)?)
        }
        None => None,
    };

    let returns = match (&manifest.asset_returns, &manifest.factor_returns) {
        (Some(a), Some(f)) => {
            let (ap, fp) = (resolve(a), resolve(f));
            let (asset_names, assets) = io::read_table(&ap)?;
            let (factor_names, factors) = io::read_table(&fp)?;
            if assets.ncols() != n {
                return Err(mismatch(&ap, "asset return table", n, assets.ncols()));
            }
            if factors.nrows() != assets.nrows() {
                return Err(CliError::Validation(format!(
                    "{} has {} periods but {} has {}",
                    fp.display(),
                    factors.nrows(),
                    ap.display(),
                    assets.nrows()
                )));
            }
            Some(ReturnWindow {
                asset_names,
                assets,
                factor_names,
                factors,
            })
        }
        (None, None) => None,
        _ => {
            return Err(CliError::Validation(format!(
                "{}: asset_returns and factor_returns must be given together",
                path.display()
            )))
        }
    };

    let factor_loadings = match &manifest.factor_loadings {
        Some(p) => {
            let p = resolve(p);
            let (factor_names, m) = io::read_table(&p)?;
            if m.nrows() != n {
                return Err(mismatch(&p, "factor loading table", n, m.nrows()));
            }
            Some(NamedLoadings {
                factor_names,
                loadings: FactorLoadings::new(m)?,
            })
        }
        None => None,
    };

    Ok(MarketSnapshot {
        date: manifest.date,
        spec,
        target,
        returns,
        factor_loadings,
    })
}

/// Writes the snapshot into `dir` and returns the manifest path.
pub fn save_snapshot(snapshot: &MarketSnapshot, dir: &Path) -> CliResult<PathBuf> {
    let spec = &snapshot.spec;
    io::write_vector(&dir.join("sigma.csv"), "sigma", spec.sigma())?;
    let mut constraints = Vec::new();
    for (j, c) in spec.constraints().iter().enumerate() {
        let file = PathBuf::from(format!("weights_{j}.csv"));
        io::write_vector(&dir.join(&file), "weight", c.weights())?;
        constraints.push(ConstraintEntry {
            name: c.name.clone(),
            weights: file,
            variance: c.variance(),
        });
    }
    let mut manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        date: snapshot.date.clone(),
        sigma: "sigma.csv".into(),
        constraints,
        target: None,
        asset_returns: None,
        factor_returns: None,
        factor_loadings: None,
    };
    if let Some(t) = &snapshot.target {
        io::write_matrix(&dir.join("target.csv"), t.matrix())?;
        manifest.target = Some("target.csv".into());
    }
    if let Some(r) = &snapshot.returns {
        io::write_table(&dir.join("asset_returns.csv"), &r.asset_names, &r.assets)?;
        io::write_table(&dir.join("factor_returns.csv"), &r.factor_names, &r.factors)?;
        manifest.asset_returns = Some("asset_returns.csv".into());
        manifest.factor_returns = Some("factor_returns.csv".into());
    }
    if let Some(l) = &snapshot.factor_loadings {
        io::write_table(&dir.join("factor_loadings.csv"), &l.factor_names, l.loadings.matrix())?;
        manifest.factor_loadings = Some("factor_loadings.csv".into());
    }
    let path = dir.join(MANIFEST);
    io::write_json(&path, &manifest)?;
    Ok(path)
}
