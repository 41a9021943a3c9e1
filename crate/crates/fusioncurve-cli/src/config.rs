use std::path::{Path, PathBuf};

use fusioncurve::dataset::{Arm, ColumnSchema};
use fusioncurve::estimator::EstimatorConfig;
use serde::Deserialize;

use crate::{Common, Failure};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Columns {
    /// Covariate columns in order; inferred from `x1, x2, ...` headers when absent.
    pub covariates: Option<Vec<String>>,
    pub markers: Option<Vec<String>>,
    pub arm: Option<String>,
    pub time: Option<String>,
    pub event: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub historical: Option<PathBuf>,
    pub bridging: Option<PathBuf>,
    /// Trial with outcomes in both the approved and investigational arms.
    pub two_arm: Option<PathBuf>,
    pub causes: usize,
    /// Analysis horizon; the largest observed time when absent.
    pub horizon: Option<f64>,
    /// Drop bridging rows outside the historical covariate box.
    pub trim_overlap: bool,
    pub columns: Columns,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            historical: None,
            bridging: None,
            two_arm: None,
            causes: 1,
            horizon: None,
            trim_overlap: false,
            columns: Columns::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NcdeSection {
    pub t_star: Option<f64>,
    pub alpha: f64,
    pub replicates: usize,
    pub cause: usize,
}

impl Default for NcdeSection {
    fn default() -> Self {
        NcdeSection { t_star: None, alpha: 0.05, replicates: 500, cause: 1 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    /// Keys `n_h:c`; the full 4 x 4 grid when absent.
    pub scenarios: Option<Vec<String>>,
    pub replications: usize,
    pub truth_draws: usize,
    pub bridging_fraction: f64,
    pub time: f64,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection { scenarios: None, replications: 1000, truth_draws: 1_000_000, bridging_fraction: 0.25, time: 5.0 }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub data: DataSection,
    pub estimator: EstimatorConfig,
    pub ncde: NcdeSection,
    pub simulate: SimulateSection,
}

/// Parsed config with command-line overrides applied and paths resolved.
#[derive(Debug, Clone)]
pub struct Context {
    pub run: RunConfig,
    pub out: PathBuf,
    pub threads: Option<usize>,
    /// Set when an explicit `--bootstrap` was given.
    pub bootstrap: Option<usize>,
    /// Set when an explicit `--cause` was given.
    pub causes_flag: Option<Vec<usize>>,
}

fn resolve(base: &Path, p: &Option<PathBuf>) -> Option<PathBuf> {
    p.as_ref().map(|p| if p.is_absolute() { p.clone() } else { base.join(p) })
}

pub fn parse_arm(code: &str) -> Result<Arm, Failure> {
    match Arm::from_code(code) {
        Some(a) if a != Arm::Placebo => Ok(a),
        _ => Err(Failure::Usage(format!("--arm: `{code}` is not a target arm (use 1 or 1p)"))),
    }
}

impl Context {
    pub fn load(c: &Common) -> Result<Context, Failure> {
        let (mut run, base) = match &c.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Failure::Usage(format!("--config {}: {e}", path.display())))?;
                let run: RunConfig = toml::from_str(&text)
                    .map_err(|e| Failure::Usage(format!("{}: {}", path.display(), e.to_string().trim_end())))?;
                let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
                (run, base)
            }
            None => (RunConfig::default(), PathBuf::new()),
        };
        run.data.historical = resolve(&base, &run.data.historical);
        run.data.bridging = resolve(&base, &run.data.bridging);
        run.data.two_arm = resolve(&base, &run.data.two_arm);
        let out = c.out.clone().or_else(|| resolve(&base, &run.out)).unwrap_or_else(|| PathBuf::from("out"));

        let est = &mut run.estimator;
        if let Some(seed) = c.seed.or(run.seed) {
            est.seed = seed;
        }
        if let Some(g) = &c.grid {
            est.grid = g.clone();
        }
        if let Some(arms) = &c.arm {
            est.arms = arms.iter().map(|a| parse_arm(a)).collect::<Result<_, _>>()?;
        }
        if let Some(causes) = &c.cause {
            est.causes = causes.clone();
        }
        if let Some(r) = c.rho {
            est.sensitivity.rho = r;
        }
        if let Some(h) = c.h_offset {
            est.sensitivity.h_offset = h;
        }
        if let Some(l) = c.level {
            est.level = l;
        }
        Ok(Context { threads: run.threads, run, out, bootstrap: c.bootstrap, causes_flag: c.cause.clone() })
    }

    pub fn seed(&self) -> u64 {
        self.run.estimator.seed
    }

    pub fn require(&self, field: &Option<PathBuf>, name: &str) -> Result<PathBuf, Failure> {
        field.clone().ok_or_else(|| Failure::Usage(format!("data.{name}: no input file configured")))
    }

    /// Column mapping; covariates default to the `x<k>` headers of `sample`.
    pub fn schema(&self, sample: &Path) -> Result<ColumnSchema, Failure> {
        let cols = &self.run.data.columns;
        let covariates = match &cols.covariates {
            Some(c) => c.clone(),
            None => infer_covariates(sample)?,
        };
        Ok(ColumnSchema {
            covariates,
            arm: cols.arm.clone().unwrap_or_else(|| "arm".into()),
            markers: cols.markers.clone().unwrap_or_else(|| vec!["s".into()]),
            time: cols.time.clone().unwrap_or_else(|| "time".into()),
            event: cols.event.clone().unwrap_or_else(|| "event".into()),
        })
    }
}

fn infer_covariates(path: &Path) -> Result<Vec<String>, Failure> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let mut found: Vec<(usize, String)> = headers
        .iter()
        .filter_map(|h| {
            let h = h.trim();
            h.strip_prefix('x').and_then(|k| k.parse::<usize>().ok()).map(|k| (k, h.to_string()))
        })
        .collect();
    if found.is_empty() {
        return Err(Failure::Usage(format!(
            "data.columns.covariates: not set and {} has no x1, x2, ... columns",
            path.display()
        )));
    }
    found.sort();
    Ok(found.into_iter().map(|(_, h)| h).collect())
}

/// Parse `n_h:c`.
pub fn parse_scenario(key: &str) -> Result<(usize, f64), Failure> {
    let bad = || Failure::Usage(format!("unknown scenario key `{key}` (expected n_h:c, e.g. 2000:0.25)"));
    let (n, c) = key.split_once(':').ok_or_else(bad)?;
    let n: usize = n.trim().parse().map_err(|_| bad())?;
    let c: f64 = c.trim().parse().map_err(|_| bad())?;
    if n < 8 || !c.is_finite() {
        return Err(bad());
    }
    Ok((n, c))
}
