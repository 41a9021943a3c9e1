use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{correct_spec, generate, oracle_truth, replication_seed, DgpConfig, HORIZON};
use crate::dataset::Arm;
use crate::estimator::{estimate_curve, EstimatorConfig, EstimatorError, SCHEMA_VERSION};

const TRUTH_SEED_GROUP: u64 = 0x7247;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    /// (n_h, c) pairs.
    pub scenarios: Vec<(usize, f64)>,
    pub replications: usize,
    pub seed: u64,
    /// Bridging size as a fraction of the historical size.
    pub bridging_fraction: f64,
    pub truth_draws: usize,
    pub time: f64,
    /// Grid, arms, causes and band settings are overridden.
    pub estimator: EstimatorConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        let mut scenarios = Vec::new();
        for n_h in [1000, 2000, 4000, 8000] {
            for c in [0.0, 0.05, 0.125, 0.25] {
                scenarios.push((n_h, c));
            }
        }
        StudyConfig {
            scenarios,
            replications: 1000,
            seed: 1,
            bridging_fraction: 0.25,
            truth_draws: 1_000_000,
            time: HORIZON,
            estimator: EstimatorConfig { spec: Some(correct_spec()), ..EstimatorConfig::default() },
        }
    }
}

/// One scenario on the survival scale `P(T(1') > t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub n_h: usize,
    pub n_b: usize,
    pub c: f64,
    pub truth: f64,
    pub truth_mc_se: f64,
    pub mean: f64,
    pub median: f64,
    pub bias: f64,
    pub pct_bias: f64,
    pub rmse: f64,
    pub avg_se: f64,
    pub coverage: f64,
    /// Binomial SE of the coverage; absent with fewer than two replications.
    pub coverage_se: Option<f64>,
    pub replications: usize,
    pub failures: usize,
    pub failure_examples: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub schema_version: u32,
    pub scale: String,
    pub time: f64,
    pub seed: u64,
    pub rows: Vec<SummaryRow>,
}

/// Survival-scale estimate, its SE, and whether the CI covers `truth_risk`.
#[derive(Debug, Clone, Copy)]
struct Replicate {
    survival: f64,
    se: f64,
    covers: bool,
}

fn replicate(cfg: &StudyConfig, dgp: &DgpConfig, truth_risk: f64) -> Result<Replicate, EstimatorError> {
    let ds = generate(dgp);
    let est = EstimatorConfig {
        seed: dgp.seed,
        grid: vec![cfg.time],
        arms: vec![Arm::Investigational],
        causes: vec![1],
        multipliers: 0,
        ..cfg.estimator.clone()
    };
    let (curve, _) = estimate_curve(&ds, &est)?;
    let p = &curve.points[0];
    Ok(Replicate { survival: 1.0 - p.estimate, se: p.se, covers: p.ci_lo <= truth_risk && truth_risk <= p.ci_hi })
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Compensated (Kahan) sum.
fn ksum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0, 0.0);
    for v in values {
        let y = v - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum
}

pub fn run_study(cfg: &StudyConfig) -> Result<SimulationSummary, EstimatorError> {
    if cfg.replications == 0 {
        return Err(EstimatorError::BadSetting("need at least one replication".into()));
    }
    if cfg.scenarios.is_empty() {
        return Err(EstimatorError::BadSetting("no scenarios".into()));
    }
    let mut rows = Vec::new();
    for (si, &(n_h, c)) in cfg.scenarios.iter().enumerate() {
        let n_b = ((n_h as f64) * cfg.bridging_fraction).round() as usize;
        let truth_seed = replication_seed(cfg.seed, TRUTH_SEED_GROUP, si as u64);
        let truth = oracle_truth(c, 1, Arm::Investigational, cfg.time, 1, cfg.truth_draws, truth_seed);
        let results: Vec<Result<Replicate, String>> = (0..cfg.replications)
            .into_par_iter()
            .map(|r| {
                let seed = replication_seed(cfg.seed, si as u64, r as u64);
                let dgp = DgpConfig { c, n_h, n_b, seed, causes: 1 };
                replicate(cfg, &dgp, truth.value).map_err(|e| format!("replication {r}: {e}"))
            })
            .collect();
        let failures: Vec<String> = results.iter().filter_map(|r| r.as_ref().err().cloned()).collect();
        let ok: Vec<Replicate> = results.into_iter().filter_map(Result::ok).collect();
        let m = ok.len() as f64;
        let truth_surv = 1.0 - truth.value;
        let mean = ksum(ok.iter().map(|r| r.survival)) / m;
        let mut sorted: Vec<f64> = ok.iter().map(|r| r.survival).collect();
        sorted.sort_by(f64::total_cmp);
        let bias = mean - truth_surv;
        let rmse = (ksum(ok.iter().map(|r| (r.survival - truth_surv).powi(2))) / m).sqrt();
        let coverage = ok.iter().filter(|r| r.covers).count() as f64 / m;
        rows.push(SummaryRow {
            n_h,
            n_b,
            c,
            truth: truth_surv,
            truth_mc_se: truth.mc_se,
            mean,
            median: median(&sorted),
            bias,
            pct_bias: 100.0 * bias / truth_surv,
            rmse,
            avg_se: ksum(ok.iter().map(|r| r.se)) / m,
            coverage,
            coverage_se: (ok.len() > 1).then(|| (coverage * (1.0 - coverage) / m).sqrt()),
            replications: cfg.replications,
            failures: failures.len(),
            failure_examples: failures.into_iter().take(5).collect(),
        });
    }
    Ok(SimulationSummary {
        schema_version: SCHEMA_VERSION,
        scale: "survival P(T(1') > t)".into(),
        time: cfg.time,
        seed: cfg.seed,
        rows,
    })
}

impl SimulationSummary {
    /// Columns: n_h, c, mean, median, bias, pct_bias, rmse, avg_se, coverage.
    pub fn write_csv(&self, path: &Path) -> Result<(), EstimatorError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "n_h,c,mean,median,bias,pct_bias,rmse,avg_se,coverage")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                r.n_h, r.c, r.mean, r.median, r.bias, r.pct_bias, r.rmse, r.avg_se, r.coverage
            )?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn failure_fraction(&self) -> f64 {
        let fails: usize = self.rows.iter().map(|r| r.failures).sum();
        let total: usize = self.rows.iter().map(|r| r.replications).sum();
        fails as f64 / total as f64
    }
}
