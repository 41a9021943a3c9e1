//! Test of no controlled direct effects in a trial where both vaccines have
//! outcomes: predict the investigational arm's incidence from its markers
//! and the approved arm's marker-outcome law, then compare with what the
//! investigational arm actually experienced.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{estimate_curve, EstimatorConfig, EstimatorError, SensitivitySpec, SCHEMA_VERSION};
use crate::dataset::{Arm, SubjectRecord, TwoArmTrial};
use crate::nuisance::{fit_survival, NuisanceError, SurvivalKind};
use crate::rng::{stream_id, stream_rng};

const NCDE_GROUP: u64 = 0x4CDE;

/// Fewest approved-arm events of the target cause by `t_star` for the
/// counterfactual hazard fit to be meaningful.
pub const MIN_EVENTS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NcdeConfig {
    pub t_star: f64,
    pub alpha: f64,
    pub replicates: usize,
    pub cause: usize,
    pub seed: u64,
    /// Estimator settings for the counterfactual curve; grid, arms, causes
    /// and band settings are overridden.
    pub estimator: EstimatorConfig,
}

impl Default for NcdeConfig {
    fn default() -> Self {
        NcdeConfig {
            t_star: 1.0,
            alpha: 0.05,
            replicates: 500,
            cause: 1,
            seed: 1,
            estimator: EstimatorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcdeTestResult {
    pub schema_version: u32,
    pub t_star: f64,
    pub cause: usize,
    pub counterfactual: f64,
    pub actual: f64,
    /// Counterfactual minus actual.
    pub difference: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub alpha: f64,
    pub replicates: usize,
    pub failed_replicates: usize,
    pub reject: bool,
}

fn estimator_settings(cfg: &NcdeConfig) -> EstimatorConfig {
    EstimatorConfig {
        grid: vec![cfg.t_star],
        arms: vec![Arm::Investigational],
        causes: vec![cfg.cause],
        multipliers: 0,
        sensitivity: SensitivitySpec::default(),
        ..cfg.estimator.clone()
    }
}

/// IPCW incidence of `cause` by `t` among `rows`, with a proportional-hazards
/// censoring model fitted on those rows.
pub fn ipcw_incidence(
    rows: &[&SubjectRecord],
    t: f64,
    cause: usize,
    cfg: &EstimatorConfig,
    dim: usize,
    marker_len: usize,
) -> Result<f64, EstimatorError> {
    let spec = cfg.spec.clone().unwrap_or_else(|| crate::nuisance::NuisanceSpec::main_effects(dim, marker_len));
    let terms: Vec<_> = spec.censoring.iter().copied().filter(|t| !t.uses_arm()).collect();
    let fit = match fit_survival(SurvivalKind::Censoring, &terms, rows) {
        Ok(f) => Some(f),
        Err(NuisanceError::NoEvents(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let floor = cfg.truncation.censoring_floor;
    let total: f64 = rows
        .iter()
        .map(|r| {
            let o = r.outcome.expect("two-arm rows carry outcomes");
            if o.status == cause && o.time <= t {
                let g = fit.as_ref().map_or(1.0, |f| f.survival_left(o.time, &r.x, &r.marker, r.arm));
                1.0 / g.max(floor)
            } else {
                0.0
            }
        })
        .sum();
    Ok(total / rows.len() as f64)
}

fn difference(trial: &TwoArmTrial, cfg: &NcdeConfig, est: &EstimatorConfig) -> Result<(f64, f64), EstimatorError> {
    let fused = trial.to_fused(cfg.t_star)?;
    let (curve, _) = estimate_curve(&fused, est)?;
    let counterfactual = curve.points[0].estimate;
    let rows: Vec<&SubjectRecord> = trial.arm(Arm::Investigational).collect();
    let actual = ipcw_incidence(&rows, cfg.t_star, cfg.cause, est, fused.dim(), fused.marker_len())?;
    Ok((counterfactual, actual))
}

/// Linear-interpolation sample quantile of sorted values.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn ncde_test(trial: &TwoArmTrial, cfg: &NcdeConfig) -> Result<NcdeTestResult, EstimatorError> {
    if !(cfg.t_star > 0.0) || cfg.t_star > trial.horizon() {
        return Err(EstimatorError::GridBeyondHorizon { time: cfg.t_star, horizon: trial.horizon() });
    }
    if cfg.replicates < 200 {
        return Err(EstimatorError::BadSetting("bootstrap replicates must be at least 200".into()));
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(EstimatorError::BadSetting("alpha must lie in (0, 1)".into()));
    }
    if cfg.cause == 0 || cfg.cause > trial.causes() {
        return Err(crate::eif::EifError::CauseOutOfRange { cause: cfg.cause, causes: trial.causes() }.into());
    }
    let events = trial
        .arm(Arm::Approved)
        .filter_map(|r| r.outcome)
        .filter(|o| o.status == cfg.cause && o.time <= cfg.t_star)
        .count();
    if events < MIN_EVENTS {
        return Err(EstimatorError::InsufficientEvents { arm: Arm::Approved, events, needed: MIN_EVENTS, t_star: cfg.t_star });
    }
    let est = estimator_settings(cfg);
    est.validate()?;
    let (counterfactual, actual) = difference(trial, cfg, &est)?;

    let by_arm: Vec<Vec<usize>> = [Arm::Approved, Arm::Investigational]
        .iter()
        .map(|&a| (0..trial.records().len()).filter(|&i| trial.records()[i].arm == a).collect())
        .collect();
    let draws: Vec<Option<f64>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(cfg.seed, stream_id(NCDE_GROUP, b as u64));
            let rows: Vec<usize> =
                by_arm.iter().flat_map(|idx| (0..idx.len()).map(|_| idx[rng.random_range(0..idx.len())]).collect::<Vec<_>>()).collect();
            let records = rows.iter().map(|&i| trial.records()[i].clone()).collect();
            // The resample only has to reach t_star, not the original horizon.
            let sample = TwoArmTrial::new(records, trial.causes(), cfg.t_star).ok()?;
            difference(&sample, cfg, &est).ok().map(|(c, a)| c - a)
        })
        .collect();
    let failed = draws.iter().filter(|d| d.is_none()).count();
    let mut ok: Vec<f64> = draws.into_iter().flatten().collect();
    if ok.len() < 2 {
        return Err(EstimatorError::BadSetting("every bootstrap replicate failed".into()));
    }
    ok.sort_by(f64::total_cmp);
    let ci_lo = quantile(&ok, cfg.alpha / 2.0);
    let ci_hi = quantile(&ok, 1.0 - cfg.alpha / 2.0);
    Ok(NcdeTestResult {
        schema_version: SCHEMA_VERSION,
        t_star: cfg.t_star,
        cause: cfg.cause,
        counterfactual,
        actual,
        difference: counterfactual - actual,
        ci_lo,
        ci_hi,
        alpha: cfg.alpha,
        replicates: cfg.replicates,
        failed_replicates: failed,
        reject: ci_lo > 0.0 || ci_hi < 0.0,
    })
}
