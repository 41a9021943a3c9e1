//! Identification plug-ins and per-row influence-function evaluation.
//!
//! A row's uncentered influence value splits into three pieces:
//! - `augmentation`: the weighted outcome residual, nonzero only for
//!   historical approved-arm rows;
//! - `residual`: the bridging arm-a residual of conditional risk at the
//!   observed marker around its marker-law average;
//! - `projection`: the marker-law average scaled by `1{bridging}/kappa`.
//!
//! Their sum averages to the one-step estimate. The canonical gradient adds
//! `(1 - 1{bridging}/kappa) * R` to that sum; see [`RowTerms::centered`].

pub mod toy;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Arm, FusedDataset, Outcome, SubjectRecord, Trial};
use crate::nuisance::{HazardPath, NuisanceError, NuisanceModel, Truncation};
use crate::quadrature::MarkerRule;

#[derive(Debug, Error)]
pub enum EifError {
    #[error("no bridging rows")]
    NoBridgingRows,
    #[error("no bridging rows in arm {0}")]
    NoArmRows(Arm),
    #[error("no historical approved-arm rows")]
    NoHistoricalApprovedRows,
    #[error("cause {cause} outside 1..={causes}")]
    CauseOutOfRange { cause: usize, causes: usize },
    #[error("target arm must be approved or investigational, got {0}")]
    BadTargetArm(Arm),
    #[error("row belongs to fold {row_fold} but the models were trained without fold {held_out:?}")]
    FoldMismatch { row_fold: usize, held_out: Option<usize> },
    #[error("positivity violated: {0}")]
    PositivityViolated(String),
    #[error(transparent)]
    Nuisance(#[from] NuisanceError),
}

/// How often a floor or cap changed a value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncationCounts {
    pub propensity: usize,
    pub censoring: usize,
    pub density_ratio: usize,
}

impl std::ops::AddAssign for TruncationCounts {
    fn add_assign(&mut self, o: Self) {
        self.propensity += o.propensity;
        self.censoring += o.censoring;
        self.density_ratio += o.density_ratio;
    }
}

impl TruncationCounts {
    fn floor(&mut self, v: f64, floor: f64, which: fn(&mut Self) -> &mut usize) -> f64 {
        if v < floor {
            *which(self) += 1;
            floor
        } else {
            v
        }
    }
}

fn bump_propensity(c: &mut TruncationCounts) -> &mut usize {
    &mut c.propensity
}

fn bump_censoring(c: &mut TruncationCounts) -> &mut usize {
    &mut c.censoring
}

/// Inverse weights a row carries for target arm `arm`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowFactors {
    /// Historical approved rows: trial-propensity ratio times the marker
    /// density ratio, over kappa. Zero elsewhere.
    pub historical: f64,
    /// Bridging arm-`arm` rows: 1 / (kappa * P(arm | x, bridging)). Zero elsewhere.
    pub bridging: f64,
    /// 1{bridging} / kappa.
    pub gamma_over_kappa: f64,
}

pub fn check_target(arm: Arm) -> Result<(), EifError> {
    match arm {
        Arm::Placebo => Err(EifError::BadTargetArm(arm)),
        _ => Ok(()),
    }
}

pub fn check_cause(cause: usize, causes: usize) -> Result<(), EifError> {
    if cause == 0 || cause > causes {
        Err(EifError::CauseOutOfRange { cause, causes })
    } else {
        Ok(())
    }
}

/// Weights for one row, with floors and the ratio cap applied.
pub fn row_factors<M: NuisanceModel + ?Sized>(
    model: &M,
    rec: &SubjectRecord,
    arm: Arm,
    trunc: &Truncation,
    counts: &mut TruncationCounts,
) -> Result<RowFactors, EifError> {
    let kappa = model.kappa();
    let mut f = RowFactors { historical: 0.0, bridging: 0.0, gamma_over_kappa: 0.0 };
    match rec.trial {
        Trial::Historical if rec.arm == Arm::Approved => {
            let num = model.trial_propensity(&rec.x);
            let den = counts.floor(model.approved_propensity(&rec.x), trunc.propensity_floor, bump_propensity);
            let target = model.marker_law(&rec.x, arm, Trial::Bridging)?;
            let source = model.marker_law(&rec.x, Arm::Approved, Trial::Historical)?;
            let mut ratio = (target.log_density(&rec.marker) - source.log_density(&rec.marker)).exp();
            if ratio > trunc.ratio_cap {
                counts.density_ratio += 1;
                ratio = trunc.ratio_cap;
            }
            f.historical = num / den * ratio / kappa;
        }
        Trial::Historical => {}
        Trial::Bridging => {
            f.gamma_over_kappa = 1.0 / kappa;
            if rec.arm == arm {
                let p = counts.floor(model.arm_propensity(&rec.x, arm), trunc.propensity_floor, bump_propensity);
                f.bridging = 1.0 / (kappa * p);
            }
        }
    }
    Ok(f)
}

/// Marker-law average of the conditional incidence, per (time, cause).
pub fn marker_average<M: NuisanceModel + ?Sized>(
    model: &M,
    x: &[f64],
    arm: Arm,
    rule: &MarkerRule,
    times: &[f64],
) -> Result<Vec<f64>, EifError> {
    let law = model.marker_law(x, arm, Trial::Bridging)?;
    let mut acc = vec![0.0; times.len() * model.causes()];
    for (s, w) in rule.points(&law) {
        for (a, v) in acc.iter_mut().zip(model.incidence(x, &s, times)) {
            *a += w * v;
        }
    }
    Ok(acc)
}

fn ratio_or_zero(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Complete-data outcome residual `1{T <= t, cause j} - F_j(t | x, s)` for
/// each time. Requires an uncensored outcome.
pub fn complete_residual(path: &HazardPath, outcome: Outcome, times: &[f64], cause: usize) -> Vec<f64> {
    times
        .iter()
        .map(|&t| {
            let y = if outcome.status == cause && outcome.time <= t { 1.0 } else { 0.0 };
            y - path.incidence_at(t, cause - 1)
        })
        .collect()
}

/// Single-endpoint censored residual: the martingale integral of
/// `G(t)/G(u)` divided by censoring survival, over jumps up to
/// `min(t, T~)`, with the counting-process jump at `T~`.
pub fn censored_residual(
    path: &HazardPath,
    outcome: Outcome,
    censor_at_obs: f64,
    times: &[f64],
    censoring_floor: f64,
    counts: &mut TruncationCounts,
) -> Vec<f64> {
    let gc_obs = counts.floor(censor_at_obs, censoring_floor, bump_censoring);
    let g_obs = path.survival_at(outcome.time);
    let stop = path.count_at(outcome.time);
    let gc: Vec<f64> = (0..stop).map(|m| counts.floor(path.censor_left(m), censoring_floor, bump_censoring)).collect();
    times
        .iter()
        .map(|&t| {
            let g_t = path.survival_at(t);
            let upto = path.count_at(t).min(stop);
            let compensator: f64 =
                (0..upto).map(|m| ratio_or_zero(g_t, path.survival(m)) * path.hazard(m) / gc[m]).sum();
            let jump = if outcome.status == 1 && outcome.time <= t { ratio_or_zero(g_t, g_obs) / gc_obs } else { 0.0 };
            jump - compensator
        })
        .collect()
}

/// Competing-risks residual for target cause `cause` (1-based): sums over
/// causes k of the kernel `1{k=j} - (F_j(t) - F_j(u))/G(u)` against the
/// cause-k counting-process residual, divided by censoring survival.
pub fn competing_residual(
    path: &HazardPath,
    outcome: Outcome,
    censor_at_obs: f64,
    times: &[f64],
    cause: usize,
    censoring_floor: f64,
    counts: &mut TruncationCounts,
) -> Vec<f64> {
    let j = cause - 1;
    let causes = path.causes();
    let table = path.incidence_table();
    let f_at = |m: usize| table[m * causes + j];
    let f_time = |t: f64| match path.count_at(t) {
        0 => 0.0,
        k => f_at(k - 1),
    };
    let gc_obs = counts.floor(censor_at_obs, censoring_floor, bump_censoring);
    let stop = path.count_at(outcome.time);
    let gc: Vec<f64> = (0..stop).map(|m| counts.floor(path.censor_left(m), censoring_floor, bump_censoring)).collect();
    let f_obs = f_time(outcome.time);
    let g_obs = path.survival_at(outcome.time);
    times
        .iter()
        .map(|&t| {
            let f_t = f_time(t);
            let upto = path.count_at(t).min(stop);
            let mut compensator = 0.0;
            for m in 0..upto {
                let q = path.hazard(m);
                let own = q * path.share(m, j);
                compensator += (own - ratio_or_zero(f_t - f_at(m), path.survival(m)) * q) / gc[m];
            }
            let jump = if outcome.status >= 1 && outcome.time <= t {
                let diag = if outcome.status == cause { 1.0 } else { 0.0 };
                (diag - ratio_or_zero(f_t - f_obs, g_obs)) / gc_obs
            } else {
                0.0
            };
            jump - compensator
        })
        .collect()
}

/// Influence pieces for one (row, arm, cause, time).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RowTerms {
    pub augmentation: f64,
    pub residual: f64,
    pub projection: f64,
    pub gamma_over_kappa: f64,
}

impl RowTerms {
    /// Sum of the three pieces; its sample mean is the one-step estimate.
    pub fn raw(&self) -> f64 {
        self.augmentation + self.residual + self.projection
    }

    /// Canonical gradient at parameter value `value`.
    pub fn centered(&self, value: f64) -> f64 {
        self.raw() - self.gamma_over_kappa * value
    }

    /// Uncentered influence value whose mean is `value` and whose deviation
    /// from `value` is the canonical gradient.
    pub fn uncentered(&self, value: f64) -> f64 {
        self.raw() + (1.0 - self.gamma_over_kappa) * value
    }

    /// The risk-scale display centered by subtracting the parameter: equals
    /// `raw - value` (not a gradient at historical rows).
    pub fn display_centered(&self, value: f64) -> f64 {
        self.raw() - value
    }

    /// The survival-scale display "1 - {...}" centered by subtracting the
    /// risk; off the gradient by `(1 - gamma/kappa)(1 - value)`.
    pub fn survival_display_centered(&self, value: f64) -> f64 {
        self.raw() + 1.0 - self.gamma_over_kappa - value
    }
}

/// Which outcome residual to use for historical approved rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualForm {
    /// Requires no censoring; `1{T<=t} - F(t)`.
    Complete,
    /// Single-endpoint censored form.
    Censored,
    /// Cause-specific kernel; valid for any number of causes.
    Competing,
}

/// Combine weights with the outcome residual (historical approved rows),
/// the conditional incidence at the observed marker and its marker-law
/// average (bridging rows).
pub fn assemble(f: &RowFactors, residual: Option<f64>, observed: Option<f64>, average: Option<f64>) -> RowTerms {
    let mut terms = RowTerms { gamma_over_kappa: f.gamma_over_kappa, ..RowTerms::default() };
    if let Some(r) = residual {
        terms.augmentation = f.historical * r;
    }
    if let Some(avg) = average {
        terms.projection = f.gamma_over_kappa * avg;
        if f.bridging != 0.0 {
            terms.residual = f.bridging * (observed.expect("bridging rows carry observed incidence") - avg);
        }
    }
    terms
}

/// Settings shared by every row evaluation.
#[derive(Debug, Clone)]
pub struct RowContext<'a> {
    pub truncation: Truncation,
    pub rule: &'a MarkerRule,
    pub times: &'a [f64],
    pub arms: &'a [Arm],
    /// 1-based causes.
    pub causes: &'a [usize],
    pub form: ResidualForm,
}

/// Terms for every (arm, cause, time), arm-major then cause then time.
pub fn evaluate_row<M: NuisanceModel + ?Sized>(
    model: &M,
    rec: &SubjectRecord,
    ctx: &RowContext<'_>,
    counts: &mut TruncationCounts,
) -> Result<Vec<RowTerms>, EifError> {
    let nt = ctx.times.len();
    let j_all = model.causes();
    for &c in ctx.causes {
        check_cause(c, j_all)?;
    }
    let mut out = Vec::with_capacity(ctx.arms.len() * ctx.causes.len() * nt);

    // Outcome residual does not depend on the target arm.
    let mut residuals: Vec<Vec<f64>> = Vec::new();
    let mut observed_incidence: Vec<f64> = Vec::new();
    match (rec.trial, rec.outcome) {
        (Trial::Historical, Some(o)) if rec.arm == Arm::Approved => {
            let mut extra = ctx.times.to_vec();
            extra.push(o.time);
            let path = model.hazard_path(&rec.x, &rec.marker, &extra);
            let censor = model.censoring_left(&rec.x, &rec.marker, o.time);
            let floor = ctx.truncation.censoring_floor;
            for &c in ctx.causes {
                residuals.push(match ctx.form {
                    ResidualForm::Complete => complete_residual(&path, o, ctx.times, c),
                    ResidualForm::Censored => censored_residual(&path, o, censor, ctx.times, floor, counts),
                    ResidualForm::Competing => competing_residual(&path, o, censor, ctx.times, c, floor, counts),
                });
            }
        }
        (Trial::Bridging, _) => {
            observed_incidence = model.incidence(&rec.x, &rec.marker, ctx.times);
        }
        _ => {}
    }

    for &arm in ctx.arms {
        check_target(arm)?;
        let f = row_factors(model, rec, arm, &ctx.truncation, counts)?;
        let average = if rec.trial == Trial::Bridging {
            marker_average(model, &rec.x, arm, ctx.rule, ctx.times)?
        } else {
            Vec::new()
        };
        for (ci, &c) in ctx.causes.iter().enumerate() {
            for ti in 0..nt {
                let k = ti * j_all + c - 1;
                out.push(assemble(
                    &f,
                    residuals.get(ci).map(|r| r[ti]),
                    observed_incidence.get(k).copied(),
                    average.get(k).copied(),
                ));
            }
        }
    }
    Ok(out)
}

fn single<M: NuisanceModel + ?Sized>(
    model: &M,
    rec: &SubjectRecord,
    arm: Arm,
    t: f64,
    cause: usize,
    form: ResidualForm,
    truncation: &Truncation,
    rule: &MarkerRule,
) -> Result<RowTerms, EifError> {
    let times = [t];
    let arms = [arm];
    let causes = [cause];
    let ctx = RowContext { truncation: *truncation, rule, times: &times, arms: &arms, causes: &causes, form };
    let mut counts = TruncationCounts::default();
    Ok(evaluate_row(model, rec, &ctx, &mut counts)?[0])
}

/// Single-endpoint censored influence pieces for one row.
pub fn eif_censored_row<M: NuisanceModel + ?Sized>(
    model: &M,
    rec: &SubjectRecord,
    arm: Arm,
    t: f64,
    truncation: &Truncation,
    rule: &MarkerRule,
) -> Result<RowTerms, EifError> {
    single(model, rec, arm, t, 1, ResidualForm::Censored, truncation, rule)
}

/// Cause-specific influence pieces for one row (cause is 1-based).
pub fn eif_competing_row<M: NuisanceModel + ?Sized>(
    model: &M,
    rec: &SubjectRecord,
    arm: Arm,
    t: f64,
    cause: usize,
    truncation: &Truncation,
    rule: &MarkerRule,
) -> Result<RowTerms, EifError> {
    single(model, rec, arm, t, cause, ResidualForm::Competing, truncation, rule)
}

/// Complete-data influence pieces (no censoring allowed).
pub fn eif_complete_row<M: NuisanceModel + ?Sized>(
    model: &M,
    rec: &SubjectRecord,
    arm: Arm,
    t: f64,
    cause: usize,
    truncation: &Truncation,
    rule: &MarkerRule,
) -> Result<RowTerms, EifError> {
    single(model, rec, arm, t, cause, ResidualForm::Complete, truncation, rule)
}

/// Guard used by callers that pair a row with the bundle of its fold.
pub fn check_fold(held_out: Option<usize>, row_fold: usize) -> Result<(), EifError> {
    if held_out == Some(row_fold) {
        Ok(())
    } else {
        Err(EifError::FoldMismatch { row_fold, held_out })
    }
}

/// A plug-in value with the standard error of its per-row contributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PluginEstimate {
    pub value: f64,
    pub se: f64,
    /// Set when no historical event falls at or before `t`.
    pub low_information: bool,
    pub truncation: TruncationCounts,
}

fn summarize(contrib: &[f64], n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = contrib.iter().sum::<f64>() / nf;
    let ss: f64 = contrib.iter().map(|v| (v - mean).powi(2)).sum::<f64>() + (n - contrib.len()) as f64 * mean * mean;
    let sd = if n > 1 { (ss / (nf - 1.0)).sqrt() } else { 0.0 };
    (mean, sd / nf.sqrt())
}

/// Bridging-sample average of the marker-law average of conditional incidence.
pub fn plugin_mediation<M: NuisanceModel + ?Sized>(
    model: &M,
    ds: &FusedDataset,
    arm: Arm,
    t: f64,
    cause: usize,
    rule: &MarkerRule,
) -> Result<PluginEstimate, EifError> {
    check_target(arm)?;
    check_cause(cause, model.causes())?;
    let mut contrib = Vec::with_capacity(ds.n_bridge());
    for r in ds.bridging() {
        contrib.push(marker_average(model, &r.x, arm, rule, &[t])?[cause - 1]);
    }
    if contrib.is_empty() {
        return Err(EifError::NoBridgingRows);
    }
    let n = contrib.len();
    let (value, se) = summarize(&contrib, n);
    Ok(PluginEstimate { value, se, low_information: false, truncation: TruncationCounts::default() })
}

/// Inverse arm-propensity weighted conditional incidence over bridging arm-a rows.
pub fn plugin_outcome<M: NuisanceModel + ?Sized>(
    model: &M,
    ds: &FusedDataset,
    arm: Arm,
    t: f64,
    cause: usize,
    truncation: &Truncation,
) -> Result<PluginEstimate, EifError> {
    check_target(arm)?;
    check_cause(cause, model.causes())?;
    let mut counts = TruncationCounts::default();
    let mut contrib = Vec::new();
    for r in ds.bridging().filter(|r| r.arm == arm) {
        let f = row_factors(model, r, arm, truncation, &mut counts)?;
        contrib.push(f.bridging * model.incidence(&r.x, &r.marker, &[t])[cause - 1]);
    }
    if contrib.is_empty() {
        return Err(EifError::NoArmRows(arm));
    }
    let (value, se) = summarize(&contrib, ds.len());
    Ok(PluginEstimate { value, se, low_information: false, truncation: counts })
}

/// Censoring- and density-ratio-weighted event indicator over historical
/// approved rows.
pub fn plugin_weighting<M: NuisanceModel + ?Sized>(
    model: &M,
    ds: &FusedDataset,
    arm: Arm,
    t: f64,
    cause: usize,
    truncation: &Truncation,
) -> Result<PluginEstimate, EifError> {
    check_target(arm)?;
    check_cause(cause, model.causes())?;
    let mut counts = TruncationCounts::default();
    let mut contrib = Vec::new();
    let mut any_event = false;
    for r in ds.historical().filter(|r| r.arm == Arm::Approved) {
        let o = r.outcome.expect("historical rows carry outcomes");
        if o.time <= t && o.status == cause {
            any_event = true;
            let f = row_factors(model, r, arm, truncation, &mut counts)?;
            let gc = counts.floor(model.censoring_left(&r.x, &r.marker, o.time), truncation.censoring_floor, bump_censoring);
            contrib.push(f.historical / gc);
        } else {
            contrib.push(0.0);
        }
    }
    if contrib.is_empty() {
        return Err(EifError::NoHistoricalApprovedRows);
    }
    let (value, se) = summarize(&contrib, ds.len());
    Ok(PluginEstimate { value, se, low_information: !any_event, truncation: counts })
}

/// Result of comparing cause-specific sums with the all-cause value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SumCheck {
    pub cause_values: Vec<f64>,
    pub cause_sum: f64,
    pub all_cause: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Cause-specific mediation plug-ins against the all-cause value
/// `1 - survival`, all from the same fits.
pub fn check_sum_to_allcause<M: NuisanceModel + ?Sized>(
    model: &M,
    ds: &FusedDataset,
    arm: Arm,
    t: f64,
    rule: &MarkerRule,
    tolerance: f64,
) -> Result<SumCheck, EifError> {
    check_target(arm)?;
    let causes = model.causes();
    let mut cause_acc = vec![0.0; causes];
    let mut all = 0.0;
    let n_b = ds.n_bridge();
    if n_b == 0 {
        return Err(EifError::NoBridgingRows);
    }
    for r in ds.bridging() {
        let law = model.marker_law(&r.x, arm, Trial::Bridging)?;
        for (s, w) in rule.points(&law) {
            let path = model.hazard_path(&r.x, &s, &[t]);
            for (k, a) in cause_acc.iter_mut().enumerate() {
                *a += w * path.incidence_at(t, k);
            }
            all += w * (1.0 - path.survival_at(t));
        }
    }
    let cause_values: Vec<f64> = cause_acc.iter().map(|v| v / n_b as f64).collect();
    let cause_sum = cause_values.iter().sum();
    let all_cause = all / n_b as f64;
    Ok(SumCheck { cause_values, cause_sum, all_cause, tolerance, passed: (cause_sum - all_cause).abs() <= tolerance })
}
