//! Cross-fitted one-step curves with pointwise and uniform inference,
//! monotone correction, sensitivity adjustment, relative efficacy, the
//! direct-effect test and the misspecification suite.

pub mod band;
pub mod misspec;
pub mod monotone;
pub mod ncde;
pub mod relve;

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

pub use band::{uniform_band, Band};
pub use misspec::{misspecification_suite, MisspecConfig, MisspecReport, Scenario};
pub use monotone::{monotone_correct, pava};
pub use ncde::{ncde_test, NcdeConfig, NcdeTestResult};
pub use relve::{relative_ve, ArmCurve, RelVeEstimate, RelVePoint, RelVeStatus};

use crate::dataset::{Arm, DataError, FusedDataset, Trial};
use crate::eif::{evaluate_row, EifError, ResidualForm, RowContext, TruncationCounts};
use crate::nuisance::{fit_bundle, make_folds, NuisanceError, NuisanceModel, NuisanceSpec, Truncation};
use crate::quadrature::MarkerRule;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("grid time {time} is beyond the horizon {horizon}")]
    GridBeyondHorizon { time: f64, horizon: f64 },
    #[error("grid time {0} must be positive and finite")]
    BadGridTime(f64),
    #[error("empty time grid")]
    EmptyGrid,
    #[error("invalid setting: {0}")]
    BadSetting(String),
    #[error("influence values have zero spread for arm {arm}, cause {cause}, t = {time}")]
    DegenerateVariance { arm: Arm, cause: usize, time: f64 },
    #[error("approved-arm risk is at most {0} at every grid time")]
    DenominatorNearZero(f64),
    #[error("curves do not share grid, causes or subjects")]
    Mismatch,
    #[error("arm {arm} has {events} events by t = {t_star}; need at least {needed}")]
    InsufficientEvents { arm: Arm, events: usize, needed: usize, t_star: f64 },
    #[error(transparent)]
    Eif(#[from] EifError),
    #[error(transparent)]
    Nuisance(#[from] NuisanceError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Transport adjustment: `R <- clamp(rho * logistic(logit(R) + h_offset), 0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivitySpec {
    pub rho: f64,
    pub h_offset: f64,
    /// Arms the adjustment applies to.
    pub arms: Vec<Arm>,
}

impl Default for SensitivitySpec {
    fn default() -> Self {
        SensitivitySpec { rho: 1.0, h_offset: 0.0, arms: vec![Arm::Investigational] }
    }
}

impl SensitivitySpec {
    pub fn is_identity(&self) -> bool {
        self.rho == 1.0 && self.h_offset == 0.0
    }

    /// Adjusted value, its derivative in the unadjusted value, and whether
    /// the clamp to [0, 1] changed anything.
    pub fn adjust(&self, risk: f64) -> (f64, f64, bool) {
        let r = risk.clamp(1e-12, 1.0 - 1e-12);
        let p = 1.0 / (1.0 + (-((r / (1.0 - r)).ln() + self.h_offset)).exp());
        let value = self.rho * p;
        let slope = self.rho * p * (1.0 - p) / (r * (1.0 - r));
        if value > 1.0 {
            (1.0, 0.0, true)
        } else {
            (value, slope, false)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub folds: usize,
    pub seed: u64,
    /// Explicit grid; empty means deciles of historical event times up to
    /// the horizon.
    pub grid: Vec<f64>,
    pub arms: Vec<Arm>,
    /// 1-based causes.
    pub causes: Vec<usize>,
    pub spec: Option<NuisanceSpec>,
    pub truncation: Truncation,
    pub sensitivity: SensitivitySpec,
    pub level: f64,
    /// Multiplier draws for the uniform band; 0 skips the band.
    pub multipliers: usize,
    pub hermite_nodes: usize,
    pub mc_draws: usize,
    /// Residual form; chosen from the number of causes when absent.
    pub form: Option<ResidualForm>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            folds: 5,
            seed: 1,
            grid: Vec::new(),
            arms: vec![Arm::Investigational],
            causes: vec![1],
            spec: None,
            truncation: Truncation::default(),
            sensitivity: SensitivitySpec::default(),
            level: 0.95,
            multipliers: 1000,
            hermite_nodes: 32,
            mc_draws: 256,
            form: None,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        let bad = |m: &str| Err(EstimatorError::BadSetting(m.to_string()));
        if self.folds < 2 {
            return bad("folds must be at least 2");
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad("level must lie in (0, 1)");
        }
        if self.multipliers != 0 && self.multipliers < 200 {
            return bad("multipliers must be 0 (no band) or at least 200");
        }
        if !(self.sensitivity.rho > 0.0) || !self.sensitivity.h_offset.is_finite() {
            return bad("rho must be positive and h_offset finite");
        }
        if self.arms.is_empty() || self.causes.is_empty() {
            return bad("need at least one arm and one cause");
        }
        if self.hermite_nodes == 0 || self.mc_draws == 0 {
            return bad("marker integration needs at least one node");
        }
        Ok(())
    }

    pub fn spec_for(&self, ds: &FusedDataset) -> NuisanceSpec {
        self.spec.clone().unwrap_or_else(|| NuisanceSpec::main_effects(ds.dim(), ds.marker_len()))
    }

    pub fn form_for(&self, causes: usize) -> ResidualForm {
        self.form.unwrap_or(if causes == 1 { ResidualForm::Censored } else { ResidualForm::Competing })
    }
}

/// Deciles of observed historical event times at or before the horizon.
pub fn default_grid(ds: &FusedDataset) -> Vec<f64> {
    let mut times: Vec<f64> = ds
        .historical()
        .filter_map(|r| r.outcome)
        .filter(|o| o.status > 0 && o.time <= ds.horizon())
        .map(|o| o.time)
        .collect();
    if times.is_empty() {
        return vec![ds.horizon()];
    }
    times.sort_by(f64::total_cmp);
    let n = times.len();
    let mut grid: Vec<f64> = (1..=10).map(|d| times[((d * n).div_ceil(10)).max(1) - 1]).collect();
    grid.dedup();
    grid
}

pub fn resolve_grid(ds: &FusedDataset, grid: &[f64]) -> Result<Vec<f64>, EstimatorError> {
    let mut g = if grid.is_empty() { default_grid(ds) } else { grid.to_vec() };
    for &t in &g {
        if !(t.is_finite() && t > 0.0) {
            return Err(EstimatorError::BadGridTime(t));
        }
        if t > ds.horizon() {
            return Err(EstimatorError::GridBeyondHorizon { time: t, horizon: ds.horizon() });
        }
    }
    g.sort_by(f64::total_cmp);
    g.dedup();
    if g.is_empty() {
        return Err(EstimatorError::EmptyGrid);
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EifColumn {
    pub arm: Arm,
    pub cause: usize,
    pub time: f64,
}

/// Uncentered influence values, one column per (arm, cause, time) in
/// arm-major, cause, time order. Each column averages to its estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EifMatrix {
    pub n: usize,
    pub columns: Vec<EifColumn>,
    /// Column-major, `columns.len() * n`.
    pub values: Vec<f64>,
}

impl EifMatrix {
    pub fn column(&self, c: usize) -> &[f64] {
        &self.values[c * self.n..(c + 1) * self.n]
    }

    pub fn estimate(&self, c: usize) -> f64 {
        mean(self.column(c))
    }

    pub fn find(&self, arm: Arm, cause: usize) -> Vec<usize> {
        (0..self.columns.len()).filter(|&c| self.columns[c].arm == arm && self.columns[c].cause == cause).collect()
    }

    /// Estimates and influence columns for one (arm, cause).
    pub fn arm_curve(&self, arm: Arm, cause: usize) -> ArmCurve {
        let cols = self.find(arm, cause);
        ArmCurve {
            times: cols.iter().map(|&c| self.columns[c].time).collect(),
            estimates: cols.iter().map(|&c| self.estimate(c)).collect(),
            phi: cols.iter().map(|&c| self.column(c).to_vec()).collect(),
        }
    }

    /// Long format: subject_id, arm, time, cause, phi.
    pub fn write_csv(&self, path: &Path) -> Result<(), EstimatorError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "subject_id,arm,time,cause,phi")?;
        for i in 0..self.n {
            for (c, col) in self.columns.iter().enumerate() {
                writeln!(w, "{},{},{},{},{}", i + 1, col.arm, col.time, col.cause, self.values[c * self.n + i])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonotonePoint {
    pub estimate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub band_lo: f64,
    pub band_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub arm: Arm,
    pub cause: usize,
    pub time: f64,
    pub estimate: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub band_lo: f64,
    pub band_hi: f64,
    /// Estimate before any sensitivity adjustment.
    pub unadjusted: f64,
    pub monotone: MonotonePoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveMetadata {
    pub folds: usize,
    pub seed: u64,
    pub truncation: Truncation,
    pub multipliers: usize,
    pub level: f64,
    pub n_hist: usize,
    pub n_bridge: usize,
    pub kappa: f64,
    pub sensitivity: SensitivitySpec,
    pub form: ResidualForm,
    /// Sup-statistic quantile used for each (arm, cause) band.
    pub band_quantiles: Vec<(Arm, usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveEstimate {
    pub schema_version: u32,
    pub grid: Vec<f64>,
    pub points: Vec<CurvePoint>,
    pub metadata: CurveMetadata,
    pub truncation_counts: TruncationCounts,
    pub warnings: Vec<String>,
}

impl CurveEstimate {
    pub fn point(&self, arm: Arm, cause: usize, time: f64) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.arm == arm && p.cause == cause && p.time == time)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), EstimatorError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(
            w,
            "arm,cause,time,estimate,se,ci_lo,ci_hi,band_lo,band_hi,unadjusted,\
             mono_estimate,mono_ci_lo,mono_ci_hi,mono_band_lo,mono_band_hi"
        )?;
        for p in &self.points {
            let m = &p.monotone;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                p.arm,
                p.cause,
                p.time,
                p.estimate,
                p.se,
                p.ci_lo,
                p.ci_hi,
                p.band_lo,
                p.band_hi,
                p.unadjusted,
                m.estimate,
                m.ci_lo,
                m.ci_hi,
                m.band_lo,
                m.band_hi
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation with the n - 1 divisor.
pub(crate) fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

pub(crate) fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p)
}

fn check_rows(ds: &FusedDataset, cfg: &EstimatorConfig) -> Result<(), EstimatorError> {
    for &arm in &cfg.arms {
        if arm == Arm::Placebo {
            return Err(EifError::BadTargetArm(arm).into());
        }
        if ds.count(Trial::Bridging, arm) == 0 {
            return Err(EifError::NoArmRows(arm).into());
        }
    }
    for &c in &cfg.causes {
        crate::eif::check_cause(c, ds.causes())?;
    }
    Ok(())
}

struct Pieces {
    /// Row-major n x C raw sums.
    raw: Vec<f64>,
    gamma_over_kappa: Vec<f64>,
    counts: TruncationCounts,
}

fn evaluate_all<M: NuisanceModel + ?Sized + Sync>(
    ds: &FusedDataset,
    cfg: &EstimatorConfig,
    grid: &[f64],
    models: &[&M],
    folds: &[usize],
) -> Result<Pieces, EstimatorError> {
    let rule = MarkerRule::for_markers(ds.marker_len(), cfg.hermite_nodes, cfg.mc_draws, cfg.seed);
    let ctx = RowContext {
        truncation: cfg.truncation,
        rule: &rule,
        times: grid,
        arms: &cfg.arms,
        causes: &cfg.causes,
        form: cfg.form_for(ds.causes()),
    };
    let rows: Vec<(Vec<f64>, f64, TruncationCounts)> = ds
        .records()
        .par_iter()
        .enumerate()
        .map(|(i, rec)| {
            let mut counts = TruncationCounts::default();
            let terms = evaluate_row(models[folds[i]], rec, &ctx, &mut counts)?;
            let g = terms.first().map_or(0.0, |t| t.gamma_over_kappa);
            Ok((terms.iter().map(|t| t.raw()).collect(), g, counts))
        })
        .collect::<Result<_, EifError>>()?;
    let mut pieces = Pieces { raw: Vec::new(), gamma_over_kappa: Vec::new(), counts: TruncationCounts::default() };
    for (raw, g, c) in rows {
        pieces.raw.extend(raw);
        pieces.gamma_over_kappa.push(g);
        pieces.counts += c;
    }
    Ok(pieces)
}

/// K-fold cross-fitted estimate with out-of-fold working models.
pub fn estimate_curve(ds: &FusedDataset, cfg: &EstimatorConfig) -> Result<(CurveEstimate, EifMatrix), EstimatorError> {
    cfg.validate()?;
    check_rows(ds, cfg)?;
    let grid = resolve_grid(ds, &cfg.grid)?;
    let spec = cfg.spec_for(ds);
    let folds = make_folds(ds, cfg.folds, cfg.seed)?;
    let bundles = (0..cfg.folds)
        .into_par_iter()
        .map(|k| fit_bundle(ds, &folds, k, &spec, &cfg.truncation))
        .collect::<Result<Vec<_>, _>>()?;
    let models: Vec<&crate::nuisance::NuisanceBundle> = bundles.iter().collect();
    let pieces = evaluate_all(ds, cfg, &grid, &models, &folds)?;
    finish(ds, cfg, grid, pieces)
}

/// Same pipeline with one fixed model for every row and no cross-fitting;
/// used with closed-form nuisances.
pub fn estimate_curve_with_model(
    ds: &FusedDataset,
    cfg: &EstimatorConfig,
    model: &dyn NuisanceModel,
) -> Result<(CurveEstimate, EifMatrix), EstimatorError> {
    cfg.validate()?;
    check_rows(ds, cfg)?;
    let grid = resolve_grid(ds, &cfg.grid)?;
    let folds = vec![0; ds.len()];
    let pieces = evaluate_all(ds, cfg, &grid, &[model], &folds)?;
    finish(ds, cfg, grid, pieces)
}

fn finish(
    ds: &FusedDataset,
    cfg: &EstimatorConfig,
    grid: Vec<f64>,
    pieces: Pieces,
) -> Result<(CurveEstimate, EifMatrix), EstimatorError> {
    let n = ds.len();
    let mut columns = Vec::new();
    for &arm in &cfg.arms {
        for &cause in &cfg.causes {
            for &time in &grid {
                columns.push(EifColumn { arm, cause, time });
            }
        }
    }
    let nc = columns.len();
    let mut values = vec![0.0; nc * n];
    let mut unadjusted = Vec::with_capacity(nc);
    let mut warnings = Vec::new();
    for c in 0..nc {
        let col = &mut values[c * n..(c + 1) * n];
        for (i, v) in col.iter_mut().enumerate() {
            *v = pieces.raw[i * nc + c];
        }
        let r = mean(col);
        for (v, g) in col.iter_mut().zip(&pieces.gamma_over_kappa) {
            *v += (1.0 - g) * r;
        }
        unadjusted.push(mean(col));

        let spec = &cfg.sensitivity;
        if !spec.is_identity() && spec.arms.contains(&columns[c].arm) {
            let (value, slope, clamped) = spec.adjust(unadjusted[c]);
            if clamped {
                let EifColumn { arm, cause, time } = columns[c];
                warnings.push(format!("sensitivity adjustment clamped to 1 for arm {arm}, cause {cause}, t = {time}"));
            }
            let r = unadjusted[c];
            for v in col.iter_mut() {
                *v = value + slope * (*v - r);
            }
        }
    }
    let eif = EifMatrix { n, columns, values };

    let z = normal_quantile(0.5 + cfg.level / 2.0);
    let root_n = (n as f64).sqrt();
    let mut points: Vec<CurvePoint> = (0..nc)
        .map(|c| {
            let col = eif.column(c);
            let estimate = mean(col);
            let se = sd(col) / root_n;
            let EifColumn { arm, cause, time } = eif.columns[c];
            let (ci_lo, ci_hi) = (estimate - z * se, estimate + z * se);
            CurvePoint {
                arm,
                cause,
                time,
                estimate,
                se,
                ci_lo,
                ci_hi,
                band_lo: ci_lo,
                band_hi: ci_hi,
                unadjusted: unadjusted[c],
                monotone: MonotonePoint { estimate, ci_lo, ci_hi, band_lo: ci_lo, band_hi: ci_hi },
            }
        })
        .collect();

    let mut band_quantiles = Vec::new();
    if cfg.multipliers > 0 {
        for p in points.iter().filter(|p| p.se == 0.0) {
            warnings.push(format!(
                "zero influence spread for arm {}, cause {}, t = {}; band has zero width there",
                p.arm, p.cause, p.time
            ));
        }
        for b in band::bands_skipping_degenerate(&eif, cfg.level, cfg.multipliers, cfg.seed)? {
            let q = b.quantile.max(z);
            band_quantiles.push((b.arm, b.cause, q));
            for &c in &b.columns {
                let p = &mut points[c];
                p.band_lo = p.estimate - q * p.se;
                p.band_hi = p.estimate + q * p.se;
            }
        }
    }

    let curve = CurveEstimate {
        schema_version: SCHEMA_VERSION,
        grid,
        points,
        metadata: CurveMetadata {
            folds: cfg.folds,
            seed: cfg.seed,
            truncation: cfg.truncation,
            multipliers: cfg.multipliers,
            level: cfg.level,
            n_hist: ds.n_hist(),
            n_bridge: ds.n_bridge(),
            kappa: ds.kappa(),
            sensitivity: cfg.sensitivity.clone(),
            form: cfg.form_for(ds.causes()),
            band_quantiles,
        },
        truncation_counts: pieces.counts,
        warnings,
    };
    Ok((monotone_correct(&curve), eif))
}
