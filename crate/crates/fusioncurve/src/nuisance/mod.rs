//! Working models for every nuisance function: propensities, marker
//! densities, event and censoring hazards, with fold-aware training.

pub mod cox;
pub mod density;
pub mod features;
pub mod linalg;
pub mod logistic;
pub mod path;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cox::{fit_survival, SurvivalFit, SurvivalKind};
pub use density::{fit_conditional_density, ConditionalDensityFit, MarkerLaw};
pub use features::{NuisanceSpec, Term};
pub use logistic::{fit_binary, BinaryModelFit, BinaryTarget};
pub use path::HazardPath;

use crate::dataset::{Arm, FusedDataset, SubjectRecord, Trial};
use crate::rng::stream_rng;

#[derive(Debug, Error)]
pub enum NuisanceError {
    #[error("logistic separation: {0}")]
    Separation(String),
    #[error("rank-deficient design: {0}")]
    RankDeficient(String),
    #[error("arm {arm} in the {trial} study has {rows} rows; the marker model needs {needed}")]
    TooFewRows { arm: Arm, trial: Trial, rows: usize, needed: usize },
    #[error("no events of type {0:?} in the training rows")]
    NoEvents(SurvivalKind),
    #[error("hazard fit for {0:?} did not converge")]
    Nonconvergence(SurvivalKind),
    #[error("cell ({trial}, arm {arm}) has {rows} rows, fewer than {folds} folds")]
    CellTooSmall { trial: Trial, arm: Arm, rows: usize, folds: usize },
    #[error("need at least 2 folds, got {0}")]
    TooFewFolds(usize),
    #[error("no marker model for arm {0} in the {1} study")]
    MissingStratum(Arm, Trial),
    #[error("invalid feature spec: {0}")]
    BadSpec(String),
}

/// Floors and caps applied wherever a nuisance value divides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Truncation {
    pub propensity_floor: f64,
    pub censoring_floor: f64,
    pub ratio_cap: f64,
}

impl Default for Truncation {
    fn default() -> Self {
        Truncation { propensity_floor: 0.01, censoring_floor: 0.05, ratio_cap: 50.0 }
    }
}

impl Truncation {
    /// No truncation at all; used for exact toy laws.
    pub fn none() -> Self {
        Truncation { propensity_floor: 0.0, censoring_floor: 0.0, ratio_cap: f64::INFINITY }
    }
}

/// Everything the identification formulas and influence functions read from
/// the nuisance fits. Outcome quantities are always at the approved arm.
pub trait NuisanceModel: Send + Sync {
    fn kappa(&self) -> f64;
    fn causes(&self) -> usize;
    /// P(bridging | x).
    fn trial_propensity(&self, x: &[f64]) -> f64;
    /// P(approved arm, historical | x).
    fn approved_propensity(&self, x: &[f64]) -> f64;
    /// P(arm | x, bridging).
    fn arm_propensity(&self, x: &[f64], arm: Arm) -> f64;
    fn marker_law(&self, x: &[f64], arm: Arm, trial: Trial) -> Result<MarkerLaw, NuisanceError>;
    /// Event-time law at (x, s). `extra` lists times a closed-form law should
    /// include as grid points; step-function fits may ignore it.
    fn hazard_path(&self, x: &[f64], marker: &[f64], extra: &[f64]) -> HazardPath;
    /// Cumulative incidence per (time, cause), row-major over `times`.
    fn incidence(&self, x: &[f64], marker: &[f64], times: &[f64]) -> Vec<f64> {
        let path = self.hazard_path(x, marker, times);
        let j = self.causes();
        times.iter().flat_map(|&t| (0..j).map(move |k| (t, k))).map(|(t, k)| path.incidence_at(t, k)).collect()
    }
    /// Censoring survival just before `t`.
    fn censoring_left(&self, x: &[f64], marker: &[f64], t: f64) -> f64;
}

/// Wraps a model and forces its censoring survival to one everywhere.
#[derive(Debug, Clone)]
pub struct WithoutCensoring<M>(pub M);

impl<M: NuisanceModel> NuisanceModel for WithoutCensoring<M> {
    fn kappa(&self) -> f64 {
        self.0.kappa()
    }
    fn causes(&self) -> usize {
        self.0.causes()
    }
    fn trial_propensity(&self, x: &[f64]) -> f64 {
        self.0.trial_propensity(x)
    }
    fn approved_propensity(&self, x: &[f64]) -> f64 {
        self.0.approved_propensity(x)
    }
    fn arm_propensity(&self, x: &[f64], arm: Arm) -> f64 {
        self.0.arm_propensity(x, arm)
    }
    fn marker_law(&self, x: &[f64], arm: Arm, trial: Trial) -> Result<MarkerLaw, NuisanceError> {
        self.0.marker_law(x, arm, trial)
    }
    fn hazard_path(&self, x: &[f64], marker: &[f64], extra: &[f64]) -> HazardPath {
        let p = self.0.hazard_path(x, marker, extra);
        let times = p.times().to_vec();
        let survival = (0..p.len()).map(|m| p.survival(m)).collect();
        let causes = p.causes();
        let share = (0..p.len()).flat_map(|m| (0..causes).map(move |k| (m, k))).map(|(m, k)| p.share(m, k)).collect();
        HazardPath::from_survival(times, survival, share, p.causes(), vec![1.0; p.len()])
    }
    fn censoring_left(&self, _x: &[f64], _marker: &[f64], _t: f64) -> f64 {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Propensity {
    Fitted(BinaryModelFit),
    Constant(f64),
}

impl Propensity {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            Propensity::Fitted(f) => f.predict(x),
            Propensity::Constant(p) => *p,
        }
    }
}

/// Out-of-fold working-model fits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NuisanceBundle {
    /// Fold whose rows were held out; `None` when trained on every row.
    pub held_out: Option<usize>,
    pub kappa: f64,
    pub causes: usize,
    pub trial: Propensity,
    pub approved: Propensity,
    /// P(investigational | x, bridging).
    pub investigational: Propensity,
    pub densities: Vec<ConditionalDensityFit>,
    pub events: Vec<SurvivalFit>,
    pub censoring: Option<SurvivalFit>,
    jump_times: Vec<f64>,
    /// Per cause, baseline cumulative hazard at each jump time.
    event_base: Vec<Vec<f64>>,
    censor_base_left: Vec<f64>,
}

impl NuisanceBundle {
    fn density(&self, arm: Arm, trial: Trial) -> Option<&ConditionalDensityFit> {
        self.densities.iter().find(|d| d.arm == arm && d.trial == trial)
    }

    fn event_multipliers(&self, x: &[f64], marker: &[f64]) -> Vec<f64> {
        self.events.iter().map(|f| f.risk_multiplier(x, marker, Arm::Approved)).collect()
    }

    fn censor_multiplier(&self, x: &[f64], marker: &[f64]) -> f64 {
        self.censoring.as_ref().map_or(0.0, |c| c.risk_multiplier(x, marker, Arm::Approved))
    }

    pub fn jump_times(&self) -> &[f64] {
        &self.jump_times
    }
}

impl NuisanceModel for NuisanceBundle {
    fn kappa(&self) -> f64 {
        self.kappa
    }

    fn causes(&self) -> usize {
        self.causes
    }

    fn trial_propensity(&self, x: &[f64]) -> f64 {
        self.trial.predict(x)
    }

    fn approved_propensity(&self, x: &[f64]) -> f64 {
        self.approved.predict(x)
    }

    fn arm_propensity(&self, x: &[f64], arm: Arm) -> f64 {
        let p = self.investigational.predict(x);
        match arm {
            Arm::Investigational => p,
            Arm::Approved => 1.0 - p,
            Arm::Placebo => 0.0,
        }
    }

    fn marker_law(&self, x: &[f64], arm: Arm, trial: Trial) -> Result<MarkerLaw, NuisanceError> {
        self.density(arm, trial).map(|d| d.law(x)).ok_or(NuisanceError::MissingStratum(arm, trial))
    }

    fn hazard_path(&self, x: &[f64], marker: &[f64], _extra: &[f64]) -> HazardPath {
        let mult = self.event_multipliers(x, marker);
        let rc = self.censor_multiplier(x, marker);
        let j = self.causes;
        let m = self.jump_times.len();
        let mut increments = Vec::with_capacity(m * j);
        for i in 0..m {
            for (k, base) in self.event_base.iter().enumerate() {
                let prev = if i == 0 { 0.0 } else { base[i - 1] };
                increments.push(mult[k] * (base[i] - prev));
            }
        }
        let censor = self.censor_base_left.iter().map(|c| (-rc * c).exp()).collect();
        HazardPath::from_cumulative(self.jump_times.clone(), increments, j, censor)
    }

    fn incidence(&self, x: &[f64], marker: &[f64], times: &[f64]) -> Vec<f64> {
        if self.causes == 1 {
            let r = self.events[0].risk_multiplier(x, marker, Arm::Approved);
            return times.iter().map(|&t| 1.0 - (-r * self.events[0].baseline(t)).exp()).collect();
        }
        let path = self.hazard_path(x, marker, times);
        times
            .iter()
            .flat_map(|&t| (0..self.causes).map(move |k| (t, k)))
            .map(|(t, k)| path.incidence_at(t, k))
            .collect()
    }

    fn censoring_left(&self, x: &[f64], marker: &[f64], t: f64) -> f64 {
        match &self.censoring {
            Some(c) => c.survival_left(t, x, marker, Arm::Approved),
            None => 1.0,
        }
    }
}

fn fit_propensity(
    target: BinaryTarget,
    terms: &[Term],
    rows: &[&SubjectRecord],
    floor: f64,
) -> Result<Propensity, NuisanceError> {
    let labels: Vec<bool> = rows.iter().filter_map(|r| target.label(r)).collect();
    let positives = labels.iter().filter(|&&v| v).count();
    // A single-arm bridging study makes the arm law degenerate; that is a
    // design fact rather than a fitting failure.
    if target == BinaryTarget::ArmGivenXBridging && (positives == 0 || positives == labels.len()) {
        return Ok(Propensity::Constant(if positives == 0 { 0.0 } else { 1.0 }));
    }
    fit_binary(target, terms, rows, floor).map(Propensity::Fitted)
}

/// Fit every working model on the rows selected by `train`.
pub fn fit_models(
    ds: &FusedDataset,
    train: &[&SubjectRecord],
    spec: &NuisanceSpec,
    truncation: &Truncation,
    held_out: Option<usize>,
) -> Result<NuisanceBundle, NuisanceError> {
    spec.validate(ds.dim(), ds.marker_len()).map_err(NuisanceError::BadSpec)?;
    let floor = truncation.propensity_floor;
    let trial = fit_propensity(BinaryTarget::GammaGivenX, &spec.trial_propensity, train, floor)?;
    let approved = fit_propensity(BinaryTarget::ArmAndGamma0GivenX, &spec.approved_propensity, train, floor)?;
    let investigational = fit_propensity(BinaryTarget::ArmGivenXBridging, &spec.arm_propensity, train, floor)?;

    let mut densities = vec![fit_conditional_density(
        Arm::Approved,
        Trial::Historical,
        &spec.historical_density,
        train,
    )?];
    for arm in [Arm::Approved, Arm::Investigational] {
        if train.iter().any(|r| r.trial == Trial::Bridging && r.arm == arm) {
            densities.push(fit_conditional_density(arm, Trial::Bridging, &spec.bridging_density, train)?);
        }
    }

    let hist: Vec<&SubjectRecord> = train.iter().copied().filter(|r| r.trial == Trial::Historical).collect();
    let events = (1..=ds.causes())
        .map(|k| fit_survival(SurvivalKind::Event(k), &spec.event, &hist))
        .collect::<Result<Vec<_>, _>>()?;
    let censoring = match fit_survival(SurvivalKind::Censoring, &spec.censoring, &hist) {
        Ok(f) => Some(f),
        Err(NuisanceError::NoEvents(_)) => None,
        Err(e) => return Err(e),
    };

    let mut jump_times: Vec<f64> = events.iter().flat_map(|f| f.times.iter().copied()).collect();
    jump_times.sort_by(f64::total_cmp);
    jump_times.dedup();
    let event_base = events.iter().map(|f| jump_times.iter().map(|&t| f.baseline(t)).collect()).collect();
    let censor_base_left = match &censoring {
        Some(c) => jump_times.iter().map(|&t| c.baseline_left(t)).collect(),
        None => vec![0.0; jump_times.len()],
    };

    Ok(NuisanceBundle {
        held_out,
        kappa: ds.kappa(),
        causes: ds.causes(),
        trial,
        approved,
        investigational,
        densities,
        events,
        censoring,
        jump_times,
        event_base,
        censor_base_left,
    })
}

/// Nuisances trained on every row except those in fold `k`.
pub fn fit_bundle(
    ds: &FusedDataset,
    folds: &[usize],
    k: usize,
    spec: &NuisanceSpec,
    truncation: &Truncation,
) -> Result<NuisanceBundle, NuisanceError> {
    let train: Vec<&SubjectRecord> =
        ds.records().iter().zip(folds).filter(|(_, &f)| f != k).map(|(r, _)| r).collect();
    fit_models(ds, &train, spec, truncation, Some(k))
}

/// Nuisances trained on the full sample (plug-in use).
pub fn fit_full(ds: &FusedDataset, spec: &NuisanceSpec, truncation: &Truncation) -> Result<NuisanceBundle, NuisanceError> {
    let train: Vec<&SubjectRecord> = ds.records().iter().collect();
    fit_models(ds, &train, spec, truncation, None)
}

/// Seeded partition stratified by (trial, arm); fold ids are 0-based.
pub fn make_folds(ds: &FusedDataset, k: usize, seed: u64) -> Result<Vec<usize>, NuisanceError> {
    if k < 2 {
        return Err(NuisanceError::TooFewFolds(k));
    }
    let mut cells: BTreeMap<(Trial, Arm), Vec<usize>> = BTreeMap::new();
    for (i, r) in ds.records().iter().enumerate() {
        cells.entry((r.trial, r.arm)).or_default().push(i);
    }
    let mut folds = vec![0; ds.len()];
    let mut offset = 0;
    for (cell_no, (&(trial, arm), rows)) in cells.iter_mut().enumerate() {
        if rows.len() < k {
            return Err(NuisanceError::CellTooSmall { trial, arm, rows: rows.len(), folds: k });
        }
        let mut rng = stream_rng(seed, cell_no as u64);
        rows.shuffle(&mut rng);
        for (pos, &i) in rows.iter().enumerate() {
            folds[i] = (offset + pos) % k;
        }
        offset = (offset + rows.len()) % k;
    }
    Ok(folds)
}
