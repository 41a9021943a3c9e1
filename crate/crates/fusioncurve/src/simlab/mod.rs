//! Synthetic fused studies with known truth: the data-generating process,
//! a Monte Carlo oracle for the target, closed-form nuisances, and a
//! replication harness.

pub mod oracle;
pub mod study;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use oracle::OracleNuisance;
pub use study::{run_study, SimulationSummary, StudyConfig, SummaryRow};

use crate::dataset::{Arm, FusedDataset, SubjectRecord, TwoArmTrial};
use crate::nuisance::features::all_covariates;
use crate::nuisance::{NuisanceSpec, Term};
use crate::rng::{stream_id, stream_rng};

pub const DIM: usize = 6;
/// Target time and analysis horizon.
pub const HORIZON: f64 = 5.0;
/// Administrative end of follow-up.
pub const ADMIN_CENSOR: f64 = 5.5;
/// Cause-k linear predictors are cause 1's scaled by this power.
pub const CAUSE_SCALE: f64 = 0.5;

const ORACLE_GROUP: u64 = 0x0AC1;
const ORACLE_CHUNK: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpConfig {
    /// Covariate mean shift.
    pub c: f64,
    pub n_h: usize,
    pub n_b: usize,
    pub seed: u64,
    pub causes: usize,
}

impl Default for DgpConfig {
    fn default() -> Self {
        DgpConfig { c: 0.0, n_h: 1000, n_b: 250, seed: 1, causes: 1 }
    }
}

impl DgpConfig {
    /// Bridging size a quarter of the historical size.
    pub fn quarter(n_h: usize, c: f64, seed: u64) -> Self {
        DgpConfig { c, n_h, n_b: n_h / 4, seed, causes: 1 }
    }

    pub fn kappa(&self) -> f64 {
        self.n_b as f64 / (self.n_h + self.n_b) as f64
    }
}

pub fn covariate_mean(c: f64) -> [f64; DIM] {
    [c, c, c, 0.8 * c, 0.8 * c, 0.8 * c]
}

pub fn draw_covariates<R: Rng>(rng: &mut R, c: f64) -> Vec<f64> {
    let sd = 0.5f64.sqrt();
    covariate_mean(c).iter().map(|m| m + sd * normal(rng)).collect()
}

/// Mean marker in the historical trial; `treated` is the approved arm.
pub fn historical_marker_mean(x: &[f64], treated: bool) -> f64 {
    let base = 2.0 + 0.5 * x[0] - x[1] + 1.5 * x[2];
    if treated {
        base + x[1] - 0.5 * x[3] + 1.5 * x[4] - x[5]
    } else {
        base
    }
}

/// Mean marker in the bridging study for the approved or investigational arm.
pub fn bridging_marker_mean(x: &[f64], arm: Arm) -> f64 {
    let dose = match arm {
        Arm::Approved => 1.0,
        Arm::Investigational => 2.0,
        Arm::Placebo => 0.0,
    };
    4.0 + 1.5 * x[0] - x[2] + 1.5 * x[5] + dose * (0.5 * x[1] + 0.5 * x[2] + 0.5 * x[3] - x[5])
}

/// Cause-1 log hazard ratio against the 0.1 baseline rate.
pub fn event_linear_predictor(x: &[f64], s: f64, treated: bool) -> f64 {
    let mut eta = 0.5 * x[0] - 0.5 * x[4] + 0.3 * s * (1.3 * x[1] + 0.4 * x[3]);
    if treated {
        eta += 0.2 * x[1] + 0.6 * x[2] - 1.2 * x[5];
    }
    eta
}

/// Cause-specific exponential rates; cause k scales the linear predictor by
/// `CAUSE_SCALE^(k-1)`.
pub fn event_rates(x: &[f64], s: f64, treated: bool, causes: usize) -> Vec<f64> {
    let eta = event_linear_predictor(x, s, treated);
    (0..causes).map(|k| 0.1 * (CAUSE_SCALE.powi(k as i32) * eta).exp()).collect()
}

pub fn censoring_rate(x: &[f64], s: f64) -> f64 {
    0.03 * (-0.4 * x[1] + 0.1 * s).exp()
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn exponential<R: Rng>(rng: &mut R, rate: f64) -> f64 {
    let u: f64 = rng.random();
    -(1.0 - u).ln() / rate
}

/// First latent event time and its cause (1-based).
fn competing_draw<R: Rng>(rng: &mut R, rates: &[f64]) -> (f64, usize) {
    rates
        .iter()
        .enumerate()
        .map(|(k, &r)| (exponential(rng, r), k + 1))
        .fold((f64::INFINITY, 0), |best, cur| if cur.0 < best.0 { cur } else { best })
}

fn observe<R: Rng>(rng: &mut R, x: &[f64], s: f64, rates: &[f64]) -> (f64, usize) {
    let (t, cause) = competing_draw(rng, rates);
    let c = exponential(rng, censoring_rate(x, s)).min(ADMIN_CENSOR);
    if t <= c {
        (t, cause)
    } else {
        (c, 0)
    }
}

pub fn generate(cfg: &DgpConfig) -> FusedDataset {
    let mut rng = stream_rng(cfg.seed, 0);
    let mut records = Vec::with_capacity(cfg.n_h + cfg.n_b);
    for _ in 0..cfg.n_h {
        let x = draw_covariates(&mut rng, cfg.c);
        let treated = rng.random_bool(0.5);
        let s = historical_marker_mean(&x, treated) + normal(&mut rng);
        let rates = event_rates(&x, s, treated, cfg.causes);
        let (time, status) = observe(&mut rng, &x, s, &rates);
        let arm = if treated { Arm::Approved } else { Arm::Placebo };
        records.push(SubjectRecord::historical(x, arm, vec![s], time, status));
    }
    for _ in 0..cfg.n_b {
        let x = draw_covariates(&mut rng, cfg.c);
        let arm = if rng.random_bool(0.5) { Arm::Investigational } else { Arm::Approved };
        let s = bridging_marker_mean(&x, arm) + normal(&mut rng);
        records.push(SubjectRecord::bridging(x, arm, vec![s]));
    }
    FusedDataset::new(records, cfg.causes, HORIZON).expect("generated data satisfy the dataset invariants")
}

/// Working-model features under which every nuisance of this process is
/// correctly specified.
pub fn correct_spec() -> NuisanceSpec {
    let xs = all_covariates(DIM);
    NuisanceSpec {
        trial_propensity: xs.clone(),
        approved_propensity: xs.clone(),
        arm_propensity: xs.clone(),
        historical_density: xs.clone(),
        bridging_density: xs,
        event: vec![
            Term::Covariate(0),
            Term::Covariate(4),
            Term::MarkerCovariate(0, 1),
            Term::MarkerCovariate(0, 3),
            Term::ArmCovariate(1),
            Term::ArmCovariate(2),
            Term::ArmCovariate(5),
        ],
        censoring: vec![Term::Covariate(1), Term::Marker(0)],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleTruth {
    /// Counterfactual risk P(T <= t) (cause-specific when asked).
    pub value: f64,
    pub mc_se: f64,
    pub draws: usize,
}

/// Monte Carlo value of the mediation functional: bridging covariates, the
/// arm's bridging marker law, then the historical approved-arm event law at
/// (x, s) without censoring. Each draw contributes its exact conditional
/// incidence rather than a sampled indicator. `cause` 0 means all causes.
pub fn oracle_truth(c: f64, causes: usize, arm: Arm, t: f64, cause: usize, draws: usize, seed: u64) -> OracleTruth {
    let chunks = draws.div_ceil(ORACLE_CHUNK);
    let sums: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, stream_id(ORACLE_GROUP, k as u64));
            let m = ORACLE_CHUNK.min(draws - k * ORACLE_CHUNK);
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            for _ in 0..m {
                let x = draw_covariates(&mut rng, c);
                let s = bridging_marker_mean(&x, arm) + normal(&mut rng);
                let v = conditional_incidence(&event_rates(&x, s, true, causes), t, cause);
                s1 += v;
                s2 += v * v;
            }
            (s1, s2)
        })
        .collect();
    let (s1, s2) = sums.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = draws as f64;
    let value = s1 / n;
    let var = (s2 / n - value * value).max(0.0) * n / (n - 1.0);
    OracleTruth { value, mc_se: (var / n).sqrt(), draws }
}

/// Incidence of `cause` (0 = any) by `t` under independent exponential
/// cause-specific hazards.
pub fn conditional_incidence(rates: &[f64], t: f64, cause: usize) -> f64 {
    let total: f64 = rates.iter().sum();
    let any = -(-total * t).exp_m1();
    if cause == 0 {
        any
    } else {
        rates[cause - 1] / total * any
    }
}

/// Two-arm trial for the direct-effect test: both arms followed for
/// outcomes, the investigational arm shifts the marker up by
/// `marker_shift`, and `direct_effect` is a log hazard ratio for the
/// investigational arm not carried by the marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoArmDgp {
    pub n: usize,
    pub seed: u64,
    pub direct_effect: f64,
    pub marker_shift: f64,
}

impl Default for TwoArmDgp {
    fn default() -> Self {
        TwoArmDgp { n: 2000, seed: 1, direct_effect: 0.0, marker_shift: 0.5 }
    }
}

pub fn generate_two_arm(cfg: &TwoArmDgp) -> TwoArmTrial {
    let mut rng = stream_rng(cfg.seed, 0);
    let records = (0..cfg.n)
        .map(|_| {
            let x = draw_covariates(&mut rng, 0.0);
            let arm = if rng.random_bool(0.5) { Arm::Investigational } else { Arm::Approved };
            let shift = if arm == Arm::Investigational { cfg.marker_shift } else { 0.0 };
            let s = bridging_marker_mean(&x, arm) + shift + normal(&mut rng);
            let direct = if arm == Arm::Investigational { cfg.direct_effect } else { 0.0 };
            let rate = 0.1 * (0.5 * x[0] - 0.5 * x[4] - 0.4 * (s - 4.0) + direct).exp();
            let (time, status) = observe(&mut rng, &x, s, &[rate]);
            SubjectRecord::historical(x, arm, vec![s], time, status)
        })
        .collect();
    TwoArmTrial::new(records, 1, HORIZON).expect("generated data satisfy the two-arm invariants")
}

/// Features under which the two-arm process is correctly specified.
pub fn two_arm_spec() -> NuisanceSpec {
    let xs = all_covariates(DIM);
    NuisanceSpec {
        trial_propensity: xs.clone(),
        approved_propensity: xs.clone(),
        arm_propensity: xs.clone(),
        historical_density: xs.clone(),
        bridging_density: xs,
        event: vec![Term::Covariate(0), Term::Covariate(4), Term::Marker(0)],
        censoring: vec![Term::Covariate(1), Term::Marker(0)],
    }
}

/// Per-replication seed derived from a master seed.
pub fn replication_seed(master: u64, group: u64, rep: u64) -> u64 {
    stream_rng(master, stream_id(group, rep)).random()
}
