//! Bias of the one-step estimator when chosen working models are replaced
//! by intercept-only fits.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{estimate_curve, mean, sd, EstimatorConfig, EstimatorError, SCHEMA_VERSION};
use crate::dataset::Arm;
use crate::nuisance::NuisanceSpec;
use crate::simlab::{correct_spec, generate, oracle_truth, replication_seed, DgpConfig, HORIZON};

const MISSPEC_GROUP: u64 = 0x5EC;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// Event hazard and bridging marker law correct.
    Ma,
    /// Event hazard and bridging arm propensity correct.
    Mb,
    /// Every propensity, marker law and the censoring hazard correct; event
    /// hazard wrong.
    Mc,
    NoneCorrect,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::Ma, Scenario::Mb, Scenario::Mc, Scenario::NoneCorrect];

    pub fn spec(self) -> NuisanceSpec {
        let good = correct_spec();
        let mut s = NuisanceSpec::default();
        match self {
            Scenario::Ma => {
                s.event = good.event;
                s.bridging_density = good.bridging_density;
            }
            Scenario::Mb => {
                s.event = good.event;
                s.arm_propensity = good.arm_propensity;
            }
            Scenario::Mc => s = NuisanceSpec { event: Vec::new(), ..good },
            Scenario::NoneCorrect => {}
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MisspecConfig {
    pub n_h: usize,
    pub c: f64,
    pub replications: usize,
    pub seed: u64,
    pub truth_draws: usize,
    pub folds: usize,
}

impl Default for MisspecConfig {
    fn default() -> Self {
        MisspecConfig { n_h: 2000, c: 0.0, replications: 300, seed: 1, truth_draws: 1_000_000, folds: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioBias {
    pub scenario: Scenario,
    /// Mean estimate minus truth on the risk scale.
    pub bias: f64,
    /// Monte Carlo SE of the bias.
    pub mc_se: f64,
    pub sd: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisspecReport {
    pub schema_version: u32,
    pub truth: f64,
    pub replications: usize,
    pub scenarios: Vec<ScenarioBias>,
}

impl MisspecReport {
    pub fn bias(&self, s: Scenario) -> Option<&ScenarioBias> {
        self.scenarios.iter().find(|b| b.scenario == s)
    }
}

/// Every scenario is estimated on the same simulated datasets.
pub fn misspecification_suite(cfg: &MisspecConfig, scenarios: &[Scenario]) -> Result<MisspecReport, EstimatorError> {
    let truth = oracle_truth(cfg.c, 1, Arm::Investigational, HORIZON, 1, cfg.truth_draws, cfg.seed).value;
    let per_rep: Vec<Vec<Option<f64>>> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| {
            let seed = replication_seed(cfg.seed, MISSPEC_GROUP, r as u64);
            let ds = generate(&DgpConfig::quarter(cfg.n_h, cfg.c, seed));
            scenarios
                .iter()
                .map(|s| {
                    let est = EstimatorConfig {
                        folds: cfg.folds,
                        seed,
                        grid: vec![HORIZON],
                        multipliers: 0,
                        spec: Some(s.spec()),
                        ..EstimatorConfig::default()
                    };
                    estimate_curve(&ds, &est).ok().map(|(c, _)| c.points[0].estimate)
                })
                .collect()
        })
        .collect();
    let scenarios = scenarios
        .iter()
        .enumerate()
        .map(|(k, &scenario)| {
            let vals: Vec<f64> = per_rep.iter().filter_map(|r| r[k]).collect();
            let s = sd(&vals);
            ScenarioBias {
                scenario,
                bias: mean(&vals) - truth,
                mc_se: s / (vals.len() as f64).sqrt(),
                sd: s,
                failures: cfg.replications - vals.len(),
            }
        })
        .collect();
    Ok(MisspecReport { schema_version: SCHEMA_VERSION, truth, replications: cfg.replications, scenarios })
}
