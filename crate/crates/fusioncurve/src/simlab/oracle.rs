use serde::{Deserialize, Serialize};

use super::{
    bridging_marker_mean, censoring_rate, conditional_incidence, event_rates, historical_marker_mean, DgpConfig,
    ADMIN_CENSOR,
};
use crate::dataset::{Arm, Trial};
use crate::nuisance::{HazardPath, MarkerLaw, NuisanceError, NuisanceModel};

/// Grid spacing for the stepwise survival used inside martingale integrals.
pub const DEFAULT_STEP: f64 = 0.005;

/// True nuisance functions of the simulation process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleNuisance {
    pub causes: usize,
    pub kappa: f64,
    pub step: f64,
}

impl OracleNuisance {
    pub fn new(cfg: &DgpConfig) -> Self {
        OracleNuisance { causes: cfg.causes, kappa: cfg.kappa(), step: DEFAULT_STEP }
    }

    fn rates(&self, x: &[f64], marker: &[f64]) -> Vec<f64> {
        event_rates(x, marker[0], true, self.causes)
    }

    fn censor_left(&self, x: &[f64], marker: &[f64], t: f64) -> f64 {
        if t > ADMIN_CENSOR {
            0.0
        } else {
            (-censoring_rate(x, marker[0]) * t).exp()
        }
    }
}

impl NuisanceModel for OracleNuisance {
    fn kappa(&self) -> f64 {
        self.kappa
    }

    fn causes(&self) -> usize {
        self.causes
    }

    fn trial_propensity(&self, _x: &[f64]) -> f64 {
        self.kappa
    }

    fn approved_propensity(&self, _x: &[f64]) -> f64 {
        0.5 * (1.0 - self.kappa)
    }

    fn arm_propensity(&self, _x: &[f64], arm: Arm) -> f64 {
        if arm == Arm::Placebo {
            0.0
        } else {
            0.5
        }
    }

    fn marker_law(&self, x: &[f64], arm: Arm, trial: Trial) -> Result<MarkerLaw, NuisanceError> {
        let mean = match trial {
            Trial::Historical if arm != Arm::Investigational => historical_marker_mean(x, arm == Arm::Approved),
            Trial::Bridging if arm != Arm::Placebo => bridging_marker_mean(x, arm),
            _ => return Err(NuisanceError::MissingStratum(arm, trial)),
        };
        Ok(MarkerLaw { mean: vec![mean], sd: vec![1.0] })
    }

    /// Exact survival on a fine grid plus the requested times, so the
    /// discrete martingale sums approximate the continuous integrals.
    fn hazard_path(&self, x: &[f64], marker: &[f64], extra: &[f64]) -> HazardPath {
        let rates = self.rates(x, marker);
        let total: f64 = rates.iter().sum();
        let steps = (ADMIN_CENSOR / self.step).round() as usize;
        let mut times: Vec<f64> = (1..=steps).map(|k| k as f64 * self.step).collect();
        times.extend(extra.iter().copied().filter(|&t| t > 0.0));
        times.sort_by(f64::total_cmp);
        times.dedup();
        let survival = times.iter().map(|&t| (-total * t).exp()).collect();
        let share: Vec<f64> = times.iter().flat_map(|_| rates.iter().map(|r| r / total)).collect();
        let censor = times.iter().map(|&t| self.censor_left(x, marker, t)).collect();
        HazardPath::from_survival(times, survival, share, self.causes, censor)
    }

    fn incidence(&self, x: &[f64], marker: &[f64], times: &[f64]) -> Vec<f64> {
        let rates = self.rates(x, marker);
        times
            .iter()
            .flat_map(|&t| (1..=self.causes).map(move |k| (t, k)))
            .map(|(t, k)| conditional_incidence(&rates, t, k))
            .collect()
    }

    fn censoring_left(&self, x: &[f64], marker: &[f64], t: f64) -> f64 {
        self.censor_left(x, marker, t)
    }
}
