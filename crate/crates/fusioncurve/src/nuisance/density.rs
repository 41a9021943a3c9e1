use serde::{Deserialize, Serialize};

use super::features::Term;
use super::linalg::{full_rank, solve_spd, weighted_normal_equations};
use super::NuisanceError;
use crate::dataset::{Arm, SubjectRecord, Trial};

pub const SIGMA_MIN: f64 = 1e-6;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Independent Gaussian per marker coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerLaw {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl MarkerLaw {
    pub fn log_density(&self, s: &[f64]) -> f64 {
        self.mean
            .iter()
            .zip(&self.sd)
            .zip(s)
            .map(|((m, sd), v)| {
                let z = (v - m) / sd;
                -0.5 * z * z - sd.ln() - LN_SQRT_2PI
            })
            .sum()
    }

    pub fn density(&self, s: &[f64]) -> f64 {
        self.log_density(s).exp()
    }
}

/// Linear-Gaussian working model for the marker within one (arm, trial) stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalDensityFit {
    pub arm: Arm,
    pub trial: Trial,
    pub terms: Vec<Term>,
    /// Per marker coordinate: intercept then one coefficient per term.
    pub coefficients: Vec<Vec<f64>>,
    pub sigma: Vec<f64>,
}

impl ConditionalDensityFit {
    pub fn law(&self, x: &[f64]) -> MarkerLaw {
        let feats: Vec<f64> = self.terms.iter().map(|t| t.value(x, &[], Arm::Placebo)).collect();
        let mean = self
            .coefficients
            .iter()
            .map(|b| b[0] + b[1..].iter().zip(&feats).map(|(c, f)| c * f).sum::<f64>())
            .collect();
        MarkerLaw { mean, sd: self.sigma.clone() }
    }

    pub fn density(&self, x: &[f64], s: &[f64]) -> f64 {
        self.law(x).density(s)
    }
}

/// OLS fit of each marker coordinate on the stratum's rows.
pub fn fit_conditional_density(
    arm: Arm,
    trial: Trial,
    terms: &[Term],
    rows: &[&SubjectRecord],
) -> Result<ConditionalDensityFit, NuisanceError> {
    let stratum: Vec<&SubjectRecord> = rows.iter().copied().filter(|r| r.arm == arm && r.trial == trial).collect();
    let p = terms.len() + 1;
    if stratum.len() < p + 1 {
        return Err(NuisanceError::TooFewRows { arm, trial, rows: stratum.len(), needed: p + 1 });
    }
    let design: Vec<Vec<f64>> = stratum
        .iter()
        .map(|r| std::iter::once(1.0).chain(terms.iter().map(|t| t.value(&r.x, &[], arm))).collect())
        .collect();
    let ones = vec![1.0; design.len()];
    let marker_len = stratum[0].marker.len();
    let mut coefficients = Vec::with_capacity(marker_len);
    let mut sigma = Vec::with_capacity(marker_len);
    for k in 0..marker_len {
        let y: Vec<f64> = stratum.iter().map(|r| r.marker[k]).collect();
        let (gram, rhs) = weighted_normal_equations(&design, &ones, &y);
        if !full_rank(&gram) {
            return Err(NuisanceError::RankDeficient(format!("marker density for arm {arm}, {trial}")));
        }
        let beta = solve_spd(&gram, &rhs)
            .ok_or_else(|| NuisanceError::RankDeficient(format!("marker density for arm {arm}, {trial}")))?;
        let rss: f64 = design
            .iter()
            .zip(&y)
            .map(|(r, yi)| {
                let fit: f64 = r.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
                (yi - fit).powi(2)
            })
            .sum();
        let dof = (design.len() - p) as f64;
        sigma.push((rss / dof).sqrt().max(SIGMA_MIN));
        coefficients.push(beta.iter().copied().collect());
    }
    Ok(ConditionalDensityFit { arm, trial, terms: terms.to_vec(), coefficients, sigma })
}
