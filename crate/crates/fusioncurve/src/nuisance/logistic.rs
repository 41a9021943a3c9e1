use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::features::Term;
use super::linalg::{full_rank, solve_spd, weighted_normal_equations};
use super::NuisanceError;
use crate::dataset::{Arm, SubjectRecord, Trial};

pub const SCORE_TOL: f64 = 1e-8;
pub const MAX_ITER: usize = 100;
const DIVERGENCE: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinaryTarget {
    /// P(bridging | x) over all rows.
    GammaGivenX,
    /// P(investigational | x) over bridging rows.
    ArmGivenXBridging,
    /// P(approved and historical | x) over all rows.
    ArmAndGamma0GivenX,
}

impl BinaryTarget {
    pub fn label(self, r: &SubjectRecord) -> Option<bool> {
        match self {
            BinaryTarget::GammaGivenX => Some(r.trial == Trial::Bridging),
            BinaryTarget::ArmGivenXBridging => {
                (r.trial == Trial::Bridging).then_some(r.arm == Arm::Investigational)
            }
            BinaryTarget::ArmAndGamma0GivenX => Some(r.is_historical_approved()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryModelFit {
    pub target: BinaryTarget,
    pub terms: Vec<Term>,
    /// Intercept first, then one coefficient per term.
    pub coefficients: Vec<f64>,
    pub iterations: usize,
    pub floor: f64,
}

impl BinaryModelFit {
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        let arm = Arm::Placebo;
        self.coefficients[0]
            + self.terms.iter().zip(&self.coefficients[1..]).map(|(t, b)| b * t.value(x, &[], arm)).sum::<f64>()
    }

    /// Probability of the positive class, clamped to [floor, 1 - floor].
    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.linear_predictor(x)).clamp(self.floor, 1.0 - self.floor)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn log1pexp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Maximum-likelihood logistic regression by Newton's method with step
/// halving. `design` rows must already contain the intercept column.
pub fn fit_logistic(design: &[Vec<f64>], y: &[bool]) -> Result<(Vec<f64>, usize), NuisanceError> {
    let n = design.len();
    let positives = y.iter().filter(|&&v| v).count();
    if positives < 2 || n - positives < 2 {
        return Err(NuisanceError::Separation(format!(
            "need at least 2 rows per class, got {positives} positive of {n}"
        )));
    }
    let p = design[0].len();
    let yf: Vec<f64> = y.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
    let (gram, _) = weighted_normal_equations(design, &vec![1.0; n], &yf);
    if !full_rank(&gram) {
        return Err(NuisanceError::RankDeficient("logistic design".into()));
    }

    let loglik = |beta: &[f64]| -> f64 {
        design
            .iter()
            .zip(&yf)
            .map(|(r, &yi)| {
                let eta: f64 = r.iter().zip(beta).map(|(a, b)| a * b).sum();
                yi * eta - log1pexp(eta)
            })
            .sum()
    };

    let mut beta = vec![0.0; p];
    let mut ll = loglik(&beta);
    for iter in 0..=MAX_ITER {
        let mut w = Vec::with_capacity(n);
        let mut resid = Vec::with_capacity(n);
        for r in design {
            let eta: f64 = r.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let pr = sigmoid(eta);
            w.push(pr * (1.0 - pr));
            resid.push(pr);
        }
        let mut score = DVector::zeros(p);
        for ((r, &pr), &yi) in design.iter().zip(&resid).zip(&yf) {
            for j in 0..p {
                score[j] += r[j] * (yi - pr);
            }
        }
        if score.amax() < SCORE_TOL {
            return Ok((beta, iter));
        }
        if iter == MAX_ITER {
            break;
        }
        let (info, _) = weighted_normal_equations(design, &w, &yf);
        let step = solve_spd(&info, &score)
            .ok_or_else(|| NuisanceError::Separation("information matrix became singular".into()))?;
        let mut scale = 1.0;
        loop {
            let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            let cand_ll = loglik(&cand);
            if cand_ll >= ll - 1e-12 * ll.abs().max(1.0) || scale < 1e-10 {
                beta = cand;
                ll = cand_ll;
                break;
            }
            scale *= 0.5;
        }
        if beta.iter().any(|b| b.abs() > DIVERGENCE) {
            return Err(NuisanceError::Separation("coefficients diverge".into()));
        }
    }
    Err(NuisanceError::Separation(format!("no convergence in {MAX_ITER} iterations")))
}

pub fn fit_binary(
    target: BinaryTarget,
    terms: &[Term],
    rows: &[&SubjectRecord],
    floor: f64,
) -> Result<BinaryModelFit, NuisanceError> {
    let mut design = Vec::new();
    let mut y = Vec::new();
    for r in rows {
        if let Some(label) = target.label(r) {
            let mut row = Vec::with_capacity(terms.len() + 1);
            row.push(1.0);
            row.extend(terms.iter().map(|t| t.value(&r.x, &[], Arm::Placebo)));
            design.push(row);
            y.push(label);
        }
    }
    if design.is_empty() {
        return Err(NuisanceError::Separation("no rows for the target".into()));
    }
    let (coefficients, iterations) = fit_logistic(&design, &y)?;
    Ok(BinaryModelFit { target, terms: terms.to_vec(), coefficients, iterations, floor })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_null_fit() {
        let design: Vec<Vec<f64>> = (0..8).map(|i| vec![1.0, (i % 2) as f64]).collect();
        let y: Vec<bool> = (0..8).map(|i| i < 4 || i == 7).map(|_| false).collect();
        assert!(fit_logistic(&design, &y).is_err());
        let y: Vec<bool> = (0..8).map(|i| (i / 2) % 2 == 0).collect();
        let (b, _) = fit_logistic(&design, &y).unwrap();
        assert!(b[0].abs() < 1e-6 && b[1].abs() < 1e-6, "{b:?}");
    }

    #[test]
    fn sigmoid_tails() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!((sigmoid(800.0) - 1.0).abs() < 1e-15);
    }
}
