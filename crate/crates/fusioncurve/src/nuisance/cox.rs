use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::features::Term;
use super::linalg::{full_rank, solve_spd};
use super::NuisanceError;
use crate::dataset::{Arm, SubjectRecord};

const MAX_ITER: usize = 60;
const GRAD_TOL: f64 = 1e-9;
const DIVERGENCE: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SurvivalKind {
    /// Cause-k event hazard (k >= 1); other statuses act as censoring.
    Event(usize),
    /// Censoring hazard: status 0 is the event.
    Censoring,
}

impl SurvivalKind {
    fn is_event(self, status: usize) -> bool {
        match self {
            SurvivalKind::Event(k) => status == k,
            SurvivalKind::Censoring => status == 0,
        }
    }
}

/// Proportional-hazards fit with a Breslow baseline step function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalFit {
    pub kind: SurvivalKind,
    pub terms: Vec<Term>,
    pub coefficients: Vec<f64>,
    /// Distinct event times, ascending.
    pub times: Vec<f64>,
    /// Baseline cumulative hazard just after each event time.
    pub cumhaz: Vec<f64>,
    pub iterations: usize,
}

impl SurvivalFit {
    pub fn linear_predictor(&self, x: &[f64], marker: &[f64], arm: Arm) -> f64 {
        self.terms.iter().zip(&self.coefficients).map(|(t, b)| b * t.value(x, marker, arm)).sum()
    }

    pub fn risk_multiplier(&self, x: &[f64], marker: &[f64], arm: Arm) -> f64 {
        self.linear_predictor(x, marker, arm).exp()
    }

    /// Baseline cumulative hazard at `t` (right-continuous).
    pub fn baseline(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&u| u <= t);
        if k == 0 {
            0.0
        } else {
            self.cumhaz[k - 1]
        }
    }

    /// Baseline cumulative hazard just before `t`.
    pub fn baseline_left(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&u| u < t);
        if k == 0 {
            0.0
        } else {
            self.cumhaz[k - 1]
        }
    }

    pub fn survival(&self, t: f64, x: &[f64], marker: &[f64], arm: Arm) -> f64 {
        (-self.baseline(t) * self.risk_multiplier(x, marker, arm)).exp()
    }

    pub fn survival_left(&self, t: f64, x: &[f64], marker: &[f64], arm: Arm) -> f64 {
        (-self.baseline_left(t) * self.risk_multiplier(x, marker, arm)).exp()
    }

    /// Baseline hazard increments at `times`.
    pub fn increments(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.cumhaz
            .iter()
            .map(|&c| {
                let d = c - prev;
                prev = c;
                d
            })
            .collect()
    }
}

struct Prepared {
    /// Rows sorted by descending time.
    time: Vec<f64>,
    event: Vec<bool>,
    z: Vec<Vec<f64>>,
}

/// Risk-set sweep: log partial likelihood, score and information under
/// Breslow ties. A tie group that is the whole risk set (for example
/// administrative censoring at the end of follow-up) has exact conditional
/// probability one and is left out; Breslow would shrink every coefficient
/// toward zero through it.
fn sweep(data: &Prepared, beta: &[f64], want_info: bool) -> (f64, DVector<f64>, DMatrix<f64>) {
    let p = beta.len();
    let n = data.time.len();
    let eta: Vec<f64> = data.z.iter().map(|z| z.iter().zip(beta).map(|(a, b)| a * b).sum()).collect();
    let shift = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s0 = 0.0;
    let mut s1 = vec![0.0; p];
    let mut s2 = DMatrix::<f64>::zeros(p, p);
    let mut ll = 0.0;
    let mut grad = DVector::zeros(p);
    let mut info = DMatrix::zeros(p, p);
    let mut i = 0;
    while i < n {
        let t = data.time[i];
        let mut j = i;
        let mut d = 0.0;
        let mut zsum = vec![0.0; p];
        let mut eta_sum = 0.0;
        while j < n && data.time[j] == t {
            let w = (eta[j] - shift).exp();
            s0 += w;
            for a in 0..p {
                let wa = w * data.z[j][a];
                s1[a] += wa;
                if want_info {
                    for b in 0..=a {
                        s2[(a, b)] += wa * data.z[j][b];
                    }
                }
            }
            if data.event[j] {
                d += 1.0;
                eta_sum += eta[j] - shift;
                for a in 0..p {
                    zsum[a] += data.z[j][a];
                }
            }
            j += 1;
        }
        if d > 0.0 && (d as usize) < j {
            ll += eta_sum - d * s0.ln();
            for a in 0..p {
                grad[a] += zsum[a] - d * s1[a] / s0;
            }
            if want_info {
                for a in 0..p {
                    for b in 0..=a {
                        let v = d * (s2[(a, b)] / s0 - s1[a] * s1[b] / (s0 * s0));
                        info[(a, b)] += v;
                    }
                }
            }
        }
        i = j;
    }
    for a in 0..p {
        for b in 0..a {
            info[(b, a)] = info[(a, b)];
        }
    }
    (ll, grad, info)
}

pub fn fit_survival(
    kind: SurvivalKind,
    terms: &[Term],
    rows: &[&SubjectRecord],
) -> Result<SurvivalFit, NuisanceError> {
    let mut obs: Vec<(f64, bool, Vec<f64>)> = rows
        .iter()
        .filter_map(|r| {
            r.outcome.map(|o| {
                let z = terms.iter().map(|t| t.value(&r.x, &r.marker, r.arm)).collect();
                (o.time, kind.is_event(o.status), z)
            })
        })
        .collect();
    if !obs.iter().any(|o| o.1) {
        return Err(NuisanceError::NoEvents(kind));
    }
    obs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let data = Prepared {
        time: obs.iter().map(|o| o.0).collect(),
        event: obs.iter().map(|o| o.1).collect(),
        z: obs.into_iter().map(|o| o.2).collect(),
    };

    let p = terms.len();
    let mut beta = vec![0.0; p];
    let mut iterations = 0;
    if p > 0 {
        let mut gram = DMatrix::zeros(p, p);
        let means: Vec<f64> =
            (0..p).map(|a| data.z.iter().map(|z| z[a]).sum::<f64>() / data.z.len() as f64).collect();
        for z in &data.z {
            for a in 0..p {
                for b in 0..p {
                    gram[(a, b)] += (z[a] - means[a]) * (z[b] - means[b]);
                }
            }
        }
        if !full_rank(&gram) {
            return Err(NuisanceError::RankDeficient(format!("{kind:?} hazard design")));
        }
        let (mut ll, mut grad, mut info) = sweep(&data, &beta, true);
        let mut converged = false;
        while iterations < MAX_ITER {
            if grad.amax() < GRAD_TOL * (data.time.len() as f64).max(1.0) {
                converged = true;
                break;
            }
            iterations += 1;
            let step = solve_spd(&info, &grad).ok_or(NuisanceError::Nonconvergence(kind))?;
            let mut scale = 1.0;
            loop {
                let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
                let (cll, cg, ci) = sweep(&data, &cand, true);
                if cll >= ll - 1e-12 * ll.abs().max(1.0) || scale < 1e-8 {
                    let small = step.amax() * scale < 1e-12;
                    beta = cand;
                    ll = cll;
                    grad = cg;
                    info = ci;
                    if small {
                        converged = true;
                    }
                    break;
                }
                scale *= 0.5;
            }
            if beta.iter().any(|b| b.abs() > DIVERGENCE) {
                return Err(NuisanceError::Nonconvergence(kind));
            }
            if converged {
                break;
            }
        }
        if !converged && grad.amax() >= GRAD_TOL * (data.time.len() as f64) {
            return Err(NuisanceError::Nonconvergence(kind));
        }
    }

    // Breslow baseline, ascending time.
    let eta: Vec<f64> = data.z.iter().map(|z| z.iter().zip(&beta).map(|(a, b)| a * b).sum()).collect();
    let n = data.time.len();
    let mut times = Vec::new();
    let mut incr = Vec::new();
    let mut s0 = 0.0;
    let mut i = 0;
    while i < n {
        let t = data.time[i];
        let mut d = 0.0;
        while i < n && data.time[i] == t {
            s0 += eta[i].exp();
            if data.event[i] {
                d += 1.0;
            }
            i += 1;
        }
        if d > 0.0 {
            times.push(t);
            incr.push(d / s0);
        }
    }
    times.reverse();
    incr.reverse();
    let mut acc = 0.0;
    let cumhaz = incr
        .iter()
        .map(|d| {
            acc += d;
            acc
        })
        .collect();
    Ok(SurvivalFit { kind, terms: terms.to_vec(), coefficients: beta, times, cumhaz, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Trial;

    fn rec(time: f64, status: usize, x: f64) -> SubjectRecord {
        SubjectRecord {
            x: vec![x],
            arm: Arm::Approved,
            trial: Trial::Historical,
            marker: vec![0.0],
            outcome: Some(crate::dataset::Outcome { time, status }),
        }
    }

    #[test]
    fn null_model_is_nelson_aalen() {
        let rows = [rec(1.0, 1, 0.0), rec(1.5, 0, 0.0), rec(2.0, 1, 0.0)];
        let refs: Vec<&SubjectRecord> = rows.iter().collect();
        let fit = fit_survival(SurvivalKind::Event(1), &[], &refs).unwrap();
        assert_eq!(fit.times, vec![1.0, 2.0]);
        assert!((fit.baseline(1.0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((fit.baseline(2.0) - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(fit.baseline_left(2.0), fit.baseline(1.9));
        let cens = fit_survival(SurvivalKind::Censoring, &[], &refs).unwrap();
        assert_eq!(cens.times, vec![1.5]);
        assert_eq!(cens.baseline(1.5), 0.5);
    }

    #[test]
    fn no_events() {
        let rows = [rec(1.0, 0, 0.0), rec(2.0, 0, 1.0)];
        let refs: Vec<&SubjectRecord> = rows.iter().collect();
        assert!(matches!(
            fit_survival(SurvivalKind::Event(1), &[], &refs),
            Err(NuisanceError::NoEvents(_))
        ));
    }

    #[test]
    fn tie_exhausting_the_risk_set_is_uninformative() {
        let mut rows: Vec<SubjectRecord> =
            (0..40).map(|i| rec(0.1 + 0.1 * i as f64, (i % 3 == 0) as usize, (i % 7) as f64 / 7.0)).collect();
        let tail: Vec<SubjectRecord> = (0..20).map(|i| rec(9.0, 1, (i % 5) as f64)).collect();
        rows.extend(tail.iter().cloned());
        let with_tie: Vec<&SubjectRecord> = rows.iter().collect();
        let a = fit_survival(SurvivalKind::Event(1), &[Term::Covariate(0)], &with_tie).unwrap();
        for r in rows.iter_mut().skip(40) {
            r.outcome = Some(crate::dataset::Outcome { time: 9.0, status: 0 });
        }
        let without: Vec<&SubjectRecord> = rows.iter().collect();
        let b = fit_survival(SurvivalKind::Event(1), &[Term::Covariate(0)], &without).unwrap();
        assert_eq!(a.coefficients, b.coefficients);
    }
}
