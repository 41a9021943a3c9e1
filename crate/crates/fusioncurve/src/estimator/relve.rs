//! Relative efficacy `1 - R(1', t) / R(1, t)` with delta-method inference.

use serde::{Deserialize, Serialize};

use super::{mean, normal_quantile, sd, EstimatorError, SCHEMA_VERSION};

/// Approved-arm risks at or below this are treated as zero.
pub const DENOMINATOR_EPS: f64 = 1e-6;

/// Estimates and uncentered influence columns of one arm over a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmCurve {
    pub times: Vec<f64>,
    pub estimates: Vec<f64>,
    /// One column of per-subject values per time.
    pub phi: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RelVeStatus {
    Ok,
    /// Equal arm risks: the log-relVE influence divides by zero.
    DegenerateVariance,
    /// Investigational risk is not positive, so the log ratio is undefined.
    NoLogScale,
    /// Approved-arm risk at or below the denominator threshold.
    Undefined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelVePoint {
    pub time: f64,
    pub risk_approved: f64,
    pub risk_investigational: f64,
    pub relve: Option<f64>,
    /// SE of log(R(1') / R(1)).
    pub se_log_rr: Option<f64>,
    /// Delta-method SE of relVE itself.
    pub se_relve: Option<f64>,
    /// SE of log(relVE) from `(phi*_{1'} - (R1'/R1) phi*_1) / (R1 - R1')`.
    pub se_log_relve: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub status: RelVeStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelVeEstimate {
    pub schema_version: u32,
    pub level: f64,
    pub points: Vec<RelVePoint>,
}

/// Pointwise relVE. The CI maps a log-risk-ratio interval through
/// `1 - exp(.)`, so its endpoints never exceed 1.
pub fn relative_ve(approved: &ArmCurve, investigational: &ArmCurve, level: f64) -> Result<RelVeEstimate, EstimatorError> {
    if approved.times != investigational.times
        || approved.phi.len() != approved.times.len()
        || investigational.phi.len() != investigational.times.len()
        || approved.phi.iter().chain(&investigational.phi).any(|c| c.len() != approved.phi[0].len())
    {
        return Err(EstimatorError::Mismatch);
    }
    if approved.estimates.iter().all(|&r| r <= DENOMINATOR_EPS) {
        return Err(EstimatorError::DenominatorNearZero(DENOMINATOR_EPS));
    }
    let z = normal_quantile(0.5 + level / 2.0);
    let points = approved
        .times
        .iter()
        .enumerate()
        .map(|(k, &time)| {
            let (r1, r1p) = (approved.estimates[k], investigational.estimates[k]);
            let mut p = RelVePoint {
                time,
                risk_approved: r1,
                risk_investigational: r1p,
                relve: None,
                se_log_rr: None,
                se_relve: None,
                se_log_relve: None,
                ci_lo: None,
                ci_hi: None,
                status: RelVeStatus::Ok,
            };
            if r1 <= DENOMINATOR_EPS {
                p.status = RelVeStatus::Undefined;
                return p;
            }
            let ratio = r1p / r1;
            p.relve = Some(1.0 - ratio);
            let (a, b) = (&approved.phi[k], &investigational.phi[k]);
            let root_n = (a.len() as f64).sqrt();
            let (ma, mb) = (mean(a), mean(b));

            let gap = r1 - r1p;
            if gap.abs() > DENOMINATOR_EPS {
                let infl: Vec<f64> = a.iter().zip(b).map(|(x, y)| ((y - mb) - ratio * (x - ma)) / gap).collect();
                p.se_log_relve = Some(sd(&infl) / root_n);
            } else {
                p.status = RelVeStatus::DegenerateVariance;
            }

            if r1p > 0.0 {
                let infl: Vec<f64> = a.iter().zip(b).map(|(x, y)| (y - mb) / r1p - (x - ma) / r1).collect();
                let se = sd(&infl) / root_n;
                let log_rr = ratio.ln();
                p.se_log_rr = Some(se);
                p.se_relve = Some(ratio * se);
                p.ci_lo = Some(1.0 - (log_rr + z * se).exp());
                p.ci_hi = Some(1.0 - (log_rr - z * se).exp());
            } else if p.status == RelVeStatus::Ok {
                p.status = RelVeStatus::NoLogScale;
            }
            p
        })
        .collect();
    Ok(RelVeEstimate { schema_version: SCHEMA_VERSION, level, points })
}

impl RelVeEstimate {
    pub fn write_csv(&self, path: &std::path::Path) -> Result<(), EstimatorError> {
        use std::io::Write;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "time,risk_approved,risk_investigational,relve,se_log_rr,se_relve,se_log_relve,ci_lo,ci_hi,status")?;
        for p in &self.points {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{:?}",
                p.time,
                p.risk_approved,
                p.risk_investigational,
                opt(p.relve),
                opt(p.se_log_rr),
                opt(p.se_relve),
                opt(p.se_log_relve),
                opt(p.ci_lo),
                opt(p.ci_hi),
                p.status
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(est: f64, col: Vec<f64>) -> ArmCurve {
        ArmCurve { times: vec![1.0], estimates: vec![est], phi: vec![col] }
    }

    #[test]
    fn arithmetic_and_degenerate() {
        let a = curve(0.2, vec![0.1, 0.3, 0.2, 0.2]);
        let b = curve(0.1, vec![0.0, 0.2, 0.1, 0.1]);
        let r = relative_ve(&a, &b, 0.95).unwrap();
        assert!((r.points[0].relve.unwrap() - 0.5).abs() < 1e-15);
        let same = relative_ve(&a, &a, 0.95).unwrap();
        assert_eq!(same.points[0].relve, Some(0.0));
        assert_eq!(same.points[0].status, RelVeStatus::DegenerateVariance);
        assert!(same.points[0].se_log_relve.is_none());
        let zero = curve(0.0, vec![0.0; 4]);
        assert!(matches!(relative_ve(&zero, &b, 0.95), Err(EstimatorError::DenominatorNearZero(_))));
    }
}
