//! Simultaneous bands from a Gaussian-multiplier bootstrap of the
//! studentized influence process.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{mean, sd, EifMatrix, EstimatorError};
use crate::dataset::Arm;
use crate::rng::{stream_id, stream_rng};

/// Multiplier streams live in their own group so they never collide with
/// fold or resampling streams drawn from the same master seed.
const BAND_GROUP: u64 = 0xBA4D;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub arm: Arm,
    pub cause: usize,
    /// EIF-matrix columns covered, in time order.
    pub columns: Vec<usize>,
    /// Empirical sup-statistic quantile.
    pub quantile: f64,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

fn groups(eif: &EifMatrix) -> Vec<(Arm, usize, Vec<usize>)> {
    let mut out: Vec<(Arm, usize, Vec<usize>)> = Vec::new();
    for (c, col) in eif.columns.iter().enumerate() {
        match out.iter_mut().find(|g| g.0 == col.arm && g.1 == col.cause) {
            Some(g) => g.2.push(c),
            None => out.push((col.arm, col.cause, vec![c])),
        }
    }
    out
}

/// Sup-statistic quantile for each column group, sharing multiplier draws.
fn quantiles(eif: &EifMatrix, sets: &[Vec<usize>], level: f64, draws: usize, seed: u64) -> Vec<f64> {
    let n = eif.n;
    let used: Vec<usize> = sets.iter().flatten().copied().collect();
    // Centered, studentized columns scaled by 1/sqrt(n).
    let scaled: Vec<Vec<f64>> = used
        .iter()
        .map(|&c| {
            let col = eif.column(c);
            let m = mean(col);
            let s = sd(col) * (n as f64).sqrt();
            col.iter().map(|v| (v - m) / s).collect()
        })
        .collect();
    let sups: Vec<Vec<f64>> = (0..draws)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(seed, stream_id(BAND_GROUP, b as u64));
            let xi: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let stat: Vec<f64> =
                scaled.iter().map(|col| col.iter().zip(&xi).map(|(a, x)| a * x).sum::<f64>().abs()).collect();
            let mut offset = 0;
            sets.iter()
                .map(|set| {
                    let s = stat[offset..offset + set.len()].iter().cloned().fold(0.0, f64::max);
                    offset += set.len();
                    s
                })
                .collect()
        })
        .collect();
    (0..sets.len())
        .map(|g| {
            let mut v: Vec<f64> = sups.iter().map(|s| s[g]).collect();
            v.sort_by(f64::total_cmp);
            let k = ((level * draws as f64).ceil() as usize).clamp(1, draws);
            v[k - 1]
        })
        .collect()
}

/// Band per (arm, cause): estimate +- q * SD_t / sqrt(n), with q the
/// `level` quantile of the sup over the grid of the studentized multiplier
/// process. Fails on a column with zero spread.
pub fn uniform_band(eif: &EifMatrix, level: f64, draws: usize, seed: u64) -> Result<Vec<Band>, EstimatorError> {
    if draws < 200 {
        return Err(EstimatorError::BadSetting("multiplier draws must be at least 200".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(EstimatorError::BadSetting("level must lie in (0, 1)".into()));
    }
    for (c, col) in eif.columns.iter().enumerate() {
        if sd(eif.column(c)) == 0.0 {
            return Err(EstimatorError::DegenerateVariance { arm: col.arm, cause: col.cause, time: col.time });
        }
    }
    let gs = groups(eif);
    let sets: Vec<Vec<usize>> = gs.iter().map(|g| g.2.clone()).collect();
    let qs = quantiles(eif, &sets, level, draws, seed);
    let root_n = (eif.n as f64).sqrt();
    Ok(gs
        .into_iter()
        .zip(qs)
        .map(|((arm, cause, columns), quantile)| {
            let half: Vec<f64> = columns.iter().map(|&c| quantile * sd(eif.column(c)) / root_n).collect();
            let est: Vec<f64> = columns.iter().map(|&c| eif.estimate(c)).collect();
            Band {
                arm,
                cause,
                lo: est.iter().zip(&half).map(|(e, h)| e - h).collect(),
                hi: est.iter().zip(&half).map(|(e, h)| e + h).collect(),
                columns,
                quantile,
            }
        })
        .collect())
}

/// Bands over the columns with positive spread only; a group with none left
/// is dropped.
pub(crate) fn bands_skipping_degenerate(
    eif: &EifMatrix,
    level: f64,
    draws: usize,
    seed: u64,
) -> Result<Vec<Band>, EstimatorError> {
    let keep: Vec<usize> = (0..eif.columns.len()).filter(|&c| sd(eif.column(c)) > 0.0).collect();
    if keep.len() == eif.columns.len() {
        return uniform_band(eif, level, draws, seed);
    }
    let sub = EifMatrix {
        n: eif.n,
        columns: keep.iter().map(|&c| eif.columns[c]).collect(),
        values: keep.iter().flat_map(|&c| eif.column(c).iter().copied()).collect(),
    };
    if sub.columns.is_empty() {
        return Ok(Vec::new());
    }
    let mut bands = uniform_band(&sub, level, draws, seed)?;
    for b in &mut bands {
        for c in &mut b.columns {
            *c = keep[*c];
        }
    }
    Ok(bands)
}
