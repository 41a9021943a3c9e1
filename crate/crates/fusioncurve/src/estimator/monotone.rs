use super::CurveEstimate;

/// Equal-weight isotonic (nondecreasing) regression by pooling adjacent
/// violators.
pub fn pava(values: &[f64]) -> Vec<f64> {
    // Blocks of (mean, size).
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        let mut cur = (v, 1usize);
        while let Some(&(m, k)) = blocks.last() {
            if m <= cur.0 {
                break;
            }
            blocks.pop();
            let total = k + cur.1;
            cur = ((m * k as f64 + cur.0 * cur.1 as f64) / total as f64, total);
        }
        blocks.push(cur);
    }
    blocks.into_iter().flat_map(|(m, k)| std::iter::repeat_n(m, k)).collect()
}

fn project(values: &[f64]) -> Vec<f64> {
    pava(values).into_iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

/// Project each (arm, cause) curve and its interval endpoints onto
/// nondecreasing functions, then clamp to [0, 1]. Raw values are kept in
/// the point fields; projected ones go to `monotone`.
pub fn monotone_correct(curve: &CurveEstimate) -> CurveEstimate {
    let mut out = curve.clone();
    let mut done = vec![false; out.points.len()];
    for i in 0..out.points.len() {
        if done[i] {
            continue;
        }
        let (arm, cause) = (out.points[i].arm, out.points[i].cause);
        let mut idx: Vec<usize> =
            (0..out.points.len()).filter(|&j| out.points[j].arm == arm && out.points[j].cause == cause).collect();
        idx.sort_by(|&a, &b| out.points[a].time.total_cmp(&out.points[b].time));
        let pick = |f: fn(&super::CurvePoint) -> f64| project(&idx.iter().map(|&j| f(&out.points[j])).collect::<Vec<_>>());
        let est = pick(|p| p.estimate);
        let ci_lo = pick(|p| p.ci_lo);
        let ci_hi = pick(|p| p.ci_hi);
        let band_lo = pick(|p| p.band_lo);
        let band_hi = pick(|p| p.band_hi);
        for (k, &j) in idx.iter().enumerate() {
            let m = &mut out.points[j].monotone;
            m.estimate = est[k];
            m.ci_lo = ci_lo[k];
            m.ci_hi = ci_hi[k];
            m.band_lo = band_lo[k];
            m.band_hi = band_hi[k];
            done[j] = true;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_case() {
        assert_eq!(pava(&[0.1, 0.3, 0.2]), vec![0.1, 0.25, 0.25]);
        assert_eq!(pava(&[3.0, 2.0, 1.0]), vec![2.0, 2.0, 2.0]);
        assert_eq!(pava(&[]), Vec::<f64>::new());
    }
}
