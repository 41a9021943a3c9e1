use serde::{Deserialize, Serialize};

/// Conditional event-time law for one (x, s) at the approved arm, held as a
/// step function over jump times. Carries everything the censored and
/// competing-risks influence functions need: all-cause survival at each
/// jump, the share of each jump's drop taken by each cause, and the
/// censoring survival just before each jump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardPath {
    causes: usize,
    times: Vec<f64>,
    survival: Vec<f64>,
    /// Row-major m x J.
    share: Vec<f64>,
    censor_left: Vec<f64>,
}

fn shares_from(increments: &[f64], causes: usize) -> Vec<f64> {
    let mut share = Vec::with_capacity(increments.len());
    for row in increments.chunks(causes) {
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            share.extend(row.iter().map(|v| v / total));
        } else {
            share.extend(std::iter::repeat_n(0.0, causes));
        }
    }
    share
}

impl HazardPath {
    /// Continuous-time form: survival is `exp(-sum of cumulative hazards)`.
    /// `increments` is m x J cause-specific cumulative-hazard increments.
    pub fn from_cumulative(times: Vec<f64>, increments: Vec<f64>, causes: usize, censor_left: Vec<f64>) -> Self {
        assert_eq!(increments.len(), times.len() * causes);
        assert_eq!(censor_left.len(), times.len());
        let mut acc = 0.0;
        let survival = increments
            .chunks(causes)
            .map(|row| {
                acc += row.iter().sum::<f64>();
                (-acc).exp()
            })
            .collect();
        let share = shares_from(&increments, causes);
        HazardPath { causes, times, survival, share, censor_left }
    }

    /// Discrete-time form: `hazards` is m x J conditional probabilities of a
    /// cause-k event at each time given survival to it.
    pub fn product_limit(times: Vec<f64>, hazards: Vec<f64>, causes: usize, censor_left: Vec<f64>) -> Self {
        assert_eq!(hazards.len(), times.len() * causes);
        assert_eq!(censor_left.len(), times.len());
        let mut g = 1.0;
        let survival = hazards
            .chunks(causes)
            .map(|row| {
                g *= 1.0 - row.iter().sum::<f64>();
                g
            })
            .collect();
        let share = shares_from(&hazards, causes);
        HazardPath { causes, times, survival, share, censor_left }
    }

    /// Explicit survival values with cause shares (used by closed-form laws).
    pub fn from_survival(
        times: Vec<f64>,
        survival: Vec<f64>,
        share: Vec<f64>,
        causes: usize,
        censor_left: Vec<f64>,
    ) -> Self {
        assert_eq!(survival.len(), times.len());
        assert_eq!(share.len(), times.len() * causes);
        HazardPath { causes, times, survival, share, censor_left }
    }

    pub fn causes(&self) -> usize {
        self.causes
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Number of jump times at or before `t`.
    pub fn count_at(&self, t: f64) -> usize {
        self.times.partition_point(|&u| u <= t)
    }

    pub fn survival_at(&self, t: f64) -> f64 {
        match self.count_at(t) {
            0 => 1.0,
            k => self.survival[k - 1],
        }
    }

    /// Survival at jump m.
    pub fn survival(&self, m: usize) -> f64 {
        self.survival[m]
    }

    /// Survival just before jump m.
    pub fn survival_before(&self, m: usize) -> f64 {
        if m == 0 {
            1.0
        } else {
            self.survival[m - 1]
        }
    }

    pub fn censor_left(&self, m: usize) -> f64 {
        self.censor_left[m]
    }

    pub fn share(&self, m: usize, cause: usize) -> f64 {
        self.share[m * self.causes + cause]
    }

    /// Discrete all-cause hazard at jump m implied by the survival steps.
    pub fn hazard(&self, m: usize) -> f64 {
        let before = self.survival_before(m);
        if before > 0.0 {
            1.0 - self.survival[m] / before
        } else {
            1.0
        }
    }

    /// Cause-specific discrete hazard at jump m (cause is 0-based).
    pub fn cause_hazard(&self, m: usize, cause: usize) -> f64 {
        self.hazard(m) * self.share(m, cause)
    }

    /// Cumulative incidence of each cause at every jump time, m x J.
    pub fn incidence_table(&self) -> Vec<f64> {
        if self.causes == 1 {
            return self.survival.iter().map(|g| 1.0 - g).collect();
        }
        let mut out = Vec::with_capacity(self.share.len());
        let mut acc = vec![0.0; self.causes];
        for m in 0..self.times.len() {
            let drop = self.survival_before(m) - self.survival[m];
            for (k, a) in acc.iter_mut().enumerate() {
                *a += drop * self.share(m, k);
            }
            out.extend_from_slice(&acc);
        }
        out
    }

    /// Cause-specific cumulative incidence at `t` (cause 0-based). With a
    /// single cause this is one minus survival.
    pub fn incidence_at(&self, t: f64, cause: usize) -> f64 {
        if self.causes == 1 {
            return 1.0 - self.survival_at(t);
        }
        let k = self.count_at(t);
        (0..k).map(|m| (self.survival_before(m) - self.survival[m]) * self.share(m, cause)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn causes_partition_the_drop() {
        let p = HazardPath::from_cumulative(
            vec![1.0, 2.0, 3.0],
            vec![0.1, 0.2, 0.0, 0.3, 0.4, 0.1],
            2,
            vec![1.0; 3],
        );
        for t in [0.5, 1.0, 2.5, 3.0, 9.0] {
            let total = p.incidence_at(t, 0) + p.incidence_at(t, 1);
            assert!((total - (1.0 - p.survival_at(t))).abs() < 1e-15);
        }
        assert!((p.incidence_at(1.5, 1) - (1.0 - (-0.3f64).exp()) * 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn product_limit_hazards_round_trip() {
        let h = vec![0.2, 0.5, 0.25];
        let p = HazardPath::product_limit(vec![1.0, 2.0, 3.0], h.clone(), 1, vec![1.0; 3]);
        for (m, v) in h.iter().enumerate() {
            assert!((p.hazard(m) - v).abs() < 1e-15);
        }
        assert!((p.survival_at(3.0) - 0.8 * 0.5 * 0.75).abs() < 1e-15);
    }
}
