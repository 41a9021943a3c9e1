//! Finite observed-data laws on which the target functional can be computed
//! exactly, used to verify influence functions against numerical pathwise
//! derivatives under point-mass contamination.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    assemble, censored_residual, competing_residual, complete_residual, EifError, ResidualForm, RowFactors,
    RowTerms, TruncationCounts,
};
use crate::dataset::{Arm, Outcome, Trial};
use crate::nuisance::HazardPath;

/// One support point of the observed-data law. Covariate and marker are
/// level indices; historical points carry an observed time on the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPoint {
    pub trial: Trial,
    pub arm: Arm,
    pub x: usize,
    pub s: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
    #[serde(default)]
    pub status: usize,
    pub prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyTarget {
    pub arm: Arm,
    pub t: f64,
    #[serde(default = "one")]
    pub cause: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteToyModel {
    pub name: String,
    pub causes: usize,
    /// Grid of possible observed times, ascending.
    pub times: Vec<f64>,
    pub target: ToyTarget,
    pub points: Vec<ToyPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateauxOptions {
    /// Largest contamination step; shrunk if a point has little mass.
    pub h0: f64,
    /// Number of step halvings in the Richardson table.
    pub levels: usize,
}

impl Default for GateauxOptions {
    fn default() -> Self {
        GateauxOptions { h0: 1e-3, levels: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateauxReport {
    pub name: String,
    pub value: f64,
    pub support_points: usize,
    /// Max over support points of |numerical derivative - gradient|.
    pub max_error: f64,
    /// Same discrepancy for the risk-scale display centered by the parameter.
    pub max_error_display: f64,
    /// Same for the survival-scale "1 - {...}" display.
    pub max_error_survival_display: f64,
    /// Mean of the gradient under the law (should be 0).
    pub gradient_mean: f64,
}

/// Sufficient tables of a (possibly contaminated) law.
struct Tables {
    kappa: f64,
    by_x: BTreeMap<usize, f64>,
    bridge_x: BTreeMap<usize, f64>,
    bridge_xa: BTreeMap<(usize, Arm), f64>,
    bridge_xas: BTreeMap<(usize, Arm, usize), f64>,
    hist1_x: BTreeMap<usize, f64>,
    hist1_xs: BTreeMap<(usize, usize), f64>,
    /// (x, s, time index, status) -> mass among historical approved points.
    hist1_obs: BTreeMap<(usize, usize, usize, usize), f64>,
}

impl DiscreteToyModel {
    fn time_index(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&u| u == t)
    }

    fn tables(&self, p: &[f64]) -> Tables {
        let mut tb = Tables {
            kappa: 0.0,
            by_x: BTreeMap::new(),
            bridge_x: BTreeMap::new(),
            bridge_xa: BTreeMap::new(),
            bridge_xas: BTreeMap::new(),
            hist1_x: BTreeMap::new(),
            hist1_xs: BTreeMap::new(),
            hist1_obs: BTreeMap::new(),
        };
        for (pt, &w) in self.points.iter().zip(p) {
            *tb.by_x.entry(pt.x).or_default() += w;
            match pt.trial {
                Trial::Bridging => {
                    tb.kappa += w;
                    *tb.bridge_x.entry(pt.x).or_default() += w;
                    *tb.bridge_xa.entry((pt.x, pt.arm)).or_default() += w;
                    *tb.bridge_xas.entry((pt.x, pt.arm, pt.s)).or_default() += w;
                }
                Trial::Historical if pt.arm == Arm::Approved => {
                    *tb.hist1_x.entry(pt.x).or_default() += w;
                    *tb.hist1_xs.entry((pt.x, pt.s)).or_default() += w;
                    let ti = self.time_index(pt.time.unwrap_or(f64::NAN)).unwrap_or(usize::MAX);
                    *tb.hist1_obs.entry((pt.x, pt.s, ti, pt.status)).or_default() += w;
                }
                Trial::Historical => {}
            }
        }
        tb
    }

    /// Event-time law of historical approved rows at (x, s) as a hazard
    /// path, with the censoring survival just before each grid time.
    fn path(&self, tb: &Tables, x: usize, s: usize) -> HazardPath {
        let m = self.times.len();
        let j = self.causes;
        let mut ev = vec![0.0; m * j];
        let mut cens = vec![0.0; m];
        for (&(px, ps, ti, status), &w) in tb.hist1_obs.range((x, s, 0, 0)..=(x, s, usize::MAX, usize::MAX)) {
            debug_assert!(px == x && ps == s);
            if ti == usize::MAX {
                continue;
            }
            if status == 0 {
                cens[ti] += w;
            } else {
                ev[ti * j + status - 1] += w;
            }
        }
        let total: f64 = ev.iter().sum::<f64>() + cens.iter().sum::<f64>();
        let mut at_risk = total;
        let mut hazards = Vec::with_capacity(m * j);
        let mut censor_left = Vec::with_capacity(m);
        let mut gc = 1.0;
        for i in 0..m {
            censor_left.push(gc);
            let events: f64 = ev[i * j..(i + 1) * j].iter().sum();
            for k in 0..j {
                hazards.push(if at_risk > 0.0 { ev[i * j + k] / at_risk } else { 0.0 });
            }
            let after_events = at_risk - events;
            if after_events > 0.0 {
                gc *= 1.0 - cens[i] / after_events;
            }
            at_risk = after_events - cens[i];
        }
        HazardPath::product_limit(self.times.clone(), hazards, j, censor_left)
    }

    fn marker_levels(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.points.iter().map(|p| p.s).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// Marker-law average of cause incidence at (x) for the target arm.
    fn average(&self, tb: &Tables, x: usize) -> f64 {
        let tg = self.target;
        let pxa = tb.bridge_xa.get(&(x, tg.arm)).copied().unwrap_or(0.0);
        self.marker_levels()
            .into_iter()
            .map(|s| {
                let w = tb.bridge_xas.get(&(x, tg.arm, s)).copied().unwrap_or(0.0);
                if w == 0.0 {
                    0.0
                } else {
                    w / pxa * self.path(tb, x, s).incidence_at(tg.t, tg.cause - 1)
                }
            })
            .sum()
    }

    /// Exact value of the target functional under probabilities `p`.
    pub fn functional(&self, p: &[f64]) -> f64 {
        let tb = self.tables(p);
        tb.bridge_x
            .iter()
            .map(|(&x, &px)| if px == 0.0 { 0.0 } else { px / tb.kappa * self.average(&tb, x) })
            .sum()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.prob).collect()
    }

    fn has_censoring(&self) -> bool {
        self.points.iter().any(|p| p.trial == Trial::Historical && p.status == 0)
    }

    pub fn residual_form(&self) -> ResidualForm {
        if self.causes > 1 {
            ResidualForm::Competing
        } else if self.has_censoring() {
            ResidualForm::Censored
        } else {
            ResidualForm::Complete
        }
    }

    /// Influence pieces at support point `i` under the unperturbed law.
    pub fn terms(&self, i: usize, form: ResidualForm) -> RowTerms {
        let p = self.probabilities();
        let tb = self.tables(&p);
        let pt = &self.points[i];
        let tg = self.target;
        let mut f = RowFactors { historical: 0.0, bridging: 0.0, gamma_over_kappa: 0.0 };
        let mut residual = None;
        let mut observed = None;
        let mut average = None;
        let times = [tg.t];
        match pt.trial {
            Trial::Historical if pt.arm == Arm::Approved => {
                let px = tb.by_x[&pt.x];
                let p_bridge = tb.bridge_x.get(&pt.x).copied().unwrap_or(0.0) / px;
                let p_hist1 = tb.hist1_x[&pt.x] / px;
                let f_target = tb.bridge_xas.get(&(pt.x, tg.arm, pt.s)).copied().unwrap_or(0.0)
                    / tb.bridge_xa.get(&(pt.x, tg.arm)).copied().unwrap_or(f64::NAN);
                let f_source = tb.hist1_xs[&(pt.x, pt.s)] / tb.hist1_x[&pt.x];
                f.historical = p_bridge / p_hist1 * (f_target / f_source) / tb.kappa;
                let path = self.path(&tb, pt.x, pt.s);
                let time = pt.time.expect("historical toy point without time");
                let o = Outcome { time, status: pt.status };
                let ti = self.time_index(time).expect("time on grid");
                let censor = path.censor_left(ti);
                let mut counts = TruncationCounts::default();
                residual = Some(match form {
                    ResidualForm::Complete => complete_residual(&path, o, &times, tg.cause)[0],
                    ResidualForm::Censored => censored_residual(&path, o, censor, &times, 0.0, &mut counts)[0],
                    ResidualForm::Competing => {
                        competing_residual(&path, o, censor, &times, tg.cause, 0.0, &mut counts)[0]
                    }
                });
            }
            Trial::Historical => {}
            Trial::Bridging => {
                f.gamma_over_kappa = 1.0 / tb.kappa;
                if pt.arm == tg.arm {
                    let pa = tb.bridge_xa[&(pt.x, pt.arm)] / tb.bridge_x[&pt.x];
                    f.bridging = 1.0 / (tb.kappa * pa);
                }
                observed = Some(self.path(&tb, pt.x, pt.s).incidence_at(tg.t, tg.cause - 1));
                average = Some(self.average(&tb, pt.x));
            }
        }
        assemble(&f, residual, observed, average)
    }

    /// Positivity and well-formedness checks needed for the functional and
    /// its gradient to exist.
    pub fn validate(&self) -> Result<(), EifError> {
        let bad = |m: String| Err(EifError::PositivityViolated(m));
        let tg = self.target;
        if tg.arm == Arm::Placebo {
            return Err(EifError::BadTargetArm(tg.arm));
        }
        super::check_cause(tg.cause, self.causes)?;
        if self.points.is_empty() {
            return bad("toy has no support points".into());
        }
        if let Some(i) = self.points.iter().position(|p| !(p.prob > 0.0)) {
            return bad(format!("support point {i} has probability {}", self.points[i].prob));
        }
        let total: f64 = self.points.iter().map(|p| p.prob).sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("probabilities sum to {total}, not 1"));
        }
        for (i, p) in self.points.iter().enumerate() {
            if !p.arm.allowed_in(p.trial) {
                return bad(format!("support point {i}: arm {} not allowed in the {} study", p.arm, p.trial));
            }
            match (p.trial, p.time) {
                (Trial::Historical, Some(t)) if self.time_index(t).is_some() && p.status <= self.causes => {}
                (Trial::Bridging, None) => {}
                _ => return bad(format!("support point {i}: malformed outcome")),
            }
        }
        let tb = self.tables(&self.probabilities());
        if !(tb.kappa > 0.0 && tb.kappa < 1.0) {
            return bad("both studies need positive mass".into());
        }
        if self.time_index(tg.t).is_none() {
            return bad(format!("target time {} is not on the grid", tg.t));
        }
        let t_idx = self.time_index(tg.t).unwrap_or(0);
        for (&(x, arm, s), _) in tb.bridge_xas.iter().filter(|(&(_, a, _), _)| a == tg.arm) {
            let _ = arm;
            if tb.hist1_xs.get(&(x, s)).copied().unwrap_or(0.0) <= 0.0 {
                return bad(format!("no historical approved mass at x={x}, s={s}"));
            }
            let path = self.path(&tb, x, s);
            for m in 0..=t_idx {
                if !(path.survival_before(m) > 0.0) || !(path.censor_left(m) > 0.0) {
                    return bad(format!("empty risk set before t at x={x}, s={s}"));
                }
            }
        }
        for &x in tb.bridge_x.keys() {
            if tb.bridge_xa.get(&(x, tg.arm)).copied().unwrap_or(0.0) <= 0.0 {
                return bad(format!("no bridging mass in arm {} at x={x}", tg.arm));
            }
            if tb.hist1_x.get(&x).copied().unwrap_or(0.0) <= 0.0 {
                return bad(format!("no historical approved mass at x={x}"));
            }
        }
        Ok(())
    }
}

/// Richardson-extrapolated central difference of `psi` at 0.
fn derivative(psi: impl Fn(f64) -> f64, h0: f64, levels: usize) -> f64 {
    let mut table: Vec<Vec<f64>> = Vec::with_capacity(levels + 1);
    for i in 0..=levels {
        let h = h0 / f64::powi(2.0, i as i32);
        let mut row = vec![(psi(h) - psi(-h)) / (2.0 * h)];
        for k in 1..=i {
            let factor = f64::powi(4.0, k as i32);
            let prev = &table[i - 1];
            row.push(row[k - 1] + (row[k - 1] - prev[k - 1]) / (factor - 1.0));
        }
        table.push(row);
    }
    table[levels][levels]
}

/// Compare the closed-form gradient with numerical pathwise derivatives at
/// every support point.
pub fn gateaux_check(toy: &DiscreteToyModel, opts: &GateauxOptions) -> Result<GateauxReport, EifError> {
    toy.validate()?;
    let p = toy.probabilities();
    let value = toy.functional(&p);
    let form = toy.residual_form();
    let p_min = p.iter().cloned().fold(f64::INFINITY, f64::min);
    let h0 = opts.h0.min(0.25 * p_min);
    let mut report = GateauxReport {
        name: toy.name.clone(),
        value,
        support_points: p.len(),
        max_error: 0.0,
        max_error_display: 0.0,
        max_error_survival_display: 0.0,
        gradient_mean: 0.0,
    };
    for i in 0..p.len() {
        let psi = |eps: f64| {
            let q: Vec<f64> =
                p.iter().enumerate().map(|(k, &v)| (1.0 - eps) * v + if k == i { eps } else { 0.0 }).collect();
            toy.functional(&q)
        };
        let d = derivative(psi, h0, opts.levels);
        let terms = toy.terms(i, form);
        report.max_error = report.max_error.max((d - terms.centered(value)).abs());
        report.max_error_display = report.max_error_display.max((d - terms.display_centered(value)).abs());
        report.max_error_survival_display =
            report.max_error_survival_display.max((d - terms.survival_display_centered(value)).abs());
        report.gradient_mean += p[i] * terms.centered(value);
    }
    Ok(report)
}

/// Parameters of the generative toys shipped with the crate.
struct Design {
    name: &'static str,
    causes: usize,
    censoring: bool,
    constant_time: Option<f64>,
}

const TIMES: [f64; 3] = [1.0, 2.0, 3.0];
const P_BRIDGE: f64 = 0.35;

fn x_law(trial: Trial) -> [f64; 2] {
    match trial {
        Trial::Historical => [0.55, 0.45],
        Trial::Bridging => [0.4, 0.6],
    }
}

fn arm_law(trial: Trial, x: usize) -> Vec<(Arm, f64)> {
    let xf = x as f64;
    match trial {
        Trial::Historical => vec![(Arm::Placebo, 0.5 - 0.1 * xf), (Arm::Approved, 0.5 + 0.1 * xf)],
        Trial::Bridging => vec![(Arm::Approved, 0.6 - 0.2 * xf), (Arm::Investigational, 0.4 + 0.2 * xf)],
    }
}

fn marker_law(trial: Trial, arm: Arm, x: usize) -> [f64; 3] {
    match (trial, arm, x) {
        (Trial::Historical, Arm::Approved, 0) => [0.5, 0.3, 0.2],
        (Trial::Historical, Arm::Approved, _) => [0.2, 0.4, 0.4],
        (Trial::Historical, _, 0) => [0.6, 0.3, 0.1],
        (Trial::Historical, _, _) => [0.4, 0.4, 0.2],
        (_, Arm::Investigational, 0) => [0.1, 0.3, 0.6],
        (_, Arm::Investigational, _) => [0.15, 0.25, 0.6],
        (_, _, 0) => [0.3, 0.4, 0.3],
        (_, _, _) => [0.25, 0.35, 0.4],
    }
}

/// Law of (event time index, cause) for a historical row; the last grid
/// time absorbs the remaining mass.
fn event_law(design: &Design, arm: Arm, x: usize, s: usize) -> Vec<(usize, usize, f64)> {
    if let Some(t) = design.constant_time {
        let ti = TIMES.iter().position(|&u| u == t).expect("constant time on grid");
        return vec![(ti, 1, 1.0)];
    }
    let base = if arm == Arm::Approved { [0.15, 0.25] } else { [0.3, 0.35] };
    let scale = (1.0 - 0.2 * s as f64) * (1.0 + 0.4 * x as f64);
    let mut out = Vec::new();
    let mut surv = 1.0;
    for (ti, b) in base.iter().enumerate() {
        let h = b * scale;
        let mass = surv * h;
        surv *= 1.0 - h;
        push_causes(design, s, ti, mass, &mut out);
    }
    push_causes(design, s, TIMES.len() - 1, surv, &mut out);
    out
}

fn push_causes(design: &Design, s: usize, ti: usize, mass: f64, out: &mut Vec<(usize, usize, f64)>) {
    if design.causes == 1 {
        out.push((ti, 1, mass));
    } else {
        let first = 0.3 + 0.2 * s as f64 + 0.05 * ti as f64;
        out.push((ti, 1, mass * first));
        out.push((ti, 2, mass * (1.0 - first)));
    }
}

/// Censoring-time law: index on the grid, or `None` for beyond the grid.
fn censoring_law(design: &Design, x: usize) -> Vec<(Option<usize>, f64)> {
    if !design.censoring {
        return vec![(None, 1.0)];
    }
    let k = 1.0 + 0.5 * x as f64;
    let c = [0.1 * k, 0.15 * k, 0.2 * k];
    let rest = 1.0 - c.iter().sum::<f64>();
    vec![(Some(0), c[0]), (Some(1), c[1]), (Some(2), c[2]), (None, rest)]
}

fn build(design: Design, target: ToyTarget) -> DiscreteToyModel {
    let mut cells: BTreeMap<(Trial, Arm, usize, usize, Option<usize>, usize), f64> = BTreeMap::new();
    for trial in [Trial::Historical, Trial::Bridging] {
        let pt = if trial == Trial::Bridging { P_BRIDGE } else { 1.0 - P_BRIDGE };
        for (x, px) in x_law(trial).into_iter().enumerate() {
            for (arm, pa) in arm_law(trial, x) {
                for (s, ps) in marker_law(trial, arm, x).into_iter().enumerate() {
                    let base = pt * px * pa * ps;
                    if trial == Trial::Bridging {
                        *cells.entry((trial, arm, x, s, None, 0)).or_default() += base;
                        continue;
                    }
                    for (ti, cause, pe) in event_law(&design, arm, x, s) {
                        for (ci, pc) in censoring_law(&design, x) {
                            // Event wins ties with censoring.
                            let (obs, status) = match ci {
                                Some(c) if c < ti => (c, 0),
                                _ => (ti, cause),
                            };
                            *cells.entry((trial, arm, x, s, Some(obs), status)).or_default() += base * pe * pc;
                        }
                    }
                }
            }
        }
    }
    let points = cells
        .into_iter()
        .filter(|(_, p)| *p > 0.0)
        .map(|((trial, arm, x, s, ti, status), prob)| ToyPoint {
            trial,
            arm,
            x,
            s,
            time: ti.map(|i| TIMES[i]),
            status,
            prob,
        })
        .collect();
    DiscreteToyModel { name: design.name.into(), causes: design.causes, times: TIMES.to_vec(), target, points }
}

fn default_target() -> ToyTarget {
    ToyTarget { arm: Arm::Investigational, t: 2.0, cause: 1 }
}

impl DiscreteToyModel {
    /// Two covariate levels, three marker levels, three event times, no censoring.
    pub fn uncensored() -> Self {
        build(
            Design { name: "uncensored", causes: 1, censoring: false, constant_time: None },
            default_target(),
        )
    }

    /// Same law with covariate-dependent censoring on the time grid.
    pub fn censored() -> Self {
        build(
            Design { name: "censored", causes: 1, censoring: true, constant_time: None },
            default_target(),
        )
    }

    /// Two competing causes with marker-dependent cause shares, censored.
    pub fn competing() -> Self {
        build(
            Design { name: "competing", causes: 2, censoring: true, constant_time: None },
            default_target(),
        )
    }

    /// Every historical event at time 2, no censoring.
    pub fn constant_outcome() -> Self {
        build(
            Design { name: "constant-outcome", causes: 1, censoring: false, constant_time: Some(2.0) },
            default_target(),
        )
    }

    /// The toys verified by the command-line gate.
    pub fn shipped() -> Vec<Self> {
        vec![Self::uncensored(), Self::censored()]
    }
}
