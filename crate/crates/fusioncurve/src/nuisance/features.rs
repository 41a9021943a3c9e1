use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Arm;

/// One column of a working-model design matrix. Text form uses 1-based
/// indices: `x3`, `s`, `s2`, `s*x2`, `a`, `a*x6`, `a*s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Term {
    Covariate(usize),
    Marker(usize),
    MarkerCovariate(usize, usize),
    Arm,
    ArmCovariate(usize),
    ArmMarker(usize),
}

impl Term {
    /// Value of the term for a row; `arm` enters as the approved-arm dummy.
    pub fn value(&self, x: &[f64], marker: &[f64], arm: Arm) -> f64 {
        let a = if arm == Arm::Approved { 1.0 } else { 0.0 };
        match *self {
            Term::Covariate(i) => x[i],
            Term::Marker(j) => marker[j],
            Term::MarkerCovariate(j, i) => marker[j] * x[i],
            Term::Arm => a,
            Term::ArmCovariate(i) => a * x[i],
            Term::ArmMarker(j) => a * marker[j],
        }
    }

    pub fn uses_marker(&self) -> bool {
        matches!(self, Term::Marker(_) | Term::MarkerCovariate(..) | Term::ArmMarker(_))
    }

    pub fn uses_arm(&self) -> bool {
        matches!(self, Term::Arm | Term::ArmCovariate(_) | Term::ArmMarker(_))
    }

    /// Checks indices against the covariate dimension and marker length.
    pub fn fits(&self, dim: usize, marker_len: usize) -> bool {
        match *self {
            Term::Covariate(i) | Term::ArmCovariate(i) => i < dim,
            Term::Marker(j) | Term::ArmMarker(j) => j < marker_len,
            Term::MarkerCovariate(j, i) => j < marker_len && i < dim,
            Term::Arm => true,
        }
    }
}

fn marker_name(j: usize) -> String {
    if j == 0 {
        "s".into()
    } else {
        format!("s{}", j + 1)
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Term::Covariate(i) => write!(f, "x{}", i + 1),
            Term::Marker(j) => f.write_str(&marker_name(j)),
            Term::MarkerCovariate(j, i) => write!(f, "{}*x{}", marker_name(j), i + 1),
            Term::Arm => f.write_str("a"),
            Term::ArmCovariate(i) => write!(f, "a*x{}", i + 1),
            Term::ArmMarker(j) => write!(f, "a*{}", marker_name(j)),
        }
    }
}

fn parse_atom(atom: &str) -> Option<Atom> {
    let atom = atom.trim();
    if atom == "a" {
        return Some(Atom::Arm);
    }
    if atom == "s" || atom == "s1" {
        return Some(Atom::Marker(0));
    }
    let (head, tail) = atom.split_at(1.min(atom.len()));
    let idx: usize = tail.parse().ok().filter(|&i| i >= 1)?;
    match head {
        "x" => Some(Atom::Covariate(idx - 1)),
        "s" => Some(Atom::Marker(idx - 1)),
        _ => None,
    }
}

enum Atom {
    Covariate(usize),
    Marker(usize),
    Arm,
}

impl FromStr for Term {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("unrecognized feature term `{s}`");
        let parts: Vec<&str> = s.split('*').collect();
        match parts.as_slice() {
            [one] => match parse_atom(one).ok_or_else(bad)? {
                Atom::Covariate(i) => Ok(Term::Covariate(i)),
                Atom::Marker(j) => Ok(Term::Marker(j)),
                Atom::Arm => Ok(Term::Arm),
            },
            [l, r] => {
                let (l, r) = (parse_atom(l).ok_or_else(bad)?, parse_atom(r).ok_or_else(bad)?);
                match (l, r) {
                    (Atom::Marker(j), Atom::Covariate(i)) | (Atom::Covariate(i), Atom::Marker(j)) => {
                        Ok(Term::MarkerCovariate(j, i))
                    }
                    (Atom::Arm, Atom::Covariate(i)) | (Atom::Covariate(i), Atom::Arm) => Ok(Term::ArmCovariate(i)),
                    (Atom::Arm, Atom::Marker(j)) | (Atom::Marker(j), Atom::Arm) => Ok(Term::ArmMarker(j)),
                    _ => Err(bad()),
                }
            }
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for Term {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Term> for String {
    fn from(t: Term) -> String {
        t.to_string()
    }
}

pub fn design_row(terms: &[Term], x: &[f64], marker: &[f64], arm: Arm) -> Vec<f64> {
    terms.iter().map(|t| t.value(x, marker, arm)).collect()
}

/// Covariates 1..=d as terms.
pub fn all_covariates(dim: usize) -> Vec<Term> {
    (0..dim).map(Term::Covariate).collect()
}

/// Feature sets for every working model; an empty list is an intercept-only fit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NuisanceSpec {
    /// P(bridging | x)
    pub trial_propensity: Vec<Term>,
    /// P(approved arm and historical | x)
    pub approved_propensity: Vec<Term>,
    /// P(arm | x, bridging)
    pub arm_propensity: Vec<Term>,
    /// Marker law in the historical approved arm.
    pub historical_density: Vec<Term>,
    /// Marker law in each bridging arm.
    pub bridging_density: Vec<Term>,
    /// Cause-specific event hazards (shared term list across causes).
    pub event: Vec<Term>,
    pub censoring: Vec<Term>,
}

impl NuisanceSpec {
    /// Main effects of every covariate everywhere, plus the marker and arm in
    /// the hazard models.
    pub fn main_effects(dim: usize, marker_len: usize) -> Self {
        let xs = all_covariates(dim);
        let mut hazard = xs.clone();
        hazard.extend((0..marker_len).map(Term::Marker));
        NuisanceSpec {
            trial_propensity: xs.clone(),
            approved_propensity: xs.clone(),
            arm_propensity: xs.clone(),
            historical_density: xs.clone(),
            bridging_density: xs,
            event: hazard.clone(),
            censoring: hazard,
        }
    }

    pub fn all_terms(&self) -> impl Iterator<Item = (&'static str, &Term)> {
        let groups: [(&'static str, &Vec<Term>); 7] = [
            ("trial_propensity", &self.trial_propensity),
            ("approved_propensity", &self.approved_propensity),
            ("arm_propensity", &self.arm_propensity),
            ("historical_density", &self.historical_density),
            ("bridging_density", &self.bridging_density),
            ("event", &self.event),
            ("censoring", &self.censoring),
        ];
        groups.into_iter().flat_map(|(name, terms)| terms.iter().map(move |t| (name, t)))
    }

    /// Reject terms that are out of range or not allowed in a model.
    pub fn validate(&self, dim: usize, marker_len: usize) -> Result<(), String> {
        for (name, t) in self.all_terms() {
            if !t.fits(dim, marker_len) {
                return Err(format!("{name}: term `{t}` is out of range"));
            }
            let covariate_only = !matches!(name, "event" | "censoring");
            if covariate_only && (t.uses_marker() || t.uses_arm()) {
                return Err(format!("{name}: only covariate terms are allowed, got `{t}`"));
            }
        }
        Ok(())
    }
}
