//! Fused two-study data model: a historical trial with right-censored
//! outcomes and a bridging study that only records covariates, arm and marker.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: arm code `{code}` is not allowed in the {trial} file")]
    BadArmCode { row: usize, code: String, trial: Trial },
    #[error("row {row}: observed time must be positive")]
    NonPositiveTime { row: usize },
    #[error("row {row}: event code {code} outside 0..={causes}")]
    BadEventCode { row: usize, code: i64, causes: usize },
    #[error("row {row}: missing or non-numeric value in column `{column}`")]
    MissingValue { row: usize, column: String },
    #[error("{0}")]
    EmptyArm(String),
    #[error("horizon {horizon} exceeds the largest observed time {max_time}")]
    HorizonExceedsData { horizon: f64, max_time: f64 },
    #[error("invalid record {index}: {reason}")]
    InvalidRecord { index: usize, reason: String },
    #[error("row {row}: arm code `{code}` is not allowed in a two-arm trial file (use 1 or 1p)")]
    TwoArmCode { row: usize, code: String },
    #[error("no bridging rows remain after trimming")]
    AllBridgingDropped,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arm {
    #[serde(rename = "0")]
    Placebo,
    #[serde(rename = "1")]
    Approved,
    #[serde(rename = "1p")]
    Investigational,
}

impl Arm {
    pub fn code(self) -> &'static str {
        match self {
            Arm::Placebo => "0",
            Arm::Approved => "1",
            Arm::Investigational => "1p",
        }
    }

    pub fn from_code(code: &str) -> Option<Arm> {
        match code.trim() {
            "0" => Some(Arm::Placebo),
            "1" => Some(Arm::Approved),
            "1p" => Some(Arm::Investigational),
            _ => None,
        }
    }

    pub fn allowed_in(self, trial: Trial) -> bool {
        match trial {
            Trial::Historical => self != Arm::Investigational,
            Trial::Bridging => self != Arm::Placebo,
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trial {
    Historical,
    Bridging,
}

impl fmt::Display for Trial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Trial::Historical => "historical",
            Trial::Bridging => "bridging",
        })
    }
}

/// Observed follow-up: time and status (0 censored, k a cause-k event).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub time: f64,
    pub status: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub x: Vec<f64>,
    pub arm: Arm,
    pub trial: Trial,
    pub marker: Vec<f64>,
    pub outcome: Option<Outcome>,
}

impl SubjectRecord {
    pub fn historical(x: Vec<f64>, arm: Arm, marker: Vec<f64>, time: f64, status: usize) -> Self {
        SubjectRecord { x, arm, trial: Trial::Historical, marker, outcome: Some(Outcome { time, status }) }
    }

    pub fn bridging(x: Vec<f64>, arm: Arm, marker: Vec<f64>) -> Self {
        SubjectRecord { x, arm, trial: Trial::Bridging, marker, outcome: None }
    }

    pub fn is_historical_approved(&self) -> bool {
        self.trial == Trial::Historical && self.arm == Arm::Approved
    }
}

/// Validated, immutable collection of records from both studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedDataset {
    records: Vec<SubjectRecord>,
    n_hist: usize,
    n_bridge: usize,
    dim: usize,
    causes: usize,
    horizon: f64,
}

impl FusedDataset {
    pub fn new(records: Vec<SubjectRecord>, causes: usize, horizon: f64) -> Result<Self, DataError> {
        let first = records
            .first()
            .ok_or_else(|| DataError::EmptyArm("dataset has no records".into()))?;
        let dim = first.x.len();
        let marker_len = first.marker.len();
        if causes == 0 {
            return Err(DataError::InvalidRecord { index: 0, reason: "at least one cause is required".into() });
        }
        let mut counts: HashMap<(Trial, Arm), usize> = HashMap::new();
        let mut max_time = f64::NEG_INFINITY;
        for (index, r) in records.iter().enumerate() {
            let bad = |reason: &str| DataError::InvalidRecord { index, reason: reason.to_string() };
            if r.x.len() != dim {
                return Err(bad("covariate length differs from the first record"));
            }
            if r.marker.len() != marker_len || marker_len == 0 {
                return Err(bad("marker length differs from the first record"));
            }
            if r.x.iter().chain(&r.marker).any(|v| !v.is_finite()) {
                return Err(bad("non-finite covariate or marker"));
            }
            if !r.arm.allowed_in(r.trial) {
                return Err(DataError::BadArmCode { row: index, code: r.arm.code().into(), trial: r.trial });
            }
            match (r.trial, r.outcome) {
                (Trial::Historical, Some(o)) => {
                    if !(o.time > 0.0) || !o.time.is_finite() {
                        return Err(DataError::NonPositiveTime { row: index });
                    }
                    if o.status > causes {
                        return Err(DataError::BadEventCode { row: index, code: o.status as i64, causes });
                    }
                    max_time = max_time.max(o.time);
                }
                (Trial::Historical, None) => return Err(bad("historical record without outcome")),
                (Trial::Bridging, Some(_)) => return Err(bad("bridging record with outcome")),
                (Trial::Bridging, None) => {}
            }
            *counts.entry((r.trial, r.arm)).or_default() += 1;
        }
        for (&(trial, arm), &n) in &counts {
            if n < 2 {
                return Err(DataError::EmptyArm(format!("{trial} arm {arm} has {n} row(s); at least 2 are required")));
            }
        }
        if !counts.contains_key(&(Trial::Historical, Arm::Approved)) {
            return Err(DataError::EmptyArm("historical approved arm is empty".into()));
        }
        let n_hist = records.iter().filter(|r| r.trial == Trial::Historical).count();
        let n_bridge = records.len() - n_hist;
        if n_bridge == 0 {
            return Err(DataError::EmptyArm("bridging study is empty".into()));
        }
        if !(horizon > 0.0) || horizon > max_time {
            return Err(DataError::HorizonExceedsData { horizon, max_time });
        }
        Ok(FusedDataset { records, n_hist, n_bridge, dim, causes, horizon })
    }

    pub fn records(&self) -> &[SubjectRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_hist(&self) -> usize {
        self.n_hist
    }

    pub fn n_bridge(&self) -> usize {
        self.n_bridge
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn marker_len(&self) -> usize {
        self.records[0].marker.len()
    }

    pub fn causes(&self) -> usize {
        self.causes
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Fraction of rows in the bridging study.
    pub fn kappa(&self) -> f64 {
        self.n_bridge as f64 / self.records.len() as f64
    }

    pub fn count(&self, trial: Trial, arm: Arm) -> usize {
        self.records.iter().filter(|r| r.trial == trial && r.arm == arm).count()
    }

    pub fn indices(&self, trial: Trial, arm: Option<Arm>) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.trial == trial && arm.is_none_or(|a| r.arm == a))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn historical(&self) -> impl Iterator<Item = &SubjectRecord> {
        self.records.iter().filter(|r| r.trial == Trial::Historical)
    }

    pub fn bridging(&self) -> impl Iterator<Item = &SubjectRecord> {
        self.records.iter().filter(|r| r.trial == Trial::Bridging)
    }

    /// Largest observed time in the historical study.
    pub fn max_time(&self) -> f64 {
        self.historical().filter_map(|r| r.outcome).map(|o| o.time).fold(0.0, f64::max)
    }

    /// Subset by row index, re-validated (used by resampling and trimming).
    pub fn subset(&self, rows: &[usize]) -> Result<FusedDataset, DataError> {
        let records = rows.iter().map(|&i| self.records[i].clone()).collect();
        FusedDataset::new(records, self.causes, self.horizon)
    }

    pub fn with_horizon(&self, horizon: f64) -> Result<FusedDataset, DataError> {
        FusedDataset::new(self.records.clone(), self.causes, horizon)
    }
}

/// Column names used when reading and writing CSV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub covariates: Vec<String>,
    pub arm: String,
    pub markers: Vec<String>,
    pub time: String,
    pub event: String,
}

impl ColumnSchema {
    pub fn standard(dim: usize, marker_len: usize) -> Self {
        let markers = if marker_len == 1 {
            vec!["s".to_string()]
        } else {
            (1..=marker_len).map(|j| format!("s{j}")).collect()
        };
        ColumnSchema {
            covariates: (1..=dim).map(|i| format!("x{i}")).collect(),
            arm: "arm".into(),
            markers,
            time: "time".into(),
            event: "event".into(),
        }
    }
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize, DataError> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| DataError::MissingColumn(name.to_string()))
}

fn parse_number(rec: &csv::StringRecord, idx: usize, row: usize, column: &str) -> Result<f64, DataError> {
    rec.get(idx)
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .and_then(|v| v.parse::<f64>().ok())
        .filter(|v| v.is_finite())
        .ok_or_else(|| DataError::MissingValue { row, column: column.to_string() })
}

/// Which arm codes a file may contain and whether rows carry outcomes.
#[derive(Debug, Clone, Copy)]
enum FileKind {
    Study(Trial),
    TwoArm,
}

impl FileKind {
    fn arm_ok(self, arm: Arm) -> bool {
        match self {
            FileKind::Study(t) => arm.allowed_in(t),
            FileKind::TwoArm => arm != Arm::Placebo,
        }
    }

    fn has_outcomes(self) -> bool {
        !matches!(self, FileKind::Study(Trial::Bridging))
    }

    fn bad_arm(self, row: usize, code: String) -> DataError {
        match self {
            FileKind::Study(trial) => DataError::BadArmCode { row, code, trial },
            FileKind::TwoArm => DataError::TwoArmCode { row, code },
        }
    }
}

fn read_rows(path: &Path, schema: &ColumnSchema, kind: FileKind, causes: usize) -> Result<Vec<SubjectRecord>, DataError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let cov_idx = schema
        .covariates
        .iter()
        .map(|c| column_index(&headers, c))
        .collect::<Result<Vec<_>, _>>()?;
    let marker_idx = schema
        .markers
        .iter()
        .map(|c| column_index(&headers, c))
        .collect::<Result<Vec<_>, _>>()?;
    let arm_idx = column_index(&headers, &schema.arm)?;
    let outcome_idx = if kind.has_outcomes() {
        Some((column_index(&headers, &schema.time)?, column_index(&headers, &schema.event)?))
    } else {
        None
    };
    let trial = match kind {
        FileKind::Study(t) => t,
        FileKind::TwoArm => Trial::Historical,
    };

    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let code = rec.get(arm_idx).unwrap_or("").trim().to_string();
        let arm = match Arm::from_code(&code).filter(|&a| kind.arm_ok(a)) {
            Some(a) => a,
            None => return Err(kind.bad_arm(row, code)),
        };
        let x = cov_idx
            .iter()
            .zip(&schema.covariates)
            .map(|(&j, name)| parse_number(&rec, j, row, name))
            .collect::<Result<Vec<_>, _>>()?;
        let marker = marker_idx
            .iter()
            .zip(&schema.markers)
            .map(|(&j, name)| parse_number(&rec, j, row, name))
            .collect::<Result<Vec<_>, _>>()?;
        let outcome = match outcome_idx {
            Some((ti, ei)) => {
                let time = parse_number(&rec, ti, row, &schema.time)?;
                if time <= 0.0 {
                    return Err(DataError::NonPositiveTime { row });
                }
                let raw = parse_number(&rec, ei, row, &schema.event)?;
                if raw.fract() != 0.0 || raw < 0.0 || raw > causes as f64 {
                    return Err(DataError::BadEventCode { row, code: raw as i64, causes });
                }
                Some(Outcome { time, status: raw as usize })
            }
            None => None,
        };
        out.push(SubjectRecord { x, arm, trial, marker, outcome });
    }
    Ok(out)
}

/// Read one study file. Row numbers in errors are 1-based data rows.
pub fn read_study_csv(
    path: &Path,
    schema: &ColumnSchema,
    trial: Trial,
    causes: usize,
) -> Result<Vec<SubjectRecord>, DataError> {
    read_rows(path, schema, FileKind::Study(trial), causes)
}

pub fn load_fused_csv(
    path_hist: &Path,
    path_bridge: &Path,
    schema: &ColumnSchema,
    causes: usize,
    horizon: f64,
) -> Result<FusedDataset, DataError> {
    let mut records = read_study_csv(path_hist, schema, Trial::Historical, causes)?;
    records.extend(read_study_csv(path_bridge, schema, Trial::Bridging, causes)?);
    FusedDataset::new(records, causes, horizon)
}

/// Write one study's rows. Floats use the shortest round-trip representation.
pub fn write_study_csv(
    path: &Path,
    ds: &FusedDataset,
    schema: &ColumnSchema,
    trial: Trial,
) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = schema.covariates.iter().map(String::as_str).collect();
    header.push(&schema.arm);
    header.extend(schema.markers.iter().map(String::as_str));
    if trial == Trial::Historical {
        header.push(&schema.time);
        header.push(&schema.event);
    }
    w.write_record(&header)?;
    for r in ds.records().iter().filter(|r| r.trial == trial) {
        let mut fields: Vec<String> = r.x.iter().map(|v| v.to_string()).collect();
        fields.push(r.arm.code().to_string());
        fields.extend(r.marker.iter().map(|v| v.to_string()));
        if let Some(o) = r.outcome {
            fields.push(o.time.to_string());
            fields.push(o.status.to_string());
        }
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_fused_csv(
    ds: &FusedDataset,
    path_hist: &Path,
    path_bridge: &Path,
    schema: &ColumnSchema,
) -> Result<(), DataError> {
    write_study_csv(path_hist, ds, schema, Trial::Historical)?;
    write_study_csv(path_bridge, ds, schema, Trial::Bridging)
}

/// One randomized trial in which both the approved and the investigational
/// arm have markers and outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoArmTrial {
    records: Vec<SubjectRecord>,
    causes: usize,
    horizon: f64,
}

impl TwoArmTrial {
    pub fn new(records: Vec<SubjectRecord>, causes: usize, horizon: f64) -> Result<Self, DataError> {
        let dim = records.first().map_or(0, |r| r.x.len());
        let marker_len = records.first().map_or(0, |r| r.marker.len());
        let mut max_time: f64 = 0.0;
        for (index, r) in records.iter().enumerate() {
            let bad = |reason: &str| DataError::InvalidRecord { index, reason: reason.to_string() };
            if r.x.len() != dim || r.marker.len() != marker_len {
                return Err(bad("covariate or marker length differs from the first row"));
            }
            if r.arm == Arm::Placebo {
                return Err(bad("placebo rows are not part of a two-arm comparison"));
            }
            let o = r.outcome.ok_or_else(|| bad("missing outcome"))?;
            if !(o.time > 0.0) || o.status > causes {
                return Err(bad("invalid outcome"));
            }
            max_time = max_time.max(o.time);
        }
        for arm in [Arm::Approved, Arm::Investigational] {
            if records.iter().filter(|r| r.arm == arm).count() < 2 {
                return Err(DataError::EmptyArm(format!("arm {arm} needs at least 2 rows")));
            }
        }
        if !(horizon > 0.0) || horizon > max_time {
            return Err(DataError::HorizonExceedsData { horizon, max_time });
        }
        let records = records.into_iter().map(|r| SubjectRecord { trial: Trial::Historical, ..r }).collect();
        Ok(TwoArmTrial { records, causes, horizon })
    }

    pub fn records(&self) -> &[SubjectRecord] {
        &self.records
    }

    pub fn causes(&self) -> usize {
        self.causes
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn arm(&self, arm: Arm) -> impl Iterator<Item = &SubjectRecord> {
        self.records.iter().filter(move |r| r.arm == arm)
    }

    /// Approved-arm rows keep their outcomes as a historical trial; the
    /// investigational arm becomes a marker-only bridging study.
    pub fn to_fused(&self, horizon: f64) -> Result<FusedDataset, DataError> {
        let records = self
            .records
            .iter()
            .map(|r| match r.arm {
                Arm::Approved => r.clone(),
                _ => SubjectRecord::bridging(r.x.clone(), r.arm, r.marker.clone()),
            })
            .collect();
        FusedDataset::new(records, self.causes, horizon)
    }
}

pub fn read_two_arm_csv(path: &Path, schema: &ColumnSchema, causes: usize, horizon: f64) -> Result<TwoArmTrial, DataError> {
    TwoArmTrial::new(read_rows(path, schema, FileKind::TwoArm, causes)?, causes, horizon)
}

pub fn write_two_arm_csv(path: &Path, trial: &TwoArmTrial, schema: &ColumnSchema) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = schema.covariates.iter().map(String::as_str).collect();
    header.push(&schema.arm);
    header.extend(schema.markers.iter().map(String::as_str));
    header.push(&schema.time);
    header.push(&schema.event);
    w.write_record(&header)?;
    for r in trial.records() {
        let o = r.outcome.expect("two-arm rows carry outcomes");
        let mut fields: Vec<String> = r.x.iter().map(|v| v.to_string()).collect();
        fields.push(r.arm.code().to_string());
        fields.extend(r.marker.iter().map(|v| v.to_string()));
        fields.push(o.time.to_string());
        fields.push(o.status.to_string());
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateOverlap {
    pub hist_min: f64,
    pub hist_max: f64,
    pub bridge_min: f64,
    pub bridge_max: f64,
    /// Share of bridging rows outside the historical range on this coordinate.
    pub outside_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapDiagnostic {
    pub coordinates: Vec<CoordinateOverlap>,
    /// Bridging rows outside the historical box on at least one coordinate.
    pub rows_outside_box: usize,
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

pub fn overlap_report(ds: &FusedDataset) -> OverlapDiagnostic {
    let n_b = ds.n_bridge() as f64;
    let coordinates = (0..ds.dim())
        .map(|j| {
            let (hist_min, hist_max) = range(ds.historical().map(|r| r.x[j]));
            let (bridge_min, bridge_max) = range(ds.bridging().map(|r| r.x[j]));
            let outside = ds.bridging().filter(|r| r.x[j] < hist_min || r.x[j] > hist_max).count();
            CoordinateOverlap { hist_min, hist_max, bridge_min, bridge_max, outside_fraction: outside as f64 / n_b }
        })
        .collect::<Vec<_>>();
    let rows_outside_box = ds
        .bridging()
        .filter(|r| outside_box(r, &coordinates))
        .count();
    OverlapDiagnostic { coordinates, rows_outside_box }
}

fn outside_box(r: &SubjectRecord, coords: &[CoordinateOverlap]) -> bool {
    r.x.iter().zip(coords).any(|(v, c)| *v < c.hist_min || *v > c.hist_max)
}

/// Drop bridging rows outside the historical covariate box. Returns the
/// trimmed dataset and the number of dropped rows.
pub fn trim_to_overlap(ds: &FusedDataset) -> Result<(FusedDataset, usize), DataError> {
    let report = overlap_report(ds);
    let keep: Vec<usize> = ds
        .records()
        .iter()
        .enumerate()
        .filter(|(_, r)| r.trial == Trial::Historical || !outside_box(r, &report.coordinates))
        .map(|(i, _)| i)
        .collect();
    let dropped = ds.len() - keep.len();
    if keep.len() == ds.n_hist() {
        return Err(DataError::AllBridgingDropped);
    }
    if dropped == 0 {
        return Ok((ds.clone(), 0));
    }
    Ok((ds.subset(&keep)?, dropped))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> FusedDataset {
        let recs = vec![
            SubjectRecord::historical(vec![0.0], Arm::Approved, vec![1.0], 1.0, 1),
            SubjectRecord::historical(vec![1.0], Arm::Approved, vec![2.0], 2.0, 0),
            SubjectRecord::bridging(vec![0.5], Arm::Investigational, vec![1.5]),
            SubjectRecord::bridging(vec![0.2], Arm::Investigational, vec![1.1]),
        ];
        FusedDataset::new(recs, 1, 2.0).unwrap()
    }

    #[test]
    fn kappa_and_counts() {
        let ds = small();
        assert_eq!(ds.n_hist(), 2);
        assert_eq!(ds.n_bridge(), 2);
        assert_eq!(ds.kappa(), 0.5);
        assert_eq!(ds.indices(Trial::Bridging, Some(Arm::Investigational)), vec![2, 3]);
    }

    #[test]
    fn singleton_arm_rejected() {
        let recs = vec![
            SubjectRecord::historical(vec![0.0], Arm::Approved, vec![1.0], 1.0, 1),
            SubjectRecord::historical(vec![0.0], Arm::Approved, vec![1.0], 1.0, 1),
            SubjectRecord::bridging(vec![0.5], Arm::Investigational, vec![1.5]),
        ];
        assert!(matches!(FusedDataset::new(recs, 1, 1.0), Err(DataError::EmptyArm(_))));
    }

    #[test]
    fn placement_rule() {
        assert!(!Arm::Investigational.allowed_in(Trial::Historical));
        assert!(!Arm::Placebo.allowed_in(Trial::Bridging));
        assert!(Arm::Approved.allowed_in(Trial::Bridging));
    }
}
