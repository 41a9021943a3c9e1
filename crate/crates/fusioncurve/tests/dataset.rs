use std::fs;
use std::path::Path;

use fusioncurve::dataset::{
    load_fused_csv, read_study_csv, read_two_arm_csv, trim_to_overlap, write_fused_csv, write_two_arm_csv, Arm,
    ColumnSchema, DataError, Trial,
};
use fusioncurve::simlab::{generate, generate_two_arm, DgpConfig, TwoArmDgp};

fn schema() -> ColumnSchema {
    ColumnSchema::standard(6, 1)
}

#[test]
fn fused_csv_round_trip_is_exact() {
    let ds = generate(&DgpConfig { c: 0.1, n_h: 200, n_b: 50, seed: 1, causes: 2 });
    let dir = tempfile::tempdir().unwrap();
    let (h, b) = (dir.path().join("h.csv"), dir.path().join("b.csv"));
    write_fused_csv(&ds, &h, &b, &schema()).unwrap();
    let back = load_fused_csv(&h, &b, &schema(), 2, ds.horizon()).unwrap();
    assert_eq!(back, ds);
}

#[test]
fn two_arm_csv_round_trip_is_exact() {
    let trial = generate_two_arm(&TwoArmDgp { n: 200, ..TwoArmDgp::default() });
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.csv");
    write_two_arm_csv(&p, &trial, &schema()).unwrap();
    let back = read_two_arm_csv(&p, &schema(), 1, trial.horizon()).unwrap();
    assert_eq!(back, trial);
    let fused = trial.to_fused(2.0).unwrap();
    assert_eq!(fused.count(Trial::Historical, Arm::Approved), trial.arm(Arm::Approved).count());
    assert_eq!(fused.n_bridge(), trial.arm(Arm::Investigational).count());
    assert!(fused.bridging().all(|r| r.outcome.is_none() && r.arm == Arm::Investigational));
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn one_covariate() -> ColumnSchema {
    ColumnSchema::standard(1, 1)
}

#[test]
fn malformed_rows_are_reported_with_row_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cases: Vec<(&str, Trial, fn(&DataError) -> bool)> = vec![
        ("x1,arm,s,time\n0,1,1,1\n", Trial::Historical, |e| matches!(e, DataError::MissingColumn(c) if c == "event")),
        ("x1,arm,s,time,event\n0,1,1,1,1\n0,1p,1,1,0\n", Trial::Historical, |e| {
            matches!(e, DataError::BadArmCode { row: 2, .. })
        }),
        ("x1,arm,s\n0,0,1\n", Trial::Bridging, |e| matches!(e, DataError::BadArmCode { row: 1, .. })),
        ("x1,arm,s,time,event\n0,1,1,0,1\n", Trial::Historical, |e| matches!(e, DataError::NonPositiveTime { row: 1 })),
        ("x1,arm,s,time,event\n0,1,1,1,3\n", Trial::Historical, |e| matches!(e, DataError::BadEventCode { code: 3, .. })),
        ("x1,arm,s,time,event\n0,1,,1,1\n", Trial::Historical, |e| {
            matches!(e, DataError::MissingValue { row: 1, column } if column == "s")
        }),
    ];
    for (i, (text, trial, check)) in cases.into_iter().enumerate() {
        let p = write(d, &format!("c{i}.csv"), text);
        let err = read_study_csv(&p, &one_covariate(), trial, 1).unwrap_err();
        assert!(check(&err), "case {i}: {err}");
    }
}

#[test]
fn two_arm_file_rejects_placebo() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "t.csv", "x1,arm,s,time,event\n0,1,1,1,1\n0,0,1,1,0\n");
    let err = read_two_arm_csv(&p, &one_covariate(), 1, 1.0).unwrap_err();
    assert!(matches!(err, DataError::TwoArmCode { row: 2, .. }), "{err}");
}

#[test]
fn horizon_past_the_data_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let h = write(dir.path(), "h.csv", "x1,arm,s,time,event\n0,1,1,1,1\n1,1,2,2,0\n0,0,1,1.5,1\n1,0,0,0.5,0\n");
    let b = write(dir.path(), "b.csv", "x1,arm,s\n0,1p,1\n1,1p,2\n");
    assert!(load_fused_csv(&h, &b, &one_covariate(), 1, 2.0).is_ok());
    let err = load_fused_csv(&h, &b, &one_covariate(), 1, 3.0).unwrap_err();
    assert!(matches!(err, DataError::HorizonExceedsData { .. }), "{err}");
}

#[test]
fn overlap_trimming_drops_only_outlying_bridging_rows() {
    let dir = tempfile::tempdir().unwrap();
    let h = write(dir.path(), "h.csv", "x1,arm,s,time,event\n0,1,1,1,1\n1,1,2,2,0\n0,0,1,1.5,1\n1,0,0,0.5,0\n");
    let b = write(dir.path(), "b.csv", "x1,arm,s\n0.5,1p,1\n0.2,1p,2\n5,1p,2\n");
    let ds = load_fused_csv(&h, &b, &one_covariate(), 1, 2.0).unwrap();
    let (trimmed, dropped) = trim_to_overlap(&ds).unwrap();
    assert_eq!(dropped, 1);
    assert_eq!(trimmed.n_bridge(), 2);
    assert_eq!(trimmed.n_hist(), 4);
}
