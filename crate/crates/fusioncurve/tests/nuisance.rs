use fusioncurve::dataset::{Arm, FusedDataset, SubjectRecord, Trial};
use fusioncurve::nuisance::features::all_covariates;
use fusioncurve::nuisance::{
    fit_binary, fit_conditional_density, fit_survival, make_folds, BinaryTarget, SurvivalKind,
};
use fusioncurve::simlab::{correct_spec, generate, DgpConfig};

fn big() -> FusedDataset {
    generate(&DgpConfig { c: 0.0, n_h: 20_000, n_b: 20_000, seed: 99, causes: 1 })
}

fn close(got: &[f64], want: &[f64], tol: f64) {
    assert_eq!(got.len(), want.len());
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert!((g - w).abs() < tol, "coefficient {i}: {g} vs {w}");
    }
}

#[test]
fn hazard_fits_recover_generating_coefficients() {
    let ds = big();
    let hist: Vec<&SubjectRecord> = ds.historical().collect();
    let spec = correct_spec();
    let ev = fit_survival(SurvivalKind::Event(1), &spec.event, &hist).unwrap();
    close(&ev.coefficients, &[0.5, -0.5, 0.39, 0.12, 0.2, 0.6, -1.2], 0.06);
    let cens = fit_survival(SurvivalKind::Censoring, &spec.censoring, &hist).unwrap();
    close(&cens.coefficients, &[-0.4, 0.1], 0.06);
    // Baseline rate 0.1 shows up as the Breslow slope in early follow-up.
    assert!((ev.baseline(1.0) - 0.1).abs() < 0.015, "{}", ev.baseline(1.0));
}

#[test]
fn marker_laws_recover_generating_means() {
    let ds = big();
    let rows: Vec<&SubjectRecord> = ds.records().iter().collect();
    let xs = all_covariates(6);
    let hist = fit_conditional_density(Arm::Approved, Trial::Historical, &xs, &rows).unwrap();
    close(&hist.coefficients[0], &[2.0, 0.5, 0.0, 1.5, -0.5, 1.5, -1.0], 0.05);
    let inv = fit_conditional_density(Arm::Investigational, Trial::Bridging, &xs, &rows).unwrap();
    close(&inv.coefficients[0], &[4.0, 1.5, 1.0, 0.0, 1.0, 0.0, -0.5], 0.05);
    assert!((inv.sigma[0] - 1.0).abs() < 0.03);
}

#[test]
fn propensities_are_flat_in_covariates() {
    let ds = big();
    let rows: Vec<&SubjectRecord> = ds.records().iter().collect();
    let xs = all_covariates(6);
    let trial = fit_binary(BinaryTarget::GammaGivenX, &xs, &rows, 0.0).unwrap();
    assert!(trial.coefficients[0].abs() < 0.05);
    close(&trial.coefficients[1..], &[0.0; 6], 0.06);
    let arm = fit_binary(BinaryTarget::ArmGivenXBridging, &xs, &rows, 0.0).unwrap();
    close(&arm.coefficients, &[0.0; 7], 0.06);
    let approved = fit_binary(BinaryTarget::ArmAndGamma0GivenX, &xs, &rows, 0.0).unwrap();
    assert!((approved.predict(&[0.0; 6]) - 0.25).abs() < 0.02);
}

#[test]
fn folds_are_balanced_within_cells_and_seeded() {
    let ds = generate(&DgpConfig { c: 0.0, n_h: 1003, n_b: 251, seed: 4, causes: 1 });
    let k = 5;
    let folds = make_folds(&ds, k, 11).unwrap();
    assert_eq!(folds, make_folds(&ds, k, 11).unwrap());
    assert_ne!(folds, make_folds(&ds, k, 12).unwrap());
    for (trial, arm) in [
        (Trial::Historical, Arm::Placebo),
        (Trial::Historical, Arm::Approved),
        (Trial::Bridging, Arm::Approved),
        (Trial::Bridging, Arm::Investigational),
    ] {
        let mut sizes = vec![0usize; k];
        for i in ds.indices(trial, Some(arm)) {
            sizes[folds[i]] += 1;
        }
        let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        assert!(hi - lo <= 1, "{trial} {arm}: {sizes:?}");
    }
    assert!(make_folds(&ds, 1, 1).is_err());
}
