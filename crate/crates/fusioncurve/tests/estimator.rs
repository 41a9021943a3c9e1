use fusioncurve::dataset::{Arm, FusedDataset, Trial};
use fusioncurve::eif::{eif_censored_row, plugin_mediation};
use fusioncurve::estimator::{
    estimate_curve, estimate_curve_with_model, ncde_test, relative_ve, uniform_band, EstimatorConfig, EstimatorError,
    NcdeConfig, RelVeStatus, SensitivitySpec,
};
use fusioncurve::nuisance::Truncation;
use fusioncurve::quadrature::MarkerRule;
use fusioncurve::simlab::{
    correct_spec, generate, generate_two_arm, oracle_truth, DgpConfig, OracleNuisance, TwoArmDgp,
};

fn dgp(seed: u64) -> DgpConfig {
    DgpConfig { c: 0.05, n_h: 800, n_b: 200, seed, causes: 1 }
}

fn config() -> EstimatorConfig {
    EstimatorConfig { spec: Some(correct_spec()), ..EstimatorConfig::default() }
}

fn sd(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

#[test]
fn estimate_and_se_come_from_the_influence_columns() {
    let ds = generate(&dgp(1));
    let (curve, eif) = estimate_curve(&ds, &config()).unwrap();
    assert_eq!(eif.n, ds.len());
    assert_eq!(curve.points.len(), eif.columns.len());
    for (c, p) in curve.points.iter().enumerate() {
        let col = eif.column(c);
        let m = col.iter().sum::<f64>() / col.len() as f64;
        assert!((p.estimate - m).abs() < 1e-12);
        assert!((p.se - sd(col) / (col.len() as f64).sqrt()).abs() < 1e-12);
        assert!((p.ci_hi - p.ci_lo - 2.0 * 1.959963984540054 * p.se).abs() < 1e-9);
    }
}

#[test]
fn default_grid_is_deciles_within_horizon() {
    let ds = generate(&dgp(2));
    let (curve, _) = estimate_curve(&ds, &EstimatorConfig { multipliers: 0, ..config() }).unwrap();
    assert!(curve.grid.len() >= 2 && curve.grid.len() <= 10);
    assert!(curve.grid.windows(2).all(|w| w[0] < w[1]));
    assert!(*curve.grid.last().unwrap() <= ds.horizon());
}

#[test]
fn same_seed_same_output_across_thread_counts() {
    let ds = generate(&dgp(3));
    let cfg = EstimatorConfig { grid: vec![1.0, 3.0, 5.0], ..config() };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| estimate_curve(&ds, &cfg).unwrap())
    };
    let (a, ea) = run(1);
    let (b, eb) = run(4);
    assert_eq!(a, b);
    assert_eq!(ea.values, eb.values);
    let (c, _) = estimate_curve(&ds, &EstimatorConfig { seed: 2, ..cfg.clone() }).unwrap();
    assert_ne!(a.points[0].estimate, c.points[0].estimate);
}

#[test]
fn identity_sensitivity_is_bitwise_neutral() {
    let ds = generate(&dgp(4));
    let base = EstimatorConfig { grid: vec![2.0, 4.0], ..config() };
    let (a, ea) = estimate_curve(&ds, &base).unwrap();
    let spec = SensitivitySpec { rho: 1.0, h_offset: 0.0, arms: vec![Arm::Approved, Arm::Investigational] };
    let (b, eb) = estimate_curve(&ds, &EstimatorConfig { sensitivity: spec.clone(), ..base }).unwrap();
    assert_eq!(ea.values, eb.values);
    for (p, q) in a.points.iter().zip(&b.points) {
        assert_eq!(p.estimate.to_bits(), q.estimate.to_bits());
        assert_eq!(p.se.to_bits(), q.se.to_bits());
        assert_eq!(p.band_lo.to_bits(), q.band_lo.to_bits());
    }
}

#[test]
fn scale_only_sensitivity_scales_estimate_and_se() {
    let ds = generate(&dgp(5));
    let base = EstimatorConfig { grid: vec![2.0, 4.0], arms: vec![Arm::Approved, Arm::Investigational], multipliers: 0, ..config() };
    let (a, _) = estimate_curve(&ds, &base).unwrap();
    let sens = SensitivitySpec { rho: 0.8, ..SensitivitySpec::default() };
    let (b, _) = estimate_curve(&ds, &EstimatorConfig { sensitivity: sens, ..base }).unwrap();
    for (p, q) in a.points.iter().zip(&b.points) {
        if p.arm == Arm::Investigational {
            assert!((q.estimate - 0.8 * p.estimate).abs() < 1e-10);
            assert!((q.se - 0.8 * p.se).abs() < 1e-10);
            assert_eq!(q.unadjusted, p.estimate);
        } else {
            assert_eq!(q.estimate, p.estimate);
        }
    }
}

#[test]
fn sensitivity_above_one_is_clamped_with_warning() {
    let ds = generate(&dgp(6));
    let sens = SensitivitySpec { rho: 4.0, ..SensitivitySpec::default() };
    let cfg = EstimatorConfig { grid: vec![5.0], multipliers: 0, sensitivity: sens, ..config() };
    let (curve, _) = estimate_curve(&ds, &cfg).unwrap();
    assert_eq!(curve.points[0].estimate, 1.0);
    assert!(curve.warnings.iter().any(|w| w.contains("clamped")));
}

#[test]
fn band_contains_pointwise_interval_and_monotone_is_ordered() {
    let ds = generate(&dgp(7));
    let (curve, _) = estimate_curve(&ds, &config()).unwrap();
    assert_eq!(curve.metadata.band_quantiles.len(), 1);
    let mut prev = f64::NEG_INFINITY;
    for p in &curve.points {
        assert!(p.band_lo <= p.ci_lo && p.band_hi >= p.ci_hi);
        let m = &p.monotone;
        assert!(m.estimate >= prev);
        prev = m.estimate;
        for v in [m.estimate, m.ci_lo, m.ci_hi, m.band_lo, m.band_hi] {
            assert!((0.0..=1.0).contains(&v));
        }
    }
}

#[test]
fn single_time_band_reduces_to_normal_quantile() {
    let ds = generate(&dgp(8));
    let cfg = EstimatorConfig { grid: vec![3.0], multipliers: 0, ..config() };
    let (_, eif) = estimate_curve(&ds, &cfg).unwrap();
    let bands = uniform_band(&eif, 0.95, 2000, 8).unwrap();
    let q = bands[0].quantile;
    assert!((q / 1.959963984540054 - 1.0).abs() < 0.02, "q = {q}");
}

#[test]
fn band_needs_enough_draws() {
    let ds = generate(&dgp(9));
    let cfg = EstimatorConfig { grid: vec![3.0], multipliers: 0, ..config() };
    let (_, eif) = estimate_curve(&ds, &cfg).unwrap();
    assert!(matches!(uniform_band(&eif, 0.95, 100, 1), Err(EstimatorError::BadSetting(_))));
    assert!(EstimatorConfig { multipliers: 50, ..config() }.validate().is_err());
}

#[test]
fn grid_beyond_horizon_is_rejected() {
    let ds = generate(&dgp(10));
    let cfg = EstimatorConfig { grid: vec![1.0, ds.horizon() + 0.5], ..config() };
    assert!(matches!(estimate_curve(&ds, &cfg), Err(EstimatorError::GridBeyondHorizon { .. })));
    let cfg = EstimatorConfig { grid: vec![-1.0], ..config() };
    assert!(matches!(estimate_curve(&ds, &cfg), Err(EstimatorError::BadGridTime(_))));
}

#[test]
fn placebo_target_is_rejected() {
    let ds = generate(&dgp(11));
    let cfg = EstimatorConfig { arms: vec![Arm::Placebo], ..config() };
    assert!(estimate_curve(&ds, &cfg).is_err());
}

fn oracle_fit(seed: u64) -> (FusedDataset, OracleNuisance, EstimatorConfig) {
    let d = DgpConfig { c: 0.0, n_h: 2000, n_b: 500, seed, causes: 1 };
    let ds = generate(&d);
    let cfg = EstimatorConfig { grid: vec![5.0], multipliers: 0, truncation: Truncation::none(), ..config() };
    (ds, OracleNuisance::new(&d), cfg)
}

#[test]
fn one_step_is_plugin_plus_mean_correction() {
    let (ds, model, cfg) = oracle_fit(21);
    let (curve, _) = estimate_curve_with_model(&ds, &cfg, &model).unwrap();
    let rule = MarkerRule::hermite(cfg.hermite_nodes);
    let plugin = plugin_mediation(&model, &ds, Arm::Investigational, 5.0, 1, &rule).unwrap();
    let correction: f64 = ds
        .records()
        .iter()
        .map(|r| {
            let t = eif_censored_row(&model, r, Arm::Investigational, 5.0, &cfg.truncation, &rule).unwrap();
            t.augmentation + t.residual
        })
        .sum::<f64>()
        / ds.len() as f64;
    let p = &curve.points[0];
    assert!((p.estimate - (plugin.value + correction)).abs() < 1e-10);
    assert!((p.estimate - plugin.value).abs() < 3.0 * p.se);
}

#[test]
fn influence_function_is_centered_at_the_truth() {
    let truth = oracle_truth(0.0, 1, Arm::Investigational, 5.0, 1, 400_000, 5).value;
    for seed in [31, 32, 33] {
        let (ds, model, cfg) = oracle_fit(seed);
        let (curve, eif) = estimate_curve_with_model(&ds, &cfg, &model).unwrap();
        // Canonical gradient at the truth: phi - R_hat + gamma/kappa (R_hat - R).
        let r_hat = curve.points[0].estimate;
        let kappa = ds.kappa();
        let centered: Vec<f64> = eif
            .column(0)
            .iter()
            .zip(ds.records())
            .map(|(v, r)| {
                let g = if r.trial == Trial::Bridging { 1.0 / kappa } else { 0.0 };
                v - r_hat + g * (r_hat - truth)
            })
            .collect();
        let m = centered.iter().sum::<f64>() / centered.len() as f64;
        let se = sd(&centered) / (centered.len() as f64).sqrt();
        assert!(m.abs() < 3.0 * se, "seed {seed}: mean {m}, se {se}");
    }
}

#[test]
fn relative_efficacy_sign_follows_the_risks() {
    let ds = generate(&dgp(41));
    let cfg = EstimatorConfig {
        grid: vec![1.0, 3.0, 5.0],
        arms: vec![Arm::Approved, Arm::Investigational],
        multipliers: 0,
        ..config()
    };
    let (_, eif) = estimate_curve(&ds, &cfg).unwrap();
    let rv = relative_ve(&eif.arm_curve(Arm::Approved, 1), &eif.arm_curve(Arm::Investigational, 1), 0.95).unwrap();
    assert_eq!(rv.points.len(), 3);
    for p in &rv.points {
        let v = p.relve.unwrap();
        assert!((v - (1.0 - p.risk_investigational / p.risk_approved)).abs() < 1e-12);
        assert_eq!(v > 0.0, p.risk_approved > p.risk_investigational);
        if p.status == RelVeStatus::Ok {
            assert!(p.ci_lo.unwrap() <= v && v <= p.ci_hi.unwrap() && p.ci_hi.unwrap() <= 1.0);
        }
    }
}

#[test]
fn ncde_rejects_bad_horizons_and_thin_data() {
    let trial = generate_two_arm(&TwoArmDgp { n: 400, ..TwoArmDgp::default() });
    let cfg = NcdeConfig { t_star: trial.horizon() + 1.0, replicates: 200, ..NcdeConfig::default() };
    assert!(matches!(ncde_test(&trial, &cfg), Err(EstimatorError::GridBeyondHorizon { .. })));
    let cfg = NcdeConfig { t_star: 0.01, replicates: 200, ..NcdeConfig::default() };
    assert!(matches!(ncde_test(&trial, &cfg), Err(EstimatorError::InsufficientEvents { .. })));
    let cfg = NcdeConfig { t_star: 2.0, replicates: 50, ..NcdeConfig::default() };
    assert!(matches!(ncde_test(&trial, &cfg), Err(EstimatorError::BadSetting(_))));
}
