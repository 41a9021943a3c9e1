use fusioncurve::dataset::{Arm, Trial};
use fusioncurve::nuisance::NuisanceModel;
use fusioncurve::simlab::{
    bridging_marker_mean, censoring_rate, conditional_incidence, draw_covariates, event_rates, generate,
    generate_two_arm, oracle_truth, run_study, DgpConfig, OracleNuisance, StudyConfig, TwoArmDgp, ADMIN_CENSOR,
};
use fusioncurve::rng::stream_rng;
use rand::Rng;

#[test]
fn covariate_means_follow_the_shift() {
    let c = 0.25;
    let ds = generate(&DgpConfig { c, n_h: 80_000, n_b: 20_000, seed: 1, causes: 1 });
    let n = ds.len() as f64;
    let want = [c, c, c, 0.8 * c, 0.8 * c, 0.8 * c];
    for (j, w) in want.iter().enumerate() {
        let m = ds.records().iter().map(|r| r.x[j]).sum::<f64>() / n;
        assert!((m - w).abs() < 0.02, "x{j}: {m} vs {w}");
    }
    let var = ds.records().iter().map(|r| (r.x[0] - c).powi(2)).sum::<f64>() / n;
    assert!((var - 0.5).abs() < 0.02);
}

#[test]
fn placebo_marker_centers_on_two() {
    let ds = generate(&DgpConfig { c: 0.0, n_h: 100_000, n_b: 10, seed: 2, causes: 1 });
    let s: Vec<f64> = ds.historical().filter(|r| r.arm == Arm::Placebo).map(|r| r.marker[0]).collect();
    let m = s.iter().sum::<f64>() / s.len() as f64;
    let v = s.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (s.len() - 1) as f64;
    // Var = 1 + 0.5 * (0.25 + 1 + 2.25).
    assert!((v - 2.75).abs() < 0.05, "var {v}");
    assert!((m - 2.0).abs() < 3.0 * (v / s.len() as f64).sqrt(), "mean {m}");
}

#[test]
fn arms_and_studies_have_the_right_sizes() {
    let cfg = DgpConfig { c: 0.0, n_h: 4000, n_b: 1000, seed: 3, causes: 1 };
    let ds = generate(&cfg);
    assert_eq!(ds.n_hist(), 4000);
    assert_eq!(ds.n_bridge(), 1000);
    assert_eq!(ds.count(Trial::Bridging, Arm::Placebo), 0);
    assert_eq!(ds.count(Trial::Historical, Arm::Investigational), 0);
    let treated = ds.count(Trial::Historical, Arm::Approved) as f64 / 4000.0;
    assert!((treated - 0.5).abs() < 0.03);
    assert!(ds.bridging().all(|r| r.outcome.is_none()));
    assert!((ds.kappa() - cfg.kappa()).abs() < 1e-15);
}

#[test]
fn censoring_is_partial_and_bounded_by_follow_up() {
    let ds = generate(&DgpConfig { c: 0.0, n_h: 5000, n_b: 100, seed: 4, causes: 1 });
    let outcomes: Vec<_> = ds.historical().filter_map(|r| r.outcome).collect();
    let censored = outcomes.iter().filter(|o| o.status == 0).count() as f64 / outcomes.len() as f64;
    assert!(censored > 0.0 && censored < 1.0, "{censored}");
    assert!(outcomes.iter().all(|o| o.time > 0.0 && o.time <= ADMIN_CENSOR));
}

#[test]
fn same_seed_same_data() {
    let cfg = DgpConfig { c: 0.125, n_h: 300, n_b: 75, seed: 5, causes: 2 };
    assert_eq!(generate(&cfg), generate(&cfg));
    let other = generate(&DgpConfig { seed: 6, ..cfg.clone() });
    assert_ne!(generate(&cfg), other);
    let t = TwoArmDgp { n: 300, ..TwoArmDgp::default() };
    assert_eq!(generate_two_arm(&t).records(), generate_two_arm(&t).records());
}

#[test]
fn oracle_is_zero_at_origin_and_increasing() {
    assert_eq!(oracle_truth(0.0, 1, Arm::Investigational, 0.0, 1, 20_000, 1).value, 0.0);
    let vals: Vec<f64> =
        [0.5, 1.0, 2.0, 3.5, 5.0].iter().map(|&t| oracle_truth(0.0, 1, Arm::Investigational, t, 1, 20_000, 1).value).collect();
    assert!(vals.windows(2).all(|w| w[0] < w[1]), "{vals:?}");
    assert!(vals.iter().all(|v| (0.0..1.0).contains(v)));
}

#[test]
fn cause_truths_sum_to_all_cause() {
    let all = oracle_truth(0.05, 2, Arm::Investigational, 3.0, 0, 50_000, 9).value;
    let parts: f64 = (1..=2).map(|k| oracle_truth(0.05, 2, Arm::Investigational, 3.0, k, 50_000, 9).value).sum();
    assert!((all - parts).abs() < 1e-12);
}

#[test]
fn survival_truth_at_baseline_settings() {
    let t = oracle_truth(0.0, 1, Arm::Investigational, 5.0, 1, 1_000_000, 7);
    assert!(t.mc_se < 5e-4);
    // Survival by t = 5 for the investigational arm at c = 0.
    assert!((1.0 - t.value - 0.516).abs() < 0.002, "{}", 1.0 - t.value);
}

#[test]
fn oracle_truth_matches_direct_simulation() {
    // Sample event times directly and count, independent of the closed form.
    let mut rng = stream_rng(77, 1);
    let n = 200_000;
    let mut hits = 0usize;
    for _ in 0..n {
        let x = draw_covariates(&mut rng, 0.05);
        let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
        let s = bridging_marker_mean(&x, Arm::Approved) + z;
        let rate = event_rates(&x, s, true, 1)[0];
        let u: f64 = rng.random();
        if -(1.0 - u).ln() / rate <= 2.0 {
            hits += 1;
        }
    }
    let p = hits as f64 / n as f64;
    let t = oracle_truth(0.05, 1, Arm::Approved, 2.0, 1, 200_000, 3);
    let se = (p * (1.0 - p) / n as f64 + t.mc_se * t.mc_se).sqrt();
    assert!((p - t.value).abs() < 4.0 * se, "{p} vs {}", t.value);
}

#[test]
fn oracle_nuisances_are_the_generating_laws() {
    let cfg = DgpConfig { c: 0.0, n_h: 1000, n_b: 250, seed: 1, causes: 2 };
    let m = OracleNuisance::new(&cfg);
    let x = [0.3, -0.2, 0.5, 0.1, -0.4, 0.2];
    let s = [3.0];
    assert!((m.kappa() - 0.2).abs() < 1e-15);
    assert_eq!(m.arm_propensity(&x, Arm::Investigational), 0.5);
    assert!((m.approved_propensity(&x) - 0.4).abs() < 1e-15);
    let law = m.marker_law(&x, Arm::Investigational, Trial::Bridging).unwrap();
    assert_eq!(law.mean[0], bridging_marker_mean(&x, Arm::Investigational));
    assert!(m.marker_law(&x, Arm::Investigational, Trial::Historical).is_err());

    let rates = event_rates(&x, s[0], true, 2);
    let inc = m.incidence(&x, &s, &[1.5]);
    for k in 0..2 {
        assert!((inc[k] - conditional_incidence(&rates, 1.5, k + 1)).abs() < 1e-15);
    }
    // The stepwise path agrees with the exact law at requested times.
    let path = m.hazard_path(&x, &s, &[1.5]);
    let total: f64 = rates.iter().sum();
    assert!((path.survival_at(1.5) - (-total * 1.5).exp()).abs() < 1e-14);
    assert!((path.incidence_at(1.5, 0) - inc[0]).abs() < 1e-3);

    let lc = censoring_rate(&x, s[0]);
    assert!((m.censoring_left(&x, &s, 2.0) - (-lc * 2.0).exp()).abs() < 1e-15);
    assert_eq!(m.censoring_left(&x, &s, ADMIN_CENSOR + 0.1), 0.0);
}

#[test]
fn one_replication_study_is_well_formed() {
    let cfg = StudyConfig { scenarios: vec![(400, 0.0)], replications: 1, truth_draws: 20_000, ..StudyConfig::default() };
    let sum = run_study(&cfg).unwrap();
    assert_eq!(sum.rows.len(), 1);
    let r = &sum.rows[0];
    assert_eq!((r.n_h, r.n_b, r.replications), (400, 100, 1));
    assert!(r.coverage_se.is_none());
    assert!(r.coverage == 0.0 || r.coverage == 1.0);
    assert_eq!(r.mean, r.median);
    assert!((r.rmse - r.bias.abs()).abs() < 1e-12);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    sum.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    assert_eq!(text.lines().next().unwrap(), "n_h,c,mean,median,bias,pct_bias,rmse,avg_se,coverage");
    assert_eq!(text.lines().count(), 2);
}
