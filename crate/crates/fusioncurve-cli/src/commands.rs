use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use fusioncurve::dataset::{
    overlap_report, read_study_csv, read_two_arm_csv, trim_to_overlap, Arm, DataError, FusedDataset, Trial,
    TwoArmTrial,
};
use fusioncurve::eif::toy::{gateaux_check, DiscreteToyModel, GateauxOptions, GateauxReport};
use fusioncurve::eif::EifError;
use fusioncurve::estimator::{
    estimate_curve, ncde_test, relative_ve, EstimatorConfig, EstimatorError, NcdeConfig, SCHEMA_VERSION,
};
use fusioncurve::nuisance::NuisanceError;
use fusioncurve::dataset::{write_fused_csv, write_two_arm_csv, ColumnSchema};
use fusioncurve::simlab::{
    correct_spec, generate as simulate_fused, generate_two_arm, run_study, DgpConfig, StudyConfig, TwoArmDgp, DIM,
    HORIZON,
};
use serde::Serialize;

use crate::config::{parse_scenario, Context};
use crate::Failure;

/// Largest allowed Gateaux discrepancy.
pub const GATEAUX_TOL: f64 = 1e-6;

fn data_failure(e: DataError) -> Failure {
    Failure::Usage(e.to_string())
}

fn estimator_failure(e: EstimatorError) -> Failure {
    use EstimatorError as E;
    let usage = matches!(
        e,
        E::BadSetting(_)
            | E::GridBeyondHorizon { .. }
            | E::BadGridTime(_)
            | E::EmptyGrid
            | E::Data(_)
            | E::Eif(EifError::BadTargetArm(_) | EifError::CauseOutOfRange { .. })
            | E::Nuisance(NuisanceError::BadSpec(_) | NuisanceError::TooFewFolds(_))
    );
    if usage {
        Failure::Usage(e.to_string())
    } else {
        Failure::Runtime(e.to_string())
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn out_dir(ctx: &Context) -> Result<&Path, Failure> {
    fs::create_dir_all(&ctx.out).map_err(|e| io_failure(&ctx.out, e))?;
    Ok(&ctx.out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_failure(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_failure(path, e))
}

fn load_fused(ctx: &Context) -> Result<(FusedDataset, usize), Failure> {
    let data = &ctx.run.data;
    let hist = ctx.require(&data.historical, "historical")?;
    let bridge = ctx.require(&data.bridging, "bridging")?;
    let schema = ctx.schema(&hist)?;
    let mut records = read_study_csv(&hist, &schema, Trial::Historical, data.causes).map_err(data_failure)?;
    records.extend(read_study_csv(&bridge, &schema, Trial::Bridging, data.causes).map_err(data_failure)?);
    let max_time = records.iter().filter_map(|r| r.outcome).map(|o| o.time).fold(0.0, f64::max);
    let ds = FusedDataset::new(records, data.causes, data.horizon.unwrap_or(max_time)).map_err(data_failure)?;
    if data.trim_overlap {
        trim_to_overlap(&ds).map_err(data_failure)
    } else {
        Ok((ds, 0))
    }
}

fn estimator_config(ctx: &Context) -> EstimatorConfig {
    let mut cfg = ctx.run.estimator.clone();
    if let Some(b) = ctx.bootstrap {
        cfg.multipliers = b;
    }
    cfg
}

fn report(ds: &FusedDataset, trimmed: usize, curve: &fusioncurve::estimator::CurveEstimate, names: &[String]) -> String {
    let mut r = String::new();
    let m = &curve.metadata;
    let _ = writeln!(r, "fusioncurve estimate (schema_version {})", curve.schema_version);
    let _ = writeln!(r, "rows: historical {}, bridging {}, kappa {:.6}", m.n_hist, m.n_bridge, m.kappa);
    let _ = writeln!(r, "folds {}, seed {}, level {}, multipliers {}", m.folds, m.seed, m.level, m.multipliers);
    let _ = writeln!(r);
    let _ = writeln!(r, "covariate overlap (historical range vs bridging range, share of bridging rows outside):");
    let ov = overlap_report(ds);
    for (name, c) in names.iter().zip(&ov.coordinates) {
        let _ = writeln!(
            r,
            "  {name}: [{:.4}, {:.4}] vs [{:.4}, {:.4}], outside {:.4}",
            c.hist_min, c.hist_max, c.bridge_min, c.bridge_max, c.outside_fraction
        );
    }
    let _ = writeln!(r, "bridging rows outside the historical box: {}", ov.rows_outside_box);
    let _ = writeln!(r, "bridging rows dropped by overlap trimming: {trimmed}");
    let _ = writeln!(r);
    let t = &curve.truncation_counts;
    let tr = &m.truncation;
    let _ = writeln!(r, "truncation activations:");
    let _ = writeln!(r, "  propensity floor {}: {}", tr.propensity_floor, t.propensity);
    let _ = writeln!(r, "  censoring floor {}: {}", tr.censoring_floor, t.censoring);
    let _ = writeln!(r, "  density-ratio cap {}: {}", tr.ratio_cap, t.density_ratio);
    if !m.band_quantiles.is_empty() {
        let _ = writeln!(r);
        let _ = writeln!(r, "band quantiles:");
        for (arm, cause, q) in &m.band_quantiles {
            let _ = writeln!(r, "  arm {arm}, cause {cause}: {q:.6}");
        }
    }
    if !curve.warnings.is_empty() {
        let _ = writeln!(r);
        let _ = writeln!(r, "warnings:");
        for w in &curve.warnings {
            let _ = writeln!(r, "  {w}");
        }
    }
    r
}

pub fn estimate(ctx: &Context) -> Result<(), Failure> {
    let (ds, trimmed) = load_fused(ctx)?;
    let cfg = estimator_config(ctx);
    let (curve, eif) = estimate_curve(&ds, &cfg).map_err(estimator_failure)?;
    let out = out_dir(ctx)?;
    let path = out.join("curve.csv");
    curve.write_csv(&path).map_err(|e| io_failure(&path, e))?;
    write_json(&out.join("curve.json"), &curve)?;
    let path = out.join("eif.csv");
    eif.write_csv(&path).map_err(|e| io_failure(&path, e))?;
    let names = ctx.schema(&ctx.require(&ctx.run.data.historical, "historical")?)?.covariates;
    let path = out.join("report.txt");
    fs::write(&path, report(&ds, trimmed, &curve, &names)).map_err(|e| io_failure(&path, e))?;
    for w in &curve.warnings {
        eprintln!("warning: {w}");
    }
    println!("wrote {} curve points to {}", curve.points.len(), out.display());
    Ok(())
}

pub fn relve(ctx: &Context) -> Result<(), Failure> {
    let (ds, _) = load_fused(ctx)?;
    let mut cfg = estimator_config(ctx);
    if cfg.causes.len() != 1 {
        return Err(Failure::Usage("estimator.causes: relve takes exactly one cause".into()));
    }
    cfg.arms = vec![Arm::Approved, Arm::Investigational];
    cfg.multipliers = 0;
    let (_, eif) = estimate_curve(&ds, &cfg).map_err(estimator_failure)?;
    let cause = cfg.causes[0];
    let rv = relative_ve(&eif.arm_curve(Arm::Approved, cause), &eif.arm_curve(Arm::Investigational, cause), cfg.level)
        .map_err(estimator_failure)?;
    let out = out_dir(ctx)?;
    let path = out.join("relve.csv");
    rv.write_csv(&path).map_err(|e| io_failure(&path, e))?;
    write_json(&out.join("relve.json"), &rv)?;
    println!("wrote {} relative efficacy points to {}", rv.points.len(), out.display());
    Ok(())
}

fn load_two_arm(ctx: &Context) -> Result<TwoArmTrial, Failure> {
    let data = &ctx.run.data;
    let path = ctx.require(&data.two_arm, "two_arm")?;
    let schema = ctx.schema(&path)?;
    let trial = read_two_arm_csv(&path, &schema, data.causes, f64::MIN_POSITIVE).map_err(data_failure)?;
    let max_time = trial.records().iter().filter_map(|r| r.outcome).map(|o| o.time).fold(0.0, f64::max);
    TwoArmTrial::new(trial.records().to_vec(), data.causes, data.horizon.unwrap_or(max_time)).map_err(data_failure)
}

pub fn ncde(ctx: &Context, t_star: Option<f64>) -> Result<(), Failure> {
    let trial = load_two_arm(ctx)?;
    let sec = &ctx.run.ncde;
    let cfg = NcdeConfig {
        t_star: t_star.or(sec.t_star).unwrap_or(trial.horizon()),
        alpha: sec.alpha,
        replicates: ctx.bootstrap.unwrap_or(sec.replicates),
        cause: ctx.causes_flag.as_ref().and_then(|c| c.first().copied()).unwrap_or(sec.cause),
        seed: ctx.seed(),
        estimator: ctx.run.estimator.clone(),
    };
    let res = ncde_test(&trial, &cfg).map_err(estimator_failure)?;
    let out = out_dir(ctx)?;
    write_json(&out.join("ncde.json"), &res)?;
    println!(
        "difference {:.6} [{:.6}, {:.6}], reject = {}",
        res.difference, res.ci_lo, res.ci_hi, res.reject
    );
    Ok(())
}

pub fn simulate(
    ctx: &Context,
    flag_scenarios: &[String],
    replications: Option<usize>,
    truth_draws: Option<usize>,
) -> Result<(), Failure> {
    let sec = &ctx.run.simulate;
    let keys: Option<Vec<String>> =
        if flag_scenarios.is_empty() { sec.scenarios.clone() } else { Some(flag_scenarios.to_vec()) };
    let defaults = StudyConfig::default();
    let scenarios = match keys {
        Some(k) => k.iter().map(|s| parse_scenario(s)).collect::<Result<Vec<_>, _>>()?,
        None => defaults.scenarios.clone(),
    };
    if !(sec.time > 0.0 && sec.time <= HORIZON) {
        return Err(Failure::Usage(format!("simulate.time: must lie in (0, {HORIZON}]")));
    }
    let mut estimator = ctx.run.estimator.clone();
    if estimator.spec.is_none() {
        estimator.spec = Some(correct_spec());
    }
    estimator.validate().map_err(estimator_failure)?;
    let cfg = StudyConfig {
        scenarios,
        replications: replications.unwrap_or(sec.replications),
        seed: ctx.seed(),
        bridging_fraction: sec.bridging_fraction,
        truth_draws: truth_draws.unwrap_or(sec.truth_draws),
        time: sec.time,
        estimator,
    };
    let summary = run_study(&cfg).map_err(estimator_failure)?;
    let out = out_dir(ctx)?;
    let path = out.join("table1.csv");
    summary.write_csv(&path).map_err(|e| io_failure(&path, e))?;
    write_json(&out.join("table1.json"), &summary)?;
    for r in &summary.rows {
        println!(
            "n_h {:>5} c {:<5} truth {:.4} mean {:.4} bias {:+.4} coverage {:.3} failures {}",
            r.n_h, r.c, r.truth, r.mean, r.bias, r.coverage, r.failures
        );
    }
    let frac = summary.failure_fraction();
    if frac > 0.1 {
        return Err(Failure::Runtime(format!("{:.1}% of replications failed", 100.0 * frac)));
    }
    Ok(())
}

#[derive(Serialize)]
struct GateauxOutput {
    schema_version: u32,
    tolerance: f64,
    passed: bool,
    reports: Vec<GateauxReport>,
}

pub fn gateaux(paths: &[PathBuf], export: Option<&Path>, out: Option<&Path>) -> Result<(), Failure> {
    if let Some(dir) = export {
        fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
        for toy in DiscreteToyModel::shipped() {
            write_json(&dir.join(format!("{}.json", toy.name)), &toy)?;
        }
        return Ok(());
    }
    let toys = if paths.is_empty() {
        DiscreteToyModel::shipped()
    } else {
        paths
            .iter()
            .map(|p| {
                let text = fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
                serde_json::from_str::<DiscreteToyModel>(&text)
                    .map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))
            })
            .collect::<Result<Vec<_>, _>>()?
    };
    let mut reports = Vec::new();
    for toy in &toys {
        let r = gateaux_check(toy, &GateauxOptions::default()).map_err(|e| Failure::Usage(format!("{}: {e}", toy.name)))?;
        let verdict = if r.max_error < GATEAUX_TOL { "ok" } else { "FAILED" };
        println!("{}: max error {:.3e} over {} support points ({verdict})", r.name, r.max_error, r.support_points);
        reports.push(r);
    }
    let passed = reports.iter().all(|r| r.max_error < GATEAUX_TOL);
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
        let output = GateauxOutput { schema_version: SCHEMA_VERSION, tolerance: GATEAUX_TOL, passed, reports };
        write_json(&dir.join("gateaux.json"), &output)?;
    }
    if passed {
        Ok(())
    } else {
        Err(Failure::Check(format!("pathwise derivative mismatch of {GATEAUX_TOL:e} or more")))
    }
}

pub fn generate(dgp: &DgpConfig, two: &TwoArmDgp, out: &Path) -> Result<(), Failure> {
    if dgp.n_h < 8 || dgp.n_b < 4 || two.n < 8 || dgp.causes == 0 {
        return Err(Failure::Usage("generate: need n_h >= 8, n_b >= 4, n_two_arm >= 8 and causes >= 1".into()));
    }
    fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    let schema = ColumnSchema::standard(DIM, 1);
    let ds = simulate_fused(dgp);
    write_fused_csv(&ds, &out.join("historical.csv"), &out.join("bridging.csv"), &schema)
        .map_err(|e| io_failure(out, e))?;
    let trial = generate_two_arm(two);
    write_two_arm_csv(&out.join("two_arm.csv"), &trial, &schema).map_err(|e| io_failure(out, e))?;
    println!("wrote {} fused rows and {} two-arm rows to {}", ds.len(), trial.records().len(), out.display());
    Ok(())
}
