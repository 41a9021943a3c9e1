mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Exit codes: 0 ok, 1 a check failed, 2 usage or config error, 3 runtime error.
#[derive(Debug)]
pub enum Failure {
    Check(String),
    Usage(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Check(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Check(m) | Failure::Usage(m) | Failure::Runtime(m) => m,
        }
    }
}

#[derive(Parser)]
#[command(name = "fusioncurve", version, about = "Incidence curves for a new vaccine from a historical efficacy trial and a marker-only bridging study")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// TOML run configuration; relative paths inside it resolve from its directory.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (falls back to FUSIONCURVE_THREADS).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated time grid.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    /// Target arms: 1 and/or 1p.
    #[arg(long, value_delimiter = ',')]
    pub arm: Option<Vec<String>>,
    /// 1-based causes.
    #[arg(long, value_delimiter = ',')]
    pub cause: Option<Vec<usize>>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub h_offset: Option<f64>,
    /// Confidence level for intervals and bands.
    #[arg(long)]
    pub level: Option<f64>,
    /// Multiplier draws for bands; bootstrap replicates for ncde-test.
    #[arg(long)]
    pub bootstrap: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Cross-fitted incidence curve with pointwise and uniform bands.
    Estimate(Common),
    /// Relative efficacy of the investigational arm against the approved arm.
    Relve(Common),
    /// Test of no controlled direct effects on a trial with outcomes in both arms.
    NcdeTest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        t_star: Option<f64>,
    },
    /// Replicated simulation study with bias and coverage summaries.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Scenario keys `n_h:c`, e.g. `2000:0.25`; repeatable.
        #[arg(long = "scenario")]
        scenarios: Vec<String>,
        #[arg(long)]
        replications: Option<usize>,
        #[arg(long)]
        truth_draws: Option<usize>,
    },
    /// Write simulated study files (historical.csv, bridging.csv, two_arm.csv).
    Generate {
        #[arg(long, default_value_t = 1000)]
        n_h: usize,
        /// Bridging size; a quarter of n_h by default.
        #[arg(long)]
        n_b: Option<usize>,
        /// Covariate mean shift of both studies.
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        c: f64,
        #[arg(long, default_value_t = 1)]
        causes: usize,
        /// Size of the two-arm trial.
        #[arg(long, default_value_t = 2000)]
        n_two_arm: usize,
        /// Log hazard ratio of the investigational arm not carried by the marker.
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        direct_effect: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare influence functions with numerical pathwise derivatives on discrete toy laws.
    GateauxCheck {
        /// Toy law JSON files; the built-in toys when none are given.
        toys: Vec<PathBuf>,
        /// Write the built-in toys as JSON to this directory and exit.
        #[arg(long)]
        export: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn setup_threads(flag: Option<usize>, from_config: Option<usize>) -> Result<(), Failure> {
    let env = std::env::var("FUSIONCURVE_THREADS").ok();
    let n = match (flag, env) {
        (Some(n), _) => Some(n),
        (None, Some(v)) => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| Failure::Usage(format!("FUSIONCURVE_THREADS: not a thread count: `{v}`")))?,
        ),
        (None, None) => from_config,
    };
    if let Some(n) = n.filter(|&n| n > 0) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Estimate(c) => {
            let ctx = config::Context::load(&c)?;
            setup_threads(c.threads, ctx.threads)?;
            commands::estimate(&ctx)
        }
        Command::Relve(c) => {
            let ctx = config::Context::load(&c)?;
            setup_threads(c.threads, ctx.threads)?;
            commands::relve(&ctx)
        }
        Command::NcdeTest { common, t_star } => {
            let ctx = config::Context::load(&common)?;
            setup_threads(common.threads, ctx.threads)?;
            commands::ncde(&ctx, t_star)
        }
        Command::Simulate { common, scenarios, replications, truth_draws } => {
            let ctx = config::Context::load(&common)?;
            setup_threads(common.threads, ctx.threads)?;
            commands::simulate(&ctx, &scenarios, replications, truth_draws)
        }
        Command::Generate { n_h, n_b, c, causes, n_two_arm, direct_effect, seed, out } => {
            let dgp = fusioncurve::simlab::DgpConfig { c, n_h, n_b: n_b.unwrap_or(n_h / 4), seed, causes };
            let two = fusioncurve::simlab::TwoArmDgp { n: n_two_arm, seed, direct_effect, ..Default::default() };
            commands::generate(&dgp, &two, &out)
        }
        Command::GateauxCheck { toys, export, out } => commands::gateaux(&toys, export.as_deref(), out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
