//! `notif-ltv`: one subcommand per pipeline stage, files in between.
//!
//! ```text
//! notif-ltv fit       --log events.jsonl --out model.json --kappa 0.2
//! notif-ltv solve     --model model.json --out policy.json
//! notif-ltv calibrate --log events.jsonl --out calibration.json --window-hours 24
//! notif-ltv simulate  --sim sim.toml --treatments treatments.toml --out results/
//! ```
//!
//! Exit status is 0 on success, 1 for invalid parameters or configuration and
//! 2 for data or runtime failures. Diagnostics go to stderr; the level is set
//! with `NOTIF_LTV_LOG_LEVEL` (default `warn`).

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod treatments;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use notif_ltv_core::ingest::{StreakStart, DEFAULT_MIN_SAMPLES};

use config::{
    required, CalibrateConfig, FitConfig, RunConfig, SimulateConfig, SolveConfig,
};
use error::{CliError, Result};

pub const LOG_ENV: &str = "NOTIF_LTV_LOG_LEVEL";

#[derive(Debug, Parser)]
#[command(name = "notif-ltv", version, about = "Long-term-value notification filtering")]
pub struct Cli {
    /// TOML file with per-command defaults (sections [fit], [solve], ...).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Worker threads for parallel stages (results do not depend on it).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the behaviour model from an event log.
    Fit(FitArgs),
    /// Solve the threshold table for a behaviour model.
    Solve(SolveArgs),
    /// Fit a calibration map on a trailing window of an event log.
    Calibrate(CalibrateArgs),
    /// Run a simulated A/B experiment.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long, value_name = "PATH")]
    pub log: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Calibration map to score the per-type means; fitted on the whole log
    /// when absent.
    #[arg(long, value_name = "PATH")]
    pub calibration: Option<PathBuf>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub min_samples: Option<usize>,
    /// Start the second-half streak replay fresh at 0 instead of continuing
    /// from the first half.
    #[arg(long)]
    pub fresh_streaks: bool,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long, value_name = "PATH")]
    pub model: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// CSV output; defaults to the JSON path with a `.csv` extension.
    #[arg(long, value_name = "PATH")]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub threshold_tolerance: Option<f64>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long, value_name = "PATH")]
    pub log: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Window end as a Unix timestamp; defaults to the latest event.
    #[arg(long, allow_negative_numbers = true)]
    pub now: Option<i64>,
    #[arg(long)]
    pub window_hours: Option<u32>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Simulation config (TOML, or JSON by extension).
    #[arg(long, value_name = "PATH")]
    pub sim: Option<PathBuf>,
    /// Treatment definitions (TOML, or JSON by extension).
    #[arg(long, value_name = "PATH")]
    pub treatments: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub min_samples: Option<usize>,
    /// Also write each treatment's event stream as JSON Lines.
    #[arg(long)]
    pub events: bool,
}

impl FitArgs {
    pub fn resolve(self, file: &RunConfig) -> Result<FitConfig> {
        let f = &file.fit;
        Ok(FitConfig {
            log: required(self.log.or_else(|| f.log.clone()), "log")?,
            out: required(self.out.or_else(|| f.out.clone()), "out")?,
            calibration: self.calibration.or_else(|| f.calibration.clone()),
            kappa: required(self.kappa.or(f.kappa), "kappa")?,
            min_samples: self.min_samples.or(f.min_samples).unwrap_or(DEFAULT_MIN_SAMPLES),
            streak_start: if self.fresh_streaks {
                StreakStart::Fresh
            } else {
                f.streak_start.unwrap_or_default()
            },
        })
    }
}

impl SolveArgs {
    pub fn resolve(self, file: &RunConfig) -> Result<SolveConfig> {
        let f = &file.solve;
        let defaults = notif_ltv_core::SolverConfig::default();
        let out = required(self.out.or_else(|| f.out.clone()), "out")?;
        let csv = self
            .csv
            .or_else(|| f.csv.clone())
            .unwrap_or_else(|| out.with_extension("csv"));
        if csv == out {
            return Err(CliError::Validation(
                "csv output would overwrite the JSON output".into(),
            ));
        }
        Ok(SolveConfig {
            model: required(self.model.or_else(|| f.model.clone()), "model")?,
            out,
            csv,
            gamma: self.gamma.or(f.gamma).unwrap_or(defaults.gamma),
            horizon: self.horizon.or(f.horizon).unwrap_or(defaults.horizon),
            threshold_tolerance: self
                .threshold_tolerance
                .or(f.threshold_tolerance)
                .unwrap_or(defaults.threshold_tolerance),
        })
    }
}

impl CalibrateArgs {
    pub fn resolve(self, file: &RunConfig) -> Result<CalibrateConfig> {
        let f = &file.calibrate;
        Ok(CalibrateConfig {
            log: required(self.log.or_else(|| f.log.clone()), "log")?,
            out: required(self.out.or_else(|| f.out.clone()), "out")?,
            now: self.now.or(f.now),
            window_hours: self
                .window_hours
                .or(f.window_hours)
                .unwrap_or(notif_ltv_core::calibrate::DEFAULT_WINDOW_HOURS),
        })
    }
}

impl SimulateArgs {
    pub fn resolve(self, file: &RunConfig) -> Result<SimulateConfig> {
        let f = &file.simulate;
        Ok(SimulateConfig {
            sim: required(self.sim.or_else(|| f.sim.clone()), "sim")?,
            treatments: required(self.treatments.or_else(|| f.treatments.clone()), "treatments")?,
            out: required(self.out.or_else(|| f.out.clone()), "out")?,
            seed: self.seed.or(f.seed),
            min_samples: self.min_samples.or(f.min_samples).unwrap_or(DEFAULT_MIN_SAMPLES),
            events: self.events || f.events.unwrap_or(false),
        })
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "warn");
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .try_init();
}

/// Runs a parsed command and returns its printable summary.
pub fn execute(cli: Cli) -> Result<String> {
    let file = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Validation("threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Fit(a) => commands::fit(&a.resolve(&file)?).map(|(_, s)| s),
        Command::Solve(a) => commands::solve(&a.resolve(&file)?).map(|(_, s)| s),
        Command::Calibrate(a) => commands::calibrate(&a.resolve(&file)?).map(|(_, s)| s),
        Command::Simulate(a) => commands::simulate(&a.resolve(&file)?).map(|(_, _, s)| s),
    })
}

/// Full entry point: parses `args`, runs, prints, and returns the exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(summary) => {
            let mut out = std::io::stdout().lock();
            let _ = out.write_all(summary.as_bytes());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
