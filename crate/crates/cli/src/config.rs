//! Run configuration: a TOML file with one optional section per command.
//! Command-line flags override file values; file values override defaults.
//!
//! ```toml
//! [fit]
//! log = "events.jsonl"
//! kappa = 0.2
//!
//! [solve]
//! gamma = 0.9
//! horizon = 250
//! ```
//!
//! Relative paths in the file are taken relative to the file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use notif_ltv_core::ingest::StreakStart;

use crate::error::{CliError, Result};
use crate::output::{parse_document, read_bytes};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub fit: FitSection,
    #[serde(default)]
    pub solve: SolveSection,
    #[serde(default)]
    pub calibrate: CalibrateSection,
    #[serde(default)]
    pub simulate: SimulateSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub log: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub calibration: Option<PathBuf>,
    pub kappa: Option<f64>,
    pub min_samples: Option<usize>,
    pub streak_start: Option<StreakStart>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveSection {
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub gamma: Option<f64>,
    pub horizon: Option<usize>,
    pub threshold_tolerance: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateSection {
    pub log: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub now: Option<i64>,
    pub window_hours: Option<u32>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub sim: Option<PathBuf>,
    pub treatments: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub min_samples: Option<usize>,
    pub events: Option<bool>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_bytes(path)?;
        let mut cfg: RunConfig = parse_document(path, &bytes)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(x) = p {
                if x.is_relative() {
                    *x = base.join(&*x);
                }
            }
        };
        fix(&mut cfg.fit.log);
        fix(&mut cfg.fit.out);
        fix(&mut cfg.fit.calibration);
        fix(&mut cfg.solve.model);
        fix(&mut cfg.solve.out);
        fix(&mut cfg.solve.csv);
        fix(&mut cfg.calibrate.log);
        fix(&mut cfg.calibrate.out);
        fix(&mut cfg.simulate.sim);
        fix(&mut cfg.simulate.treatments);
        fix(&mut cfg.simulate.out);
        Ok(cfg)
    }
}

pub(crate) fn required<T>(value: Option<T>, name: &str) -> Result<T> {
    value.ok_or_else(|| {
        CliError::Validation(format!("missing required parameter `{name}` (flag or config)"))
    })
}

/// Fully resolved parameters of `fit`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitConfig {
    pub log: PathBuf,
    pub out: PathBuf,
    pub calibration: Option<PathBuf>,
    pub kappa: f64,
    pub min_samples: usize,
    pub streak_start: StreakStart,
}

/// Fully resolved parameters of `solve`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveConfig {
    pub model: PathBuf,
    pub out: PathBuf,
    pub csv: PathBuf,
    pub gamma: f64,
    pub horizon: usize,
    pub threshold_tolerance: f64,
}

/// Fully resolved parameters of `calibrate`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrateConfig {
    pub log: PathBuf,
    pub out: PathBuf,
    /// End of the window; the latest event timestamp when not given.
    pub now: Option<i64>,
    pub window_hours: u32,
}

/// Fully resolved parameters of `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateConfig {
    pub sim: PathBuf,
    pub treatments: PathBuf,
    pub out: PathBuf,
    /// Overrides the simulation's master seed.
    pub seed: Option<u64>,
    pub min_samples: usize,
    pub events: bool,
}
