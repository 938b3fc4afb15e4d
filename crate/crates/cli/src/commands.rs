//! The pipeline stages. Each command validates its parameters before reading
//! any input, writes its artifacts atomically and returns a short
//! human-readable summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use notif_ltv_core::behavior::{fit_behavior, BehaviorModel};
use notif_ltv_core::calibrate::{fit_isotonic, fit_window, CalibrationMap};
use notif_ltv_core::ingest::{build_dataset, parse_log, DatasetOptions, UserLog};
use notif_ltv_core::model::validate_kappa;
use notif_ltv_core::sim::{
    self, fitted_model, format_table, oracle_model, per_type_csv, write_events_jsonl, PilotData,
    SimConfig, Treatment,
};
use notif_ltv_core::solver::solve_policy;
use notif_ltv_core::{PolicyTable, SolverConfig, StreakBounds, Threshold};

use crate::config::{CalibrateConfig, FitConfig, SimulateConfig, SolveConfig};
use crate::error::{CliError, Result};
use crate::output::{
    parse_document, read_bytes, write_atomic, write_json_artifact, Provenance,
};
use crate::treatments::{ModelSource, PolicySpec, TreatmentFile};

fn read_logs(path: &Path, provenance: &mut Provenance) -> Result<Vec<UserLog>> {
    let bytes = read_bytes(path)?;
    provenance.add_input(path, &bytes);
    Ok(parse_log(bytes.as_slice(), &path.display().to_string())?)
}

fn whole_log_calibration(logs: &[UserLog]) -> Result<CalibrationMap> {
    let pairs: Vec<(f64, f64)> = logs
        .iter()
        .flat_map(|l| &l.events)
        .map(|e| (e.raw_score, e.outcome.as_f64()))
        .collect();
    Ok(fit_isotonic(&pairs, None)?.compact())
}

/// Log → behaviour model.
pub fn fit(cfg: &FitConfig) -> Result<(BehaviorModel, String)> {
    validate_kappa(cfg.kappa)?;
    if cfg.min_samples == 0 {
        return Err(CliError::Validation("min_samples must be at least 1".into()));
    }
    let mut provenance = Provenance::new("fit", cfg)?;
    let logs = read_logs(&cfg.log, &mut provenance)?;
    let calibration = match &cfg.calibration {
        Some(path) => {
            let bytes = read_bytes(path)?;
            provenance.add_input(path, &bytes);
            serde_json::from_slice(&bytes)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?
        }
        None => whole_log_calibration(&logs)?,
    };
    let bounds = StreakBounds::default();
    let dataset = build_dataset(
        &logs,
        DatasetOptions {
            min_samples: cfg.min_samples,
            bounds,
            streak_start: cfg.streak_start,
        },
    );
    if dataset.records.is_empty() {
        return Err(CliError::Runtime(format!(
            "no users eligible: all {} users have fewer than {} sends in the first half of their log",
            logs.len(),
            cfg.min_samples
        )));
    }
    log::info!(
        "{} of {} users eligible, {} records",
        dataset.baselines.len(),
        logs.len(),
        dataset.records.len()
    );
    let model = fit_behavior(
        &dataset.records,
        &dataset.types_seen,
        &calibration,
        bounds,
        cfg.kappa,
    )?;
    write_json_artifact(&cfg.out, &model, &provenance)?;

    let mut summary = format!(
        "fitted {} users ({} excluded), {} records, kappa {}\n",
        dataset.baselines.len(),
        dataset.excluded_users.len(),
        dataset.records.len(),
        cfg.kappa
    );
    let _ = writeln!(summary, "type  populated cells  records  mean open");
    for c in model.user_types() {
        let row = model.factors().row(c).unwrap_or(&[]);
        let populated = row.iter().filter(|x| x.count > 0).count();
        let records: u64 = row.iter().map(|x| x.count).sum();
        let _ = writeln!(
            summary,
            "{c:<4}  {populated:>7} / {:<5}  {records:>7}  {:.4}",
            row.len(),
            model.mean_open(c)
        );
    }
    Ok((model, summary))
}

fn validate_solver(gamma: f64, horizon: usize, tol: f64) -> Result<()> {
    SolverConfig {
        gamma,
        horizon,
        streak_bounds: StreakBounds::default(),
        threshold_tolerance: tol,
    }
    .validate()?;
    Ok(())
}

/// Behaviour model → threshold table (JSON and CSV).
pub fn solve(cfg: &SolveConfig) -> Result<(PolicyTable, String)> {
    validate_solver(cfg.gamma, cfg.horizon, cfg.threshold_tolerance)?;
    let mut provenance = Provenance::new("solve", cfg)?;
    let bytes = read_bytes(&cfg.model)?;
    provenance.add_input(&cfg.model, &bytes);
    let model: BehaviorModel = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", cfg.model.display())))?;
    let solver = SolverConfig {
        gamma: cfg.gamma,
        horizon: cfg.horizon,
        streak_bounds: model.bounds(),
        threshold_tolerance: cfg.threshold_tolerance,
    };
    let table = solve_policy(&model, &solver)?;
    for d in table.diagnostics() {
        log::warn!("type {} streak {}: {}", d.user_type, d.streak.value(), d.message);
    }
    write_json_artifact(&cfg.out, &table, &provenance)?;
    write_atomic(&cfg.csv, table.to_csv().as_bytes())?;

    let mut summary = format!(
        "solved {} states (gamma {}, horizon {}), {} diagnostics\n",
        table.len(),
        cfg.gamma,
        cfg.horizon,
        table.diagnostics().len()
    );
    let _ = writeln!(summary, "type  min threshold  max threshold  never-send");
    for c in table.user_types() {
        let row = table.row(c).unwrap_or(&[]);
        let values: Vec<f64> = row.iter().filter_map(|t| t.value()).collect();
        let never = row.iter().filter(|t| **t == Threshold::NeverSend).count();
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let show = |x: f64| {
            if x.is_finite() {
                format!("{x:.6}")
            } else {
                "-".to_string()
            }
        };
        let _ = writeln!(summary, "{c:<4}  {:>13}  {:>13}  {never:>10}", show(min), show(max));
    }
    Ok((table, summary))
}

/// Log → calibration map over the trailing window.
pub fn calibrate(cfg: &CalibrateConfig) -> Result<(CalibrationMap, String)> {
    if cfg.window_hours == 0 {
        return Err(CliError::Validation("window_hours must be positive".into()));
    }
    let mut provenance = Provenance::new("calibrate", cfg)?;
    let logs = read_logs(&cfg.log, &mut provenance)?;
    let events: Vec<_> = logs.into_iter().flat_map(|l| l.events).collect();
    let now = match cfg.now {
        Some(t) => t,
        None => events
            .iter()
            .map(|e| e.timestamp)
            .max()
            .ok_or_else(|| CliError::Runtime(format!("{}: log is empty", cfg.log.display())))?,
    };
    let map = fit_window(&events, now, cfg.window_hours)?.compact();
    write_json_artifact(&cfg.out, &map, &provenance)?;
    let bp = map.breakpoints();
    let vals = map.values();
    let summary = format!(
        "{} breakpoints over raw scores [{:.4}, {:.4}], calibrated range [{:.4}, {:.4}], window ending {now}\n",
        bp.len(),
        bp.first().copied().unwrap_or(0.0),
        bp.last().copied().unwrap_or(0.0),
        vals.first().copied().unwrap_or(0.0),
        vals.last().copied().unwrap_or(0.0),
    );
    Ok((map, summary))
}

fn file_stem_safe(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

/// Paths written by `simulate`.
#[derive(Debug, Clone)]
pub struct SimulateOutputs {
    pub report: PathBuf,
    pub table: PathBuf,
    pub per_type: PathBuf,
    pub calibration: PathBuf,
    pub policies: Vec<PathBuf>,
    pub events: Vec<PathBuf>,
}

/// Simulation config + treatments → report, table, per-type CSV.
pub fn simulate(cfg: &SimulateConfig) -> Result<(sim::ExperimentReport, SimulateOutputs, String)> {
    if cfg.min_samples == 0 {
        return Err(CliError::Validation("min_samples must be at least 1".into()));
    }
    let mut provenance = Provenance::new("simulate", cfg)?;
    let sim_bytes = read_bytes(&cfg.sim)?;
    provenance.add_input(&cfg.sim, &sim_bytes);
    let mut sim_cfg: SimConfig = parse_document(&cfg.sim, &sim_bytes)?;
    if let Some(seed) = cfg.seed {
        sim_cfg.master_seed = seed;
    }
    sim_cfg.validate()?;
    let t_bytes = read_bytes(&cfg.treatments)?;
    provenance.add_input(&cfg.treatments, &t_bytes);
    let spec: TreatmentFile = parse_document(&cfg.treatments, &t_bytes)?;
    spec.validate()?;
    {
        let mut seen = std::collections::BTreeSet::new();
        for t in &spec.treatments {
            if !seen.insert(t.name.as_str()) {
                return Err(notif_ltv_core::Error::DuplicateTreatment(t.name.clone()).into());
            }
        }
        if !spec.treatments.iter().any(|t| t.baseline) {
            return Err(notif_ltv_core::Error::NoBaseline.into());
        }
    }

    // logging period: calibration and per-type means for the learned policy
    let opts = DatasetOptions {
        min_samples: cfg.min_samples,
        bounds: sim_cfg.factors.bounds(),
        ..DatasetOptions::default()
    };
    let pilot = PilotData::collect(&sim_cfg, opts)?;
    let mut tables: BTreeMap<String, PolicyTable> = BTreeMap::new();
    let mut treatments = Vec::with_capacity(spec.treatments.len());
    for t in &spec.treatments {
        let policy = match &t.policy {
            PolicySpec::NoFilter => notif_ltv_core::Policy::NoFilter,
            PolicySpec::Heuristic { .. } => notif_ltv_core::Policy::Heuristic(
                t.policy.heuristic_thresholds()?.expect("heuristic spec"),
            ),
            PolicySpec::Rl {
                kappa,
                model,
                table,
                gamma,
                horizon,
            } => {
                let solved = match (table, kappa) {
                    (Some(path), _) => {
                        let bytes = read_bytes(path)?;
                        provenance.add_input(path, &bytes);
                        serde_json::from_slice::<PolicyTable>(&bytes).map_err(|e| {
                            CliError::Runtime(format!("{}: {e}", path.display()))
                        })?
                    }
                    (None, Some(k)) => {
                        let behavior = match model {
                            ModelSource::Oracle => oracle_model(&sim_cfg, &pilot, *k)?,
                            ModelSource::Fitted => {
                                fitted_model(&pilot, sim_cfg.factors.bounds(), *k)?
                            }
                        };
                        let solver = SolverConfig {
                            gamma: *gamma,
                            horizon: *horizon,
                            streak_bounds: behavior.bounds(),
                            ..SolverConfig::default()
                        };
                        solve_policy(&behavior, &solver)?
                    }
                    (None, None) => unreachable!("validated"),
                };
                tables.insert(t.name.clone(), solved.clone());
                notif_ltv_core::Policy::Rl(solved)
            }
        };
        treatments.push(Treatment {
            name: t.name.clone(),
            policy,
            limit_adjustment: t.limit_adjustment,
            baseline: t.baseline,
        });
    }

    let (report, runs) =
        sim::run_experiment_detailed(&sim_cfg, &pilot.calibration, &treatments, cfg.events)?;

    let out = &cfg.out;
    let outputs = SimulateOutputs {
        report: out.join("report.json"),
        table: out.join("table.txt"),
        per_type: out.join("per_type.csv"),
        calibration: out.join("calibration.json"),
        policies: tables
            .keys()
            .map(|n| out.join(format!("policy-{}.json", file_stem_safe(n))))
            .collect(),
        events: if cfg.events {
            treatments
                .iter()
                .map(|t| out.join(format!("events-{}.jsonl", file_stem_safe(&t.name))))
                .collect()
        } else {
            Vec::new()
        },
    };
    write_json_artifact(&outputs.report, &report, &provenance)?;
    let table = format_table(&report);
    write_atomic(&outputs.table, table.as_bytes())?;
    write_atomic(&outputs.per_type, per_type_csv(&report).as_bytes())?;
    write_json_artifact(&outputs.calibration, &pilot.calibration, &provenance)?;
    for ((_, t), path) in tables.iter().zip(&outputs.policies) {
        write_json_artifact(path, t, &provenance)?;
    }
    for (run, path) in runs.iter().zip(&outputs.events) {
        let mut buf = Vec::new();
        write_events_jsonl(&run.events, &mut buf)?;
        write_atomic(path, &buf)?;
    }

    let mut summary = format!(
        "{} users x {} days x {} passes, baseline `{}`\n\n",
        sim_cfg.num_users, sim_cfg.days, sim_cfg.passes_per_day, report.baseline
    );
    summary.push_str(&table);
    Ok((report, outputs, summary))
}
