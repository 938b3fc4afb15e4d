//! Logging period and model building for the learned treatment.
//!
//! Before an experiment the population is run once under no filter on a
//! disjoint set of random streams, ending where the experiment starts. That
//! log plays the part of historical data: calibration is fitted on it and the
//! per-type mean open probabilities come from it.

use std::collections::BTreeSet;

use crate::behavior::{apply_kappa, fit_behavior, summarize_types, BehaviorModel, FactorTable};
use crate::calibrate::{fit_isotonic, CalibrationMap};
use crate::error::Result;
use crate::ingest::{build_dataset, group_events, Dataset, DatasetOptions};
use crate::model::{NotificationEvent, StreakBounds, UserType};
use crate::policy::Policy;

use super::{generate_population, run_population, SimConfig, SimEnv, PILOT_STREAM_OFFSET};

/// Events of a no-filter logging run that ends at the experiment start.
pub fn pilot_events(config: &SimConfig) -> Result<Vec<NotificationEvent>> {
    let mut shifted = config.clone();
    shifted.start_timestamp -= i64::from(config.days) * super::SECONDS_PER_DAY;
    let env = SimEnv::new(&shifted)?;
    let population = generate_population(&shifted)?;
    let tallies = run_population(
        &population,
        &env,
        &Policy::NoFilter,
        &CalibrationMap::identity(),
        &shifted.send_limits,
        PILOT_STREAM_OFFSET,
        true,
    );
    Ok(tallies
        .into_iter()
        .flat_map(|t| t.events)
        .map(|e| e.to_notification())
        .collect())
}

/// Isotonic calibration of raw scores against outcomes.
pub fn pilot_calibration(events: &[NotificationEvent]) -> Result<CalibrationMap> {
    let pairs: Vec<(f64, f64)> = events
        .iter()
        .map(|e| (e.raw_score, e.outcome.as_f64()))
        .collect();
    Ok(fit_isotonic(&pairs, None)?.compact())
}

/// The logging run with its calibration and estimation dataset.
#[derive(Debug, Clone)]
pub struct PilotData {
    pub events: Vec<NotificationEvent>,
    pub calibration: CalibrationMap,
    pub dataset: Dataset,
}

impl PilotData {
    pub fn collect(config: &SimConfig, opts: DatasetOptions) -> Result<Self> {
        let events = pilot_events(config)?;
        let calibration = pilot_calibration(&events)?;
        let logs = group_events(&events)?;
        let dataset = build_dataset(&logs, opts);
        Ok(PilotData {
            events,
            calibration,
            dataset,
        })
    }
}

/// Model built from the simulator's ground-truth factors, κ-corrected, with
/// mean open probabilities taken from the logging run.
pub fn oracle_model(config: &SimConfig, pilot: &PilotData, kappa: f64) -> Result<BehaviorModel> {
    let summary = summarize_types(
        &pilot.dataset.records,
        &pilot.calibration,
        &pilot.dataset.types_seen,
    )?;
    let types: BTreeSet<UserType> = summary.mean_open.keys().copied().collect();
    let truth = &config.factors;
    let restricted = FactorTable::from_fn(truth.bounds(), types, |c, s| truth.factor(c, s))?;
    let factors = apply_kappa(&restricted, kappa)?;
    BehaviorModel::new(factors, kappa, summary.mean_open, summary.share)
}

/// Model estimated from the logging run alone.
pub fn fitted_model(pilot: &PilotData, bounds: StreakBounds, kappa: f64) -> Result<BehaviorModel> {
    fit_behavior(
        &pilot.dataset.records,
        &pilot.dataset.types_seen,
        &pilot.calibration,
        bounds,
        kappa,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::tests::small_config;

    #[test]
    fn pilot_ends_before_the_experiment() {
        let cfg = small_config();
        let events = pilot_events(&cfg).unwrap();
        assert!(!events.is_empty());
        assert!(events.iter().all(|e| e.timestamp < cfg.start_timestamp));
    }

    #[test]
    fn oracle_and_fitted_models_build() {
        let mut cfg = small_config();
        cfg.days = 20;
        let pilot = PilotData::collect(&cfg, DatasetOptions::default()).unwrap();
        let oracle = oracle_model(&cfg, &pilot, 0.2).unwrap();
        let fitted = fitted_model(&pilot, cfg.factors.bounds(), 0.2).unwrap();
        assert_eq!(oracle.type_mean_open(), fitted.type_mean_open());
        for c in oracle.user_types() {
            let m = oracle.mean_open(c);
            assert!(m > 0.0 && m < 1.0);
        }
    }
}
