//! The whole pipeline through the public API: simulate a log, export and
//! re-read it, fit, solve, and run the solved policy.

use std::collections::BTreeSet;

use notif_ltv_core::behavior::{fit_behavior, is_branch_monotone};
use notif_ltv_core::calibrate::fit_isotonic;
use notif_ltv_core::ingest::{build_dataset, parse_log, DatasetOptions};
use notif_ltv_core::sim::{
    run_experiment, run_experiment_detailed, write_events_jsonl, BaselineDist, ScoreModel,
};
use notif_ltv_core::solver::solve_policy;
use notif_ltv_core::{
    CalibrationMap, FactorTable, HeuristicThresholds, Policy, SendLimitConfig, SimConfig,
    SolverConfig, Streak, StreakBounds, Threshold, Treatment, UserType,
};

fn config() -> SimConfig {
    SimConfig {
        num_users: 600,
        days: 12,
        passes_per_day: 4,
        type_shares: [0.5, 0.5, 0.0, 0.0, 0.0, 0.0],
        baseline: [BaselineDist::Beta {
            alpha: 2.0,
            beta: 8.0,
        }; 6],
        scores: [ScoreModel {
            relevance_concentration: Some(2.0),
            slope: 1.0,
            bias: 0.0,
            noise_sd: 0.3,
        }; 6],
        factors: FactorTable::from_fn(StreakBounds::default(), UserType::all(), |_, s| {
            let v = f64::from(s.value());
            if v > 0.0 {
                1.0 + 0.5 * (1.0 - (-v / 3.0).exp())
            } else {
                1.0 - 0.9 * (1.0 - (v / 3.0).exp())
            }
        })
        .unwrap(),
        kappa_true: 0.5,
        send_limits: SendLimitConfig {
            limits: [3; 6],
            adjustment: 0,
        },
        master_seed: 17,
        churn_rate: 0.0,
        gamma: 0.9,
        start_timestamp: 1_600_000_000,
    }
}

fn treatment(name: &str, policy: Policy, baseline: bool) -> Treatment {
    Treatment {
        name: name.into(),
        policy,
        limit_adjustment: 0,
        baseline,
    }
}

#[test]
fn simulated_log_fits_solves_and_runs() {
    let cfg = config();
    let (_, runs) = run_experiment_detailed(
        &cfg,
        &CalibrationMap::identity(),
        &[treatment("log", Policy::NoFilter, true)],
        true,
    )
    .unwrap();

    let mut buf = Vec::new();
    write_events_jsonl(&runs[0].events, &mut buf).unwrap();
    let logs = parse_log(buf.as_slice(), "memory").unwrap();
    assert_eq!(logs.len(), cfg.num_users);

    let events: Vec<_> = logs.iter().flat_map(|l| l.events.iter()).collect();
    let pairs: Vec<(f64, f64)> = events
        .iter()
        .map(|e| (e.raw_score, e.outcome.as_f64()))
        .collect();
    let calibration = fit_isotonic(&pairs, None).unwrap().compact();

    let dataset = build_dataset(&logs, DatasetOptions::default());
    assert!(dataset.excluded_users.is_empty());
    let types: BTreeSet<_> = [UserType::new(1).unwrap(), UserType::new(2).unwrap()].into();
    let model = fit_behavior(
        &dataset.records,
        &types,
        &calibration,
        StreakBounds::default(),
        cfg.kappa_true,
    )
    .unwrap();
    assert!(is_branch_monotone(model.factors()));
    assert_eq!(model.user_types().collect::<BTreeSet<_>>(), types);

    let table = solve_policy(&model, &SolverConfig::default()).unwrap();
    assert_eq!(table.len(), 2 * 31);
    // at the bottom clamp an ignore cannot lower the streak further, so
    // sending costs nothing; elsewhere the learned table does filter
    for c in &types {
        assert_eq!(
            table.threshold(*c, Streak(StreakBounds::default().min())),
            Threshold::At(0.0)
        );
        assert!(table
            .row(*c)
            .unwrap()
            .iter()
            .any(|t| t.value().map_or(true, |v| v > 0.0)));
    }

    let report = run_experiment(
        &cfg,
        &calibration,
        &[
            treatment("nf", Policy::NoFilter, false),
            treatment(
                "heuristic",
                Policy::Heuristic(HeuristicThresholds::uniform(0.01).unwrap()),
                true,
            ),
            treatment("rl", Policy::Rl(table), false),
        ],
    )
    .unwrap();
    let sends = |name: &str| report.treatment(name).unwrap().result.total_sends;
    assert!(sends("nf") >= sends("heuristic"));
    assert!(sends("nf") >= sends("rl"));
}
