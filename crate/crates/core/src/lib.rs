//! Long-term-value filtering for push notifications.
//!
//! The pipeline learns how a user's open probability moves with their recent
//! run of opens or ignores, solves a discounted finite-horizon control problem
//! over that model, and stores the result as a `(user type, streak)` table of
//! minimum calibrated scores. A seeded population simulator compares the
//! learned policy with a send-everything baseline and a fixed-cutoff
//! heuristic.
//!
//! Modules, in pipeline order:
//! - [`ingest`]: JSON Lines logs to the flattened estimation set
//! - [`calibrate`]: isotonic score calibration
//! - [`behavior`]: streak factors, monotone projection, κ correction
//! - [`solver`]: Bellman values and threshold tables
//! - [`policy`]: runtime send/skip decisions
//! - [`sim`]: synthetic population and A/B harness

pub mod behavior;
pub mod calibrate;
pub mod error;
pub mod ingest;
pub mod model;
pub mod policy;
pub mod sim;
pub mod solver;

pub use behavior::{BehaviorModel, FactorCell, FactorTable};
pub use calibrate::CalibrationMap;
pub use error::{Error, Result};
pub use ingest::{FlatRecord, UserBaseline, UserLog};
pub use model::{
    advance_streak, streak_after_skip, NotificationEvent, Outcome, SendLimitConfig, SolverConfig,
    Streak, StreakBounds, UserType,
};
pub use policy::{DecisionContext, HeuristicThresholds, Policy};
pub use sim::{ExperimentReport, SimConfig, Treatment, TreatmentResult};
pub use solver::{PolicyTable, Threshold, ValueMemo};
