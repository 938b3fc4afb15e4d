//! Runtime send/skip decisions.
//!
//! Every policy applies the daily send limit first, then its own filter.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Streak, UserType};
use crate::solver::PolicyTable;

/// Per-type score cutoffs for the heuristic filter. Sends when the score is
/// strictly above the cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; UserType::COUNT]", into = "[f64; UserType::COUNT]")]
pub struct HeuristicThresholds([f64; UserType::COUNT]);

impl HeuristicThresholds {
    pub fn new(k: [f64; UserType::COUNT]) -> Result<Self> {
        if let Some(bad) = k.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(
                "heuristic threshold",
                format!("must be in [0, 1], got {bad}"),
            ));
        }
        Ok(HeuristicThresholds(k))
    }

    pub fn uniform(k: f64) -> Result<Self> {
        Self::new([k; UserType::COUNT])
    }

    pub fn get(&self, c: UserType) -> f64 {
        self.0[c.index()]
    }
}

impl TryFrom<[f64; UserType::COUNT]> for HeuristicThresholds {
    type Error = Error;

    fn try_from(k: [f64; UserType::COUNT]) -> Result<Self> {
        HeuristicThresholds::new(k)
    }
}

impl From<HeuristicThresholds> for [f64; UserType::COUNT] {
    fn from(h: HeuristicThresholds) -> Self {
        h.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionContext {
    pub user_type: UserType,
    pub streak: Streak,
    pub calibrated_score: f64,
    pub sends_today: u32,
    pub effective_limit: u32,
}

impl DecisionContext {
    fn under_limit(&self) -> bool {
        self.sends_today < self.effective_limit
    }
}

pub fn decide_no_filter(ctx: &DecisionContext) -> bool {
    ctx.under_limit()
}

pub fn decide_heuristic(ctx: &DecisionContext, k: &HeuristicThresholds) -> bool {
    ctx.under_limit() && ctx.calibrated_score > k.get(ctx.user_type)
}

pub fn decide_rl(ctx: &DecisionContext, table: &PolicyTable) -> bool {
    ctx.under_limit() && table.threshold(ctx.user_type, ctx.streak).admits(ctx.calibrated_score)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    NoFilter,
    Heuristic(HeuristicThresholds),
    Rl(PolicyTable),
}

impl Policy {
    pub fn decide(&self, ctx: &DecisionContext) -> bool {
        match self {
            Policy::NoFilter => decide_no_filter(ctx),
            Policy::Heuristic(k) => decide_heuristic(ctx, k),
            Policy::Rl(table) => decide_rl(ctx, table),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Policy::NoFilter => "no_filter",
            Policy::Heuristic(_) => "heuristic",
            Policy::Rl(_) => "rl",
        }
    }
}
