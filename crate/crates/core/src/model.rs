//! Shared domain types and the streak state machine.
//!
//! A streak is the signed length of the current run of identical outcomes:
//! `+3` after three opens in a row, `-2` after two ignores. A change of outcome
//! restarts the run at `+1`/`-1` rather than stepping toward zero. Skipping a
//! notification leaves the streak alone.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the six behavioural user segments.
///
/// Deserializes from an integer or a numeric string, so it can key maps in
/// formats whose keys are always strings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "UserTypeRepr", into = "i64")]
pub struct UserType(u8);

#[derive(Deserialize)]
#[serde(untagged)]
enum UserTypeRepr {
    Int(i64),
    Str(String),
}

impl TryFrom<UserTypeRepr> for UserType {
    type Error = Error;

    fn try_from(value: UserTypeRepr) -> Result<Self> {
        match value {
            UserTypeRepr::Int(id) => UserType::new(id),
            UserTypeRepr::Str(s) => s
                .trim()
                .parse::<i64>()
                .map_err(|_| Error::invalid("user_type", format!("not an integer: {s:?}")))
                .and_then(UserType::new),
        }
    }
}

impl UserType {
    pub const COUNT: usize = 6;

    pub fn new(id: i64) -> Result<Self> {
        if (1..=Self::COUNT as i64).contains(&id) {
            Ok(UserType(id as u8))
        } else {
            Err(Error::UnknownUserType(id))
        }
    }

    pub fn id(self) -> u8 {
        self.0
    }

    /// Zero-based position, for dense per-type arrays.
    pub fn index(self) -> usize {
        usize::from(self.0 - 1)
    }

    pub fn from_index(index: usize) -> Self {
        assert!(index < Self::COUNT, "user type index {index} out of range");
        UserType(index as u8 + 1)
    }

    pub fn all() -> impl Iterator<Item = UserType> {
        (0..Self::COUNT).map(Self::from_index)
    }
}

impl TryFrom<i64> for UserType {
    type Error = Error;

    fn try_from(value: i64) -> Result<Self> {
        UserType::new(value)
    }
}

impl From<UserType> for i64 {
    fn from(value: UserType) -> Self {
        i64::from(value.0)
    }
}

impl fmt::Display for UserType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Response to a sent notification. Serialized as `0`/`1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Outcome {
    Ignored,
    Opened,
}

impl Outcome {
    pub fn is_open(self) -> bool {
        matches!(self, Outcome::Opened)
    }

    pub fn as_f64(self) -> f64 {
        if self.is_open() {
            1.0
        } else {
            0.0
        }
    }
}

impl From<bool> for Outcome {
    fn from(opened: bool) -> Self {
        if opened {
            Outcome::Opened
        } else {
            Outcome::Ignored
        }
    }
}

impl TryFrom<u8> for Outcome {
    type Error = String;

    fn try_from(value: u8) -> std::result::Result<Self, String> {
        match value {
            0 => Ok(Outcome::Ignored),
            1 => Ok(Outcome::Opened),
            other => Err(format!("outcome must be 0 or 1, got {other}")),
        }
    }
}

impl From<Outcome> for u8 {
    fn from(value: Outcome) -> Self {
        value.is_open() as u8
    }
}

/// Inclusive clamp range for streak values. `min <= -1` and `max >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "(i32, i32)", into = "(i32, i32)")]
pub struct StreakBounds {
    min: i32,
    max: i32,
}

impl StreakBounds {
    pub fn new(min: i32, max: i32) -> Result<Self> {
        if min > -1 || max < 1 {
            return Err(Error::invalid(
                "streak_bounds",
                format!("need min <= -1 and max >= 1, got ({min}, {max})"),
            ));
        }
        Ok(StreakBounds { min, max })
    }

    pub fn min(self) -> i32 {
        self.min
    }

    pub fn max(self) -> i32 {
        self.max
    }

    /// Number of streak values in the range, zero included.
    pub fn len(self) -> usize {
        (self.max - self.min + 1) as usize
    }

    pub fn is_empty(self) -> bool {
        false
    }

    pub fn contains(self, s: Streak) -> bool {
        (self.min..=self.max).contains(&s.0)
    }

    pub fn clamp(self, s: Streak) -> Streak {
        Streak(s.0.clamp(self.min, self.max))
    }

    /// Dense index of an in-bounds streak; `min` maps to 0.
    pub fn index(self, s: Streak) -> usize {
        debug_assert!(self.contains(s), "streak {s} outside {self}");
        (s.0 - self.min) as usize
    }

    pub fn streak_at(self, index: usize) -> Streak {
        Streak(self.min + index as i32)
    }

    pub fn streaks(self) -> impl Iterator<Item = Streak> {
        (self.min..=self.max).map(Streak)
    }
}

impl Default for StreakBounds {
    fn default() -> Self {
        StreakBounds { min: -15, max: 15 }
    }
}

impl TryFrom<(i32, i32)> for StreakBounds {
    type Error = Error;

    fn try_from((min, max): (i32, i32)) -> Result<Self> {
        StreakBounds::new(min, max)
    }
}

impl From<StreakBounds> for (i32, i32) {
    fn from(b: StreakBounds) -> Self {
        (b.min, b.max)
    }
}

impl fmt::Display for StreakBounds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.min, self.max)
    }
}

/// Signed run length of identical outcomes. Zero only before any outcome.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Streak(pub i32);

impl Streak {
    pub const INITIAL: Streak = Streak(0);

    pub fn value(self) -> i32 {
        self.0
    }
}

impl fmt::Display for Streak {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Streak after a sent notification resolves.
pub fn advance_streak(s: Streak, outcome: Outcome, bounds: StreakBounds) -> Streak {
    let next = match outcome {
        Outcome::Opened => s.0.max(0) + 1,
        Outcome::Ignored => s.0.min(0) - 1,
    };
    bounds.clamp(Streak(next))
}

/// Streak after a skipped decision: unchanged.
pub fn streak_after_skip(s: Streak) -> Streak {
    s
}

/// Replays a sequence of outcomes from `start`, returning the streak in force
/// *before* each outcome, followed by the final streak.
pub fn streak_trace(
    start: Streak,
    outcomes: impl IntoIterator<Item = Outcome>,
    bounds: StreakBounds,
) -> (Vec<Streak>, Streak) {
    let mut s = start;
    let mut trace = Vec::new();
    for y in outcomes {
        trace.push(s);
        s = advance_streak(s, y, bounds);
    }
    (trace, s)
}

/// A single logged send.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NotificationEvent {
    pub user_id: String,
    pub user_type: UserType,
    pub timestamp: i64,
    pub raw_score: f64,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Discount factor, in `[0, 1)`.
    pub gamma: f64,
    /// Number of future decisions considered.
    pub horizon: usize,
    pub streak_bounds: StreakBounds,
    /// Width of the final bisection bracket for thresholds.
    pub threshold_tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            gamma: 0.9,
            horizon: 250,
            streak_bounds: StreakBounds::default(),
            threshold_tolerance: 1e-6,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::invalid(
                "gamma",
                format!("must be in [0, 1), got {}", self.gamma),
            ));
        }
        if self.horizon == 0 {
            return Err(Error::invalid("horizon", "must be at least 1"));
        }
        if !(self.threshold_tolerance > 0.0 && self.threshold_tolerance < 1.0) {
            return Err(Error::invalid(
                "threshold_tolerance",
                format!("must be in (0, 1), got {}", self.threshold_tolerance),
            ));
        }
        Ok(())
    }
}

/// Daily send caps per user type, plus a global adjustment used by treatments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SendLimitConfig {
    /// Indexed by `UserType::index`.
    pub limits: [u32; UserType::COUNT],
    #[serde(default)]
    pub adjustment: i32,
}

impl SendLimitConfig {
    pub fn effective(&self, user_type: UserType) -> u32 {
        let raw = i64::from(self.limits[user_type.index()]) + i64::from(self.adjustment);
        raw.max(0) as u32
    }

    pub fn with_adjustment(mut self, adjustment: i32) -> Self {
        self.adjustment = adjustment;
        self
    }
}

/// Checks that `kappa` is a valid causal fraction.
pub fn validate_kappa(kappa: f64) -> Result<()> {
    if (0.0..=1.0).contains(&kappa) {
        Ok(())
    } else {
        Err(Error::invalid(
            "kappa",
            format!("must be in [0, 1], got {kappa}"),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b() -> StreakBounds {
        StreakBounds::default()
    }

    #[test]
    fn user_type_accepts_integers_and_numeric_strings() {
        let t: UserType = serde_json::from_str("4").unwrap();
        assert_eq!(t.id(), 4);
        let m: std::collections::BTreeMap<UserType, u8> =
            serde_json::from_str(r#"{"2": 1, "6": 0}"#).unwrap();
        assert_eq!(m.keys().map(|c| c.id()).collect::<Vec<_>>(), vec![2, 6]);
        assert!(serde_json::from_str::<UserType>("7").is_err());
        assert!(serde_json::from_str::<UserType>(r#""x""#).is_err());
        assert_eq!(serde_json::to_string(&t).unwrap(), "4");
    }

    #[test]
    fn ignore_after_open_run_resets_to_minus_one() {
        assert_eq!(advance_streak(Streak(3), Outcome::Ignored, b()), Streak(-1));
    }

    #[test]
    fn first_open_from_initial_state() {
        assert_eq!(advance_streak(Streak(0), Outcome::Opened, b()), Streak(1));
    }

    #[test]
    fn clamps_at_lower_bound() {
        assert_eq!(advance_streak(Streak(-15), Outcome::Ignored, b()), Streak(-15));
        assert_eq!(advance_streak(Streak(15), Outcome::Opened, b()), Streak(15));
    }

    #[test]
    fn skip_is_identity() {
        for s in [4, 0, -2] {
            assert_eq!(streak_after_skip(Streak(s)), Streak(s));
        }
    }

    #[test]
    fn user_type_range() {
        assert!(UserType::new(0).is_err());
        assert!(UserType::new(7).is_err());
        assert_eq!(UserType::all().count(), 6);
        assert_eq!(UserType::new(6).unwrap().index(), 5);
    }

    #[test]
    fn outcome_rejects_two() {
        let r: std::result::Result<Outcome, _> = serde_json::from_str("2");
        assert!(r.is_err());
    }

    #[test]
    fn effective_limit_never_negative() {
        let cfg = SendLimitConfig {
            limits: [3, 3, 2, 2, 1, 0],
            adjustment: -2,
        };
        assert_eq!(cfg.effective(UserType::new(1).unwrap()), 1);
        assert_eq!(cfg.effective(UserType::new(5).unwrap()), 0);
        assert_eq!(cfg.effective(UserType::new(6).unwrap()), 0);
    }

    #[test]
    fn solver_config_domain() {
        let mut c = SolverConfig::default();
        assert!(c.validate().is_ok());
        c.gamma = 1.0;
        assert!(c.validate().is_err());
        c.gamma = 0.5;
        c.horizon = 0;
        assert!(c.validate().is_err());
    }

    fn outcomes() -> impl Strategy<Value = Vec<Outcome>> {
        proptest::collection::vec(any::<bool>().prop_map(Outcome::from), 0..80)
    }

    proptest! {
        #[test]
        fn streak_bounded_by_current_run(ys in outcomes()) {
            let (_, s) = streak_trace(Streak::INITIAL, ys.iter().copied(), b());
            let run = ys.iter().rev().take_while(|y| Some(*y) == ys.last()).count();
            prop_assert!(s.value().unsigned_abs() as usize <= run);
            if let Some(last) = ys.last() {
                prop_assert_eq!(s.value() > 0, last.is_open());
                prop_assert_ne!(s.value(), 0);
            }
        }

        #[test]
        fn sign_follows_outcome(s in -15i32..=15) {
            prop_assert!(advance_streak(Streak(s), Outcome::Opened, b()).value() >= 1);
            prop_assert!(advance_streak(Streak(s), Outcome::Ignored, b()).value() <= -1);
        }

        #[test]
        fn trace_is_a_pure_function(ys in outcomes()) {
            let a = streak_trace(Streak::INITIAL, ys.iter().copied(), b());
            let c = streak_trace(Streak::INITIAL, ys.iter().copied(), b());
            prop_assert_eq!(a, c);
        }
    }
}
