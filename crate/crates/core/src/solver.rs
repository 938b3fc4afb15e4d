//! Finite-horizon Bellman solver and send-threshold extraction.
//!
//! Future notifications enter only through their mean open probability, so
//! the state value depends on `(user type, streak, steps remaining)` alone and
//! is tabulated bottom-up from the horizon. The send advantage
//! `A(p) = Q_send(p) - Q_skip` is affine in `p` until `f * p` reaches 1, which
//! lets each `(type, streak)` threshold be found by bisection.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::behavior::BehaviorModel;
use crate::error::{Error, Result};
use crate::model::{advance_streak, Outcome, SolverConfig, Streak, StreakBounds, UserType};

pub const POLICY_VERSION: u32 = 1;

/// State values `V(c, s, n)` for `n = 0..=horizon`.
#[derive(Debug, Clone)]
pub struct ValueMemo {
    gamma: f64,
    horizon: usize,
    bounds: StreakBounds,
    /// Per type, `(horizon + 1) * bounds.len()` values, `n`-major.
    values: BTreeMap<UserType, Vec<f64>>,
}

impl ValueMemo {
    pub fn build(model: &BehaviorModel, gamma: f64, horizon: usize) -> Self {
        let bounds = model.bounds();
        let width = bounds.len();
        let values = model
            .user_types()
            .map(|c| {
                let mut v = vec![0.0; (horizon + 1) * width];
                let mean = model.mean_open(c);
                for n in 1..=horizon {
                    let (prev, cur) = v.split_at_mut(n * width);
                    let prev = &prev[(n - 1) * width..];
                    for (i, s) in bounds.streaks().enumerate() {
                        let next = Continuation::from_layer(prev, bounds, s, gamma);
                        let send = next.q_send(model.factor(c, s), mean);
                        cur[i] = send.max(next.q_skip());
                    }
                }
                (c, v)
            })
            .collect();
        ValueMemo {
            gamma,
            horizon,
            bounds,
            values,
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn value(&self, c: UserType, s: Streak, steps: usize) -> f64 {
        assert!(
            steps <= self.horizon,
            "steps {steps} beyond memo horizon {}",
            self.horizon
        );
        let row = self
            .values
            .get(&c)
            .unwrap_or_else(|| panic!("memo does not cover user type {c}"));
        row[steps * self.bounds.len() + self.bounds.index(self.bounds.clamp(s))]
    }

    fn continuation(&self, c: UserType, s: Streak, steps: usize) -> Continuation {
        debug_assert!(steps >= 1);
        let open = advance_streak(s, Outcome::Opened, self.bounds);
        let ignore = advance_streak(s, Outcome::Ignored, self.bounds);
        Continuation {
            gamma: self.gamma,
            opened: self.value(c, open, steps - 1),
            ignored: self.value(c, ignore, steps - 1),
            skipped: self.value(c, s, steps - 1),
        }
    }
}

/// Next-step values reachable from one state.
#[derive(Debug, Clone, Copy)]
struct Continuation {
    gamma: f64,
    opened: f64,
    ignored: f64,
    skipped: f64,
}

impl Continuation {
    fn from_layer(prev: &[f64], bounds: StreakBounds, s: Streak, gamma: f64) -> Self {
        let at = |x: Streak| prev[bounds.index(x)];
        Continuation {
            gamma,
            opened: at(advance_streak(s, Outcome::Opened, bounds)),
            ignored: at(advance_streak(s, Outcome::Ignored, bounds)),
            skipped: at(s),
        }
    }

    fn q_send(&self, factor: f64, p: f64) -> f64 {
        let open = (factor * p).min(1.0);
        open * (1.0 + self.gamma * self.opened) + (1.0 - open) * self.gamma * self.ignored
    }

    fn q_skip(&self) -> f64 {
        self.gamma * self.skipped
    }

    /// d A / d p below the clipping point.
    fn slope(&self, factor: f64) -> f64 {
        factor * (1.0 + self.gamma * self.opened - self.gamma * self.ignored)
    }
}

/// Value of sending a notification with calibrated open probability `p`.
pub fn q_send(
    model: &BehaviorModel,
    memo: &ValueMemo,
    c: UserType,
    s: Streak,
    p: f64,
    steps: usize,
) -> f64 {
    memo.continuation(c, s, steps).q_send(model.factor(c, s), p)
}

/// Value of skipping: the streak is unchanged and the step is spent.
pub fn q_skip(memo: &ValueMemo, c: UserType, s: Streak, steps: usize) -> f64 {
    memo.continuation(c, s, steps).q_skip()
}

/// `max(Q_send(mean), Q_skip)` with `steps` decisions remaining; 0 at `steps = 0`.
pub fn state_value(memo: &ValueMemo, c: UserType, s: Streak, steps: usize) -> f64 {
    memo.value(c, s, steps)
}

/// Minimum calibrated score at which sending is optimal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    At(f64),
    /// Sending is never optimal in this state.
    NeverSend,
}

impl Threshold {
    pub fn value(self) -> Option<f64> {
        match self {
            Threshold::At(t) => Some(t),
            Threshold::NeverSend => None,
        }
    }

    pub fn admits(self, score: f64) -> bool {
        matches!(self, Threshold::At(t) if score >= t)
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::At(t) => write!(f, "{t}"),
            Threshold::NeverSend => f.write_str("never"),
        }
    }
}

impl Serialize for Threshold {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        self.value().serialize(ser)
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        match Option::<f64>::deserialize(de)? {
            None => Ok(Threshold::NeverSend),
            Some(t) if (0.0..=1.0).contains(&t) => Ok(Threshold::At(t)),
            Some(t) => Err(serde::de::Error::custom(format!(
                "threshold {t} outside [0, 1]"
            ))),
        }
    }
}

/// Raised when the send advantage decreases in `p`, so bisection does not apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostic {
    pub user_type: UserType,
    pub streak: Streak,
    pub slope: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSearch {
    pub threshold: Threshold,
    pub diagnostic: Option<SolverDiagnostic>,
}

/// Smallest `p` in `[0, 1]` with `Q_send(p) >= Q_skip` at the full horizon.
///
/// Ties send. The bisection bracket is narrowed to `threshold_tolerance` and
/// its upper end returned. If the advantage slope is negative the search
/// falls back to a grid scan at tolerance resolution and reports why.
pub fn find_threshold(
    model: &BehaviorModel,
    memo: &ValueMemo,
    c: UserType,
    s: Streak,
    config: &SolverConfig,
) -> ThresholdSearch {
    let next = memo.continuation(c, s, config.horizon);
    let factor = model.factor(c, s);
    let skip = next.q_skip();
    let slope = next.slope(factor);
    let (threshold, used_grid) = search(
        |p| next.q_send(factor, p) - skip,
        slope,
        config.threshold_tolerance,
    );
    ThresholdSearch {
        threshold,
        diagnostic: used_grid.then(|| SolverDiagnostic {
            user_type: c,
            streak: s,
            slope,
            message: format!("send advantage decreases in p (slope {slope:.3e}); used grid scan"),
        }),
    }
}

/// Smallest `p` in [0, 1] with `advantage(p) >= 0`. The flag reports whether
/// the grid fallback was used.
fn search(advantage: impl Fn(f64) -> f64, slope: f64, tol: f64) -> (Threshold, bool) {
    if advantage(0.0) >= 0.0 {
        return (Threshold::At(0.0), false);
    }
    if slope < 0.0 {
        let n = (1.0 / tol).ceil() as u64;
        let threshold = (0..=n)
            .map(|k| (k as f64 * tol).min(1.0))
            .find(|&p| advantage(p) >= 0.0)
            .map_or(Threshold::NeverSend, Threshold::At);
        return (threshold, true);
    }
    if advantage(1.0) < 0.0 {
        return (Threshold::NeverSend, false);
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if advantage(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (Threshold::At(hi), false)
}

/// Solved `(type, streak) -> threshold` lookup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolicyDoc", into = "PolicyDoc")]
pub struct PolicyTable {
    config: SolverConfig,
    rows: BTreeMap<UserType, Vec<Threshold>>,
    diagnostics: Vec<SolverDiagnostic>,
}

#[derive(Serialize, Deserialize)]
struct PolicyDoc {
    version: u32,
    config: SolverConfig,
    thresholds: BTreeMap<UserType, Vec<Threshold>>,
    #[serde(default)]
    diagnostics: Vec<SolverDiagnostic>,
}

impl TryFrom<PolicyDoc> for PolicyTable {
    type Error = Error;

    fn try_from(doc: PolicyDoc) -> Result<Self> {
        if doc.version != POLICY_VERSION {
            return Err(Error::invalid(
                "version",
                format!("unsupported policy version {}", doc.version),
            ));
        }
        PolicyTable::from_rows(doc.config, doc.thresholds, doc.diagnostics)
    }
}

impl From<PolicyTable> for PolicyDoc {
    fn from(t: PolicyTable) -> Self {
        PolicyDoc {
            version: POLICY_VERSION,
            config: t.config,
            thresholds: t.rows,
            diagnostics: t.diagnostics,
        }
    }
}

impl PolicyTable {
    pub fn from_rows(
        config: SolverConfig,
        rows: BTreeMap<UserType, Vec<Threshold>>,
        diagnostics: Vec<SolverDiagnostic>,
    ) -> Result<Self> {
        config.validate()?;
        let width = config.streak_bounds.len();
        for (c, row) in &rows {
            if row.len() != width {
                return Err(Error::invalid(
                    "thresholds",
                    format!("user type {c}: expected {width} entries, got {}", row.len()),
                ));
            }
        }
        Ok(PolicyTable {
            config,
            rows,
            diagnostics,
        })
    }

    /// A table of all-zero thresholds: sends whenever the limit allows.
    pub fn always_send(config: SolverConfig, types: impl IntoIterator<Item = UserType>) -> Self {
        let width = config.streak_bounds.len();
        PolicyTable {
            config,
            rows: types
                .into_iter()
                .map(|c| (c, vec![Threshold::At(0.0); width]))
                .collect(),
            diagnostics: Vec::new(),
        }
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn bounds(&self) -> StreakBounds {
        self.config.streak_bounds
    }

    pub fn user_types(&self) -> impl Iterator<Item = UserType> + '_ {
        self.rows.keys().copied()
    }

    pub fn row(&self, c: UserType) -> Option<&[Threshold]> {
        self.rows.get(&c).map(Vec::as_slice)
    }

    pub fn diagnostics(&self) -> &[SolverDiagnostic] {
        &self.diagnostics
    }

    /// Threshold for a state; the streak is clamped into the table's bounds.
    /// A type the table does not cover never sends.
    pub fn threshold(&self, c: UserType, s: Streak) -> Threshold {
        let b = self.bounds();
        self.rows
            .get(&c)
            .map_or(Threshold::NeverSend, |row| row[b.index(b.clamp(s))])
    }

    pub fn len(&self) -> usize {
        self.rows.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `user_type,streak,threshold` rows; `never` marks states that never send.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("user_type,streak,threshold\n");
        for (c, row) in &self.rows {
            for (i, t) in row.iter().enumerate() {
                out.push_str(&format!("{c},{},{t}\n", self.bounds().streak_at(i)));
            }
        }
        out
    }
}

/// Thresholds for every covered `(type, streak)`.
pub fn solve_policy(model: &BehaviorModel, config: &SolverConfig) -> Result<PolicyTable> {
    config.validate()?;
    if model.bounds() != config.streak_bounds {
        return Err(Error::BoundsMismatch {
            what: "behavior model",
            found: model.bounds().to_string(),
            expected: config.streak_bounds.to_string(),
        });
    }
    let memo = ValueMemo::build(model, config.gamma, config.horizon);
    let mut diagnostics = Vec::new();
    let rows = model
        .user_types()
        .map(|c| {
            let row = config
                .streak_bounds
                .streaks()
                .map(|s| {
                    let found = find_threshold(model, &memo, c, s, config);
                    diagnostics.extend(found.diagnostic);
                    found.threshold
                })
                .collect();
            (c, row)
        })
        .collect();
    PolicyTable::from_rows(*config, rows, diagnostics)
}
