//! Streak-response model: per-(user type, streak) multiplicative factors on a
//! user's baseline open rate.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::calibrate::{pav, CalibrationMap};
use crate::error::{Error, Result};
use crate::ingest::FlatRecord;
use crate::model::{validate_kappa, Streak, StreakBounds, UserType};

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorCell {
    pub factor: f64,
    pub count: u64,
}

impl FactorCell {
    pub const NEUTRAL: FactorCell = FactorCell {
        factor: 1.0,
        count: 0,
    };
}

/// Dense factor rows, one per covered user type, indexed by streak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FactorTableDoc", into = "FactorTableDoc")]
pub struct FactorTable {
    bounds: StreakBounds,
    rows: BTreeMap<UserType, Vec<FactorCell>>,
}

#[derive(Serialize, Deserialize)]
struct FactorTableDoc {
    streak_bounds: StreakBounds,
    factors: BTreeMap<UserType, Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    counts: Option<BTreeMap<UserType, Vec<u64>>>,
}

impl TryFrom<FactorTableDoc> for FactorTable {
    type Error = Error;

    fn try_from(doc: FactorTableDoc) -> Result<Self> {
        let mut rows = BTreeMap::new();
        for (c, factors) in doc.factors {
            let counts = match &doc.counts {
                Some(m) => m.get(&c).cloned().ok_or_else(|| {
                    Error::invalid("counts", format!("missing counts for user type {c}"))
                })?,
                None => vec![0; factors.len()],
            };
            if counts.len() != factors.len() {
                return Err(Error::invalid(
                    "counts",
                    format!("user type {c}: counts and factors differ in length"),
                ));
            }
            let cells = factors
                .into_iter()
                .zip(counts)
                .map(|(factor, count)| FactorCell { factor, count })
                .collect();
            rows.insert(c, cells);
        }
        FactorTable::from_rows(doc.streak_bounds, rows)
    }
}

impl From<FactorTable> for FactorTableDoc {
    fn from(t: FactorTable) -> Self {
        FactorTableDoc {
            streak_bounds: t.bounds,
            factors: t
                .rows
                .iter()
                .map(|(c, r)| (*c, r.iter().map(|x| x.factor).collect()))
                .collect(),
            counts: Some(
                t.rows
                    .iter()
                    .map(|(c, r)| (*c, r.iter().map(|x| x.count).collect()))
                    .collect(),
            ),
        }
    }
}

impl FactorTable {
    pub fn from_rows(
        bounds: StreakBounds,
        rows: BTreeMap<UserType, Vec<FactorCell>>,
    ) -> Result<Self> {
        for (c, row) in &rows {
            if row.len() != bounds.len() {
                return Err(Error::invalid(
                    "factors",
                    format!(
                        "user type {c}: expected {} cells for streaks {bounds}, got {}",
                        bounds.len(),
                        row.len()
                    ),
                ));
            }
            if let Some(bad) = row.iter().find(|x| !(x.factor > 0.0 && x.factor.is_finite())) {
                return Err(Error::invalid(
                    "factors",
                    format!("user type {c}: factor {} is not positive", bad.factor),
                ));
            }
        }
        Ok(FactorTable { bounds, rows })
    }

    /// Builds a table from a closure; `f(c, 0)` is forced to 1.
    pub fn from_fn(
        bounds: StreakBounds,
        types: impl IntoIterator<Item = UserType>,
        mut f: impl FnMut(UserType, Streak) -> f64,
    ) -> Result<Self> {
        let rows = types
            .into_iter()
            .map(|c| {
                let row = bounds
                    .streaks()
                    .map(|s| FactorCell {
                        factor: if s.value() == 0 { 1.0 } else { f(c, s) },
                        count: 0,
                    })
                    .collect();
                (c, row)
            })
            .collect();
        FactorTable::from_rows(bounds, rows)
    }

    pub fn neutral(bounds: StreakBounds, types: impl IntoIterator<Item = UserType>) -> Self {
        let rows = types
            .into_iter()
            .map(|c| (c, vec![FactorCell::NEUTRAL; bounds.len()]))
            .collect();
        FactorTable { bounds, rows }
    }

    pub fn bounds(&self) -> StreakBounds {
        self.bounds
    }

    pub fn user_types(&self) -> impl Iterator<Item = UserType> + '_ {
        self.rows.keys().copied()
    }

    pub fn covers(&self, c: UserType) -> bool {
        self.rows.contains_key(&c)
    }

    pub fn row(&self, c: UserType) -> Option<&[FactorCell]> {
        self.rows.get(&c).map(Vec::as_slice)
    }

    pub fn cell(&self, c: UserType, s: Streak) -> FactorCell {
        let row = self
            .rows
            .get(&c)
            .unwrap_or_else(|| panic!("factor table does not cover user type {c}"));
        row[self.bounds.index(self.bounds.clamp(s))]
    }

    pub fn factor(&self, c: UserType, s: Streak) -> f64 {
        self.cell(c, s).factor
    }

    fn map_cells(&self, mut f: impl FnMut(FactorCell) -> FactorCell) -> Self {
        FactorTable {
            bounds: self.bounds,
            rows: self
                .rows
                .iter()
                .map(|(c, r)| (*c, r.iter().map(|&x| f(x)).collect()))
                .collect(),
        }
    }
}

/// Ratio of observed opens to summed baselines in each (type, streak) cell.
///
/// Cells without records, or whose summed baseline is zero, are neutral
/// (factor 1). The streak-0 cell is always neutral; its count is kept.
pub fn estimate_factors(records: &[FlatRecord], bounds: StreakBounds) -> Result<FactorTable> {
    if records.is_empty() {
        return Err(Error::Empty("flat records"));
    }
    let mut acc: BTreeMap<UserType, Vec<(f64, f64, u64)>> = BTreeMap::new();
    for r in records {
        let row = acc
            .entry(r.user_type)
            .or_insert_with(|| vec![(0.0, 0.0, 0); bounds.len()]);
        let cell = &mut row[bounds.index(bounds.clamp(r.streak))];
        cell.0 += r.outcome.as_f64();
        cell.1 += r.baseline_rate;
        cell.2 += 1;
    }

    let zero = bounds.index(Streak(0));
    let rows = acc
        .into_iter()
        .map(|(c, row)| {
            let cells = row
                .into_iter()
                .enumerate()
                .map(|(i, (opens, base, n))| {
                    let factor = if i == zero || n == 0 {
                        1.0
                    } else if base > 0.0 && opens > 0.0 {
                        opens / base
                    } else if base > 0.0 {
                        // no opens: the ratio is 0, which is not a usable
                        // multiplicative factor; treat as no evidence
                        log::warn!(
                            "user type {c}, streak {}: {n} records without opens",
                            bounds.streak_at(i)
                        );
                        return FactorCell::NEUTRAL;
                    } else {
                        log::warn!(
                            "user type {c}, streak {}: all baselines are zero",
                            bounds.streak_at(i)
                        );
                        return FactorCell::NEUTRAL;
                    };
                    FactorCell { factor, count: n }
                })
                .collect();
            (c, cells)
        })
        .collect();
    FactorTable::from_rows(bounds, rows)
}

/// Projects each row onto the monotone constraint: non-decreasing over
/// `s = 1..max`, non-increasing as `s` goes `-1..min`, `f(c, 0) = 1`.
///
/// Each branch is fitted by count-weighted PAV over its populated cells.
/// Empty cells take the fitted value of the nearest populated cell closer to
/// zero, or the first populated value when none is closer.
pub fn monotone_project(raw: &FactorTable) -> FactorTable {
    let b = raw.bounds;
    let zero = b.index(Streak(0));
    let mut out = raw.clone();
    for row in out.rows.values_mut() {
        row[zero].factor = 1.0;
        // positive branch, in increasing s
        let pos: Vec<usize> = (zero + 1..b.len()).collect();
        project_branch(row, &pos, false);
        // negative branch, in decreasing s; non-increasing there
        let neg: Vec<usize> = (0..zero).rev().collect();
        project_branch(row, &neg, true);
    }
    out
}

fn project_branch(row: &mut [FactorCell], order: &[usize], decreasing: bool) {
    let populated: Vec<usize> = order.iter().copied().filter(|&i| row[i].count > 0).collect();
    if populated.is_empty() {
        for &i in order {
            row[i].factor = 1.0;
        }
        return;
    }
    let sign = if decreasing { -1.0 } else { 1.0 };
    let vals: Vec<f64> = populated.iter().map(|&i| sign * row[i].factor).collect();
    let weights: Vec<f64> = populated.iter().map(|&i| row[i].count as f64).collect();
    let fitted = pav(&vals, &weights);
    for (&i, v) in populated.iter().zip(&fitted) {
        row[i].factor = sign * v;
    }
    let mut last = row[populated[0]].factor;
    for &i in order {
        if row[i].count > 0 {
            last = row[i].factor;
        } else {
            row[i].factor = last;
        }
    }
}

/// Shrinks every factor toward 1: `(f - 1) * kappa + 1`.
pub fn apply_kappa(factors: &FactorTable, kappa: f64) -> Result<FactorTable> {
    validate_kappa(kappa)?;
    Ok(factors.map_cells(|x| FactorCell {
        factor: (x.factor - 1.0) * kappa + 1.0,
        count: x.count,
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypeSummary {
    /// Mean calibrated score of sent notifications.
    pub mean_open: BTreeMap<UserType, f64>,
    /// Fraction of distinct users.
    pub share: BTreeMap<UserType, f64>,
}

/// Per-type mean calibrated score and user share. Every type in `expected`
/// must have records.
pub fn summarize_types(
    records: &[FlatRecord],
    calibration: &CalibrationMap,
    expected: &BTreeSet<UserType>,
) -> Result<TypeSummary> {
    if records.is_empty() {
        return Err(Error::Empty("flat records"));
    }
    let mut score_sum: BTreeMap<UserType, (f64, usize)> = BTreeMap::new();
    let mut users: BTreeMap<UserType, BTreeSet<&str>> = BTreeMap::new();
    for r in records {
        let e = score_sum.entry(r.user_type).or_insert((0.0, 0));
        e.0 += calibration.apply(r.raw_score);
        e.1 += 1;
        users.entry(r.user_type).or_default().insert(r.user_id.as_str());
    }
    let missing: Vec<UserType> = expected
        .iter()
        .filter(|c| !score_sum.contains_key(c))
        .copied()
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingUserTypes(missing));
    }
    let total_users: usize = users.values().map(BTreeSet::len).sum();
    Ok(TypeSummary {
        mean_open: score_sum
            .into_iter()
            .map(|(c, (s, n))| (c, s / n as f64))
            .collect(),
        share: users
            .into_iter()
            .map(|(c, u)| (c, u.len() as f64 / total_users as f64))
            .collect(),
    })
}

/// κ-corrected factors plus the per-type statistics the solver needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelDoc", into = "ModelDoc")]
pub struct BehaviorModel {
    factors: FactorTable,
    kappa: f64,
    type_mean_open: BTreeMap<UserType, f64>,
    type_share: BTreeMap<UserType, f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    version: u32,
    kappa: f64,
    streak_bounds: StreakBounds,
    factors: BTreeMap<UserType, Vec<f64>>,
    counts: BTreeMap<UserType, Vec<u64>>,
    type_mean_open: BTreeMap<UserType, f64>,
    shares: BTreeMap<UserType, f64>,
}

impl TryFrom<ModelDoc> for BehaviorModel {
    type Error = Error;

    fn try_from(doc: ModelDoc) -> Result<Self> {
        if doc.version != MODEL_VERSION {
            return Err(Error::invalid(
                "version",
                format!("unsupported model version {}", doc.version),
            ));
        }
        let factors = FactorTable::try_from(FactorTableDoc {
            streak_bounds: doc.streak_bounds,
            factors: doc.factors,
            counts: Some(doc.counts),
        })?;
        BehaviorModel::new(factors, doc.kappa, doc.type_mean_open, doc.shares)
    }
}

impl From<BehaviorModel> for ModelDoc {
    fn from(m: BehaviorModel) -> Self {
        let table = FactorTableDoc::from(m.factors);
        ModelDoc {
            version: MODEL_VERSION,
            kappa: m.kappa,
            streak_bounds: table.streak_bounds,
            factors: table.factors,
            counts: table.counts.unwrap_or_default(),
            type_mean_open: m.type_mean_open,
            shares: m.type_share,
        }
    }
}

impl BehaviorModel {
    /// `factors` must already be κ-corrected; `kappa` is recorded.
    pub fn new(
        factors: FactorTable,
        kappa: f64,
        type_mean_open: BTreeMap<UserType, f64>,
        type_share: BTreeMap<UserType, f64>,
    ) -> Result<Self> {
        validate_kappa(kappa)?;
        for c in factors.user_types() {
            let m = *type_mean_open.get(&c).ok_or(Error::UncoveredUserType(c))?;
            if !(m > 0.0 && m < 1.0) {
                return Err(Error::DegenerateMeanOpen {
                    user_type: c,
                    value: m,
                });
            }
            if !type_share.contains_key(&c) {
                return Err(Error::UncoveredUserType(c));
            }
        }
        if let Some(c) = type_mean_open.keys().find(|c| !factors.covers(**c)) {
            return Err(Error::UncoveredUserType(*c));
        }
        let total: f64 = type_share.values().sum();
        if type_share.values().any(|s| *s < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(
                "shares",
                format!("must be non-negative and sum to 1, got {total}"),
            ));
        }
        Ok(BehaviorModel {
            factors,
            kappa,
            type_mean_open,
            type_share,
        })
    }

    pub fn factors(&self) -> &FactorTable {
        &self.factors
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn bounds(&self) -> StreakBounds {
        self.factors.bounds()
    }

    pub fn user_types(&self) -> impl Iterator<Item = UserType> + '_ {
        self.factors.user_types()
    }

    pub fn factor(&self, c: UserType, s: Streak) -> f64 {
        self.factors.factor(c, s)
    }

    pub fn mean_open(&self, c: UserType) -> f64 {
        self.type_mean_open[&c]
    }

    pub fn type_mean_open(&self) -> &BTreeMap<UserType, f64> {
        &self.type_mean_open
    }

    pub fn type_share(&self) -> &BTreeMap<UserType, f64> {
        &self.type_share
    }
}

/// Estimate, project, κ-correct and summarize: the full fitting step.
pub fn fit_behavior(
    records: &[FlatRecord],
    expected_types: &BTreeSet<UserType>,
    calibration: &CalibrationMap,
    bounds: StreakBounds,
    kappa: f64,
) -> Result<BehaviorModel> {
    validate_kappa(kappa)?;
    let raw = estimate_factors(records, bounds)?;
    let projected = monotone_project(&raw);
    let corrected = apply_kappa(&projected, kappa)?;
    let summary = summarize_types(records, calibration, expected_types)?;
    BehaviorModel::new(corrected, kappa, summary.mean_open, summary.share)
}

/// Checks the branch-monotonicity invariant cell by cell.
pub fn is_branch_monotone(table: &FactorTable) -> bool {
    let b = table.bounds();
    table.user_types().all(|c| {
        let f = |s: i32| table.factor(c, Streak(s));
        f(0) == 1.0
            && (1..b.max()).all(|s| f(s) <= f(s + 1))
            && (b.min() + 1..=-1).rev().all(|s| f(s - 1) <= f(s))
    })
}
