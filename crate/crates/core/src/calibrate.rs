//! Isotonic calibration of raw ranking scores.
//!
//! The fit is a weighted pool-adjacent-violators pass over score-sorted,
//! tie-pooled observations. Application is a right-continuous step lookup.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NotificationEvent;

pub const DEFAULT_WINDOW_HOURS: u32 = 24;

/// Weighted isotonic (non-decreasing) regression.
///
/// Returns one fitted value per input position. Weights must be positive.
pub fn pav(values: &[f64], weights: &[f64]) -> Vec<f64> {
    assert_eq!(values.len(), weights.len(), "values/weights length mismatch");
    let sums: Vec<f64> = values.iter().zip(weights).map(|(y, w)| y * w).collect();
    pav_sums(&sums, weights)
}

/// PAV over groups given as (weighted sum, total weight).
///
/// Blocks carry exact sums and divide once at the end, so integer data give
/// the same quotients as any other route dividing the same sums.
pub fn pav_sums(sums: &[f64], weights: &[f64]) -> Vec<f64> {
    assert_eq!(sums.len(), weights.len(), "sums/weights length mismatch");
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(sums.len());
    for (&sum, &weight) in sums.iter().zip(weights) {
        debug_assert!(weight > 0.0, "pav weights must be positive");
        let mut cur = (sum, weight, 1usize);
        while let Some(&(ps, pw, pl)) = blocks.last() {
            // previous mean > current mean, cross-multiplied
            if ps * cur.1 > cur.0 * pw {
                blocks.pop();
                cur = (ps + cur.0, pw + cur.1, pl + cur.2);
            } else {
                break;
            }
        }
        blocks.push(cur);
    }
    let mut out = Vec::with_capacity(sums.len());
    for (s, w, len) in blocks {
        out.extend(std::iter::repeat(s / w).take(len));
    }
    out
}

/// Monotone step map from raw score to calibrated open probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CalibrationDoc")]
pub struct CalibrationMap {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
    fitted_at: i64,
    window_hours: u32,
}

#[derive(Deserialize)]
struct CalibrationDoc {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
    fitted_at: i64,
    window_hours: u32,
}

impl TryFrom<CalibrationDoc> for CalibrationMap {
    type Error = Error;

    fn try_from(doc: CalibrationDoc) -> Result<Self> {
        CalibrationMap::from_parts(doc.breakpoints, doc.values, doc.fitted_at, doc.window_hours)
    }
}

impl CalibrationMap {
    pub fn from_parts(
        breakpoints: Vec<f64>,
        values: Vec<f64>,
        fitted_at: i64,
        window_hours: u32,
    ) -> Result<Self> {
        if breakpoints.is_empty() || breakpoints.len() != values.len() {
            return Err(Error::invalid(
                "calibration",
                "breakpoints and values must be non-empty and of equal length",
            ));
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1] || w[0].is_nan() || w[1].is_nan()) {
            return Err(Error::invalid(
                "calibration",
                "breakpoints must be strictly ascending",
            ));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) || values.windows(2).any(|w| w[0] > w[1])
        {
            return Err(Error::invalid(
                "calibration",
                "values must be non-decreasing and within [0, 1]",
            ));
        }
        if window_hours == 0 {
            return Err(Error::invalid("window_hours", "must be positive"));
        }
        Ok(CalibrationMap {
            breakpoints,
            values,
            fitted_at,
            window_hours,
        })
    }

    /// The map that returns every score unchanged, up to step resolution 1e-3.
    pub fn identity() -> Self {
        let n = 1001;
        let grid: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        CalibrationMap {
            breakpoints: grid.clone(),
            values: grid,
            fitted_at: 0,
            window_hours: DEFAULT_WINDOW_HOURS,
        }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn fitted_at(&self) -> i64 {
        self.fitted_at
    }

    pub fn window_hours(&self) -> u32 {
        self.window_hours
    }

    pub fn with_window(mut self, fitted_at: i64, window_hours: u32) -> Self {
        self.fitted_at = fitted_at;
        self.window_hours = window_hours;
        self
    }

    /// Value at the greatest breakpoint `<= raw_score`; the first value below
    /// the first breakpoint.
    pub fn apply(&self, raw_score: f64) -> f64 {
        let i = self.breakpoints.partition_point(|&b| b <= raw_score);
        self.values[i.saturating_sub(1)]
    }

    /// Drops breakpoints whose value equals their predecessor's. Lookups are
    /// unchanged.
    pub fn compact(mut self) -> Self {
        let mut bp = Vec::with_capacity(self.breakpoints.len());
        let mut vals: Vec<f64> = Vec::with_capacity(self.values.len());
        for (&b, &v) in self.breakpoints.iter().zip(&self.values) {
            if vals.last() != Some(&v) {
                bp.push(b);
                vals.push(v);
            }
        }
        self.breakpoints = bp;
        self.values = vals;
        self
    }
}

/// Free-function form of [`CalibrationMap::apply`].
pub fn apply_calibration(map: &CalibrationMap, raw_score: f64) -> f64 {
    map.apply(raw_score)
}

/// Fits the least-squares non-decreasing step function of outcome on score.
///
/// Observations sharing a raw score are pooled before fitting, so each
/// distinct score yields one breakpoint.
pub fn fit_isotonic(pairs: &[(f64, f64)], weights: Option<&[f64]>) -> Result<CalibrationMap> {
    if pairs.len() < 2 {
        return Err(Error::TooFewCalibrationPoints(pairs.len()));
    }
    if let Some(w) = weights {
        if w.len() != pairs.len() {
            return Err(Error::invalid("weights", "length must match pairs"));
        }
        if w.iter().any(|&x| !x.is_finite() || x <= 0.0) {
            return Err(Error::invalid("weights", "must be positive and finite"));
        }
    }
    for &(x, y) in pairs {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::invalid(
                "raw_score",
                format!("must be in [0, 1], got {x}"),
            ));
        }
        if !(0.0..=1.0).contains(&y) {
            return Err(Error::invalid(
                "outcome",
                format!("must be in [0, 1], got {y}"),
            ));
        }
    }

    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| pairs[a].0.total_cmp(&pairs[b].0));

    let mut xs: Vec<f64> = Vec::new();
    let mut sums: Vec<f64> = Vec::new();
    let mut ws: Vec<f64> = Vec::new();
    for i in order {
        let (x, y) = pairs[i];
        let w = weights.map_or(1.0, |w| w[i]);
        if xs.last() == Some(&x) {
            *sums.last_mut().unwrap() += y * w;
            *ws.last_mut().unwrap() += w;
        } else {
            xs.push(x);
            sums.push(y * w);
            ws.push(w);
        }
    }
    let values: Vec<f64> = pav_sums(&sums, &ws)
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();

    CalibrationMap::from_parts(xs, values, 0, DEFAULT_WINDOW_HOURS)
}

fn window_pairs(events: &[NotificationEvent], now: i64, window_hours: u32) -> Vec<(f64, f64)> {
    let start = now - i64::from(window_hours) * 3600;
    events
        .iter()
        .filter(|e| e.timestamp > start && e.timestamp <= now)
        .map(|e| (e.raw_score, e.outcome.as_f64()))
        .collect()
}

/// Fits on events with timestamp in `(now - window, now]`.
pub fn fit_window(
    events: &[NotificationEvent],
    now: i64,
    window_hours: u32,
) -> Result<CalibrationMap> {
    if window_hours == 0 {
        return Err(Error::invalid("window_hours", "must be positive"));
    }
    let pairs = window_pairs(events, now, window_hours);
    Ok(fit_isotonic(&pairs, None)?.with_window(now, window_hours))
}

/// Daily refresh: refits on the window, keeping `previous` when the window
/// holds fewer than two events.
pub fn refresh(
    previous: &CalibrationMap,
    events: &[NotificationEvent],
    now: i64,
    window_hours: u32,
) -> CalibrationMap {
    match fit_window(events, now, window_hours) {
        Ok(map) => map,
        Err(err) => {
            log::debug!("calibration refresh at {now} kept previous map: {err}");
            previous.clone()
        }
    }
}
