use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::model::UserType;

use super::TreatmentRun;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentResult {
    pub name: String,
    pub policy: String,
    pub send_limit_adjustment: i32,
    pub total_sends: u64,
    pub total_opens: u64,
    pub open_rate: f64,
    /// Mean over users and days of "opened at least once that day".
    pub dau_proxy: f64,
    /// Fraction of users still reachable at the end.
    pub reachability_proxy: f64,
    /// Mean per user of `sum_t gamma^t * y_t`, with `t` the global pass index.
    pub discounted_opens: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeResult {
    pub user_type: UserType,
    pub users: u64,
    pub sends: u64,
    pub opens: u64,
}

/// Relative changes against the baseline, in percent. `None` when the
/// baseline value is zero and the treatment's is not.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Deltas {
    pub total_sends_pct: Option<f64>,
    pub open_rate_pct: Option<f64>,
    pub dau_pct: Option<f64>,
    pub reachability_pct: Option<f64>,
    pub discounted_opens_pct: Option<f64>,
}

fn pct(base: f64, x: f64) -> Option<f64> {
    if base == 0.0 {
        (x == 0.0).then_some(0.0)
    } else {
        Some(100.0 * (x - base) / base)
    }
}

impl Deltas {
    fn between(base: &TreatmentResult, t: &TreatmentResult) -> Self {
        Deltas {
            total_sends_pct: pct(base.total_sends as f64, t.total_sends as f64),
            open_rate_pct: pct(base.open_rate, t.open_rate),
            dau_pct: pct(base.dau_proxy, t.dau_proxy),
            reachability_pct: pct(base.reachability_proxy, t.reachability_proxy),
            discounted_opens_pct: pct(base.discounted_opens, t.discounted_opens),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentRow {
    pub result: TreatmentResult,
    pub deltas: Deltas,
}

/// Per-type change in sends and opens for one treatment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerTypeRow {
    pub treatment: String,
    pub user_type: UserType,
    pub sends: u64,
    pub opens: u64,
    pub sends_delta_pct: Option<f64>,
    pub opens_delta_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub baseline: String,
    pub gamma: f64,
    pub treatments: Vec<TreatmentRow>,
    pub per_type: Vec<PerTypeRow>,
}

impl ExperimentReport {
    pub(crate) fn build(gamma: f64, baseline: usize, runs: &[TreatmentRun]) -> Self {
        let base = &runs[baseline];
        let treatments = runs
            .iter()
            .map(|r| TreatmentRow {
                result: r.result.clone(),
                deltas: Deltas::between(&base.result, &r.result),
            })
            .collect();
        let mut per_type = Vec::new();
        for r in runs {
            for t in &r.per_type {
                let b = base.per_type.iter().find(|b| b.user_type == t.user_type);
                let (bs, bo) = b.map_or((0, 0), |b| (b.sends, b.opens));
                per_type.push(PerTypeRow {
                    treatment: r.result.name.clone(),
                    user_type: t.user_type,
                    sends: t.sends,
                    opens: t.opens,
                    sends_delta_pct: pct(bs as f64, t.sends as f64),
                    opens_delta_pct: pct(bo as f64, t.opens as f64),
                });
            }
        }
        ExperimentReport {
            baseline: base.result.name.clone(),
            gamma,
            treatments,
            per_type,
        }
    }

    pub fn treatment(&self, name: &str) -> Option<&TreatmentRow> {
        self.treatments.iter().find(|t| t.result.name == name)
    }
}

fn fmt_pct(x: Option<f64>) -> String {
    match x {
        Some(v) => format!("{v:+.2}%"),
        None => "n/a".to_string(),
    }
}

fn fmt_limit(adj: i32) -> String {
    if adj == 0 {
        "base".to_string()
    } else {
        format!("base{adj:+}")
    }
}

/// Fixed-width text table of the treatment deltas.
pub fn format_table(report: &ExperimentReport) -> String {
    let header = [
        "Treatment",
        "Send Limit",
        "Total Sends Δ",
        "Open Rate Δ",
        "DAU Δ",
        "Reachability Δ",
    ];
    let rows: Vec<[String; 6]> = report
        .treatments
        .iter()
        .map(|t| {
            [
                t.result.name.clone(),
                fmt_limit(t.result.send_limit_adjustment),
                fmt_pct(t.deltas.total_sends_pct),
                fmt_pct(t.deltas.open_rate_pct),
                fmt_pct(t.deltas.dau_pct),
                fmt_pct(t.deltas.reachability_pct),
            ]
        })
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for r in &rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[&str]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &header);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    let _ = writeln!(out, "{}", rule.join("  "));
    for r in &rows {
        let cells: Vec<&str> = r.iter().map(String::as_str).collect();
        line(&mut out, &cells);
    }
    out
}

/// One CSV row per (treatment, user type).
pub fn per_type_csv(report: &ExperimentReport) -> String {
    let opt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.4}"));
    let mut out = String::from("treatment,user_type,sends,opens,sends_delta_pct,opens_delta_pct\n");
    for r in &report.per_type {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.treatment,
            r.user_type,
            r.sends,
            r.opens,
            opt(r.sends_delta_pct),
            opt(r.opens_delta_pct)
        );
    }
    out
}
