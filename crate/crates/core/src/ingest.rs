//! Event-log ingestion and construction of the estimation dataset.
//!
//! Each user's log is split in two: the first half gives the user's marginal
//! open rate, the second half is flattened into one record per send tagged
//! with the streak in force when it was sent.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    advance_streak, NotificationEvent, Outcome, Streak, StreakBounds, UserType,
};

pub const DEFAULT_MIN_SAMPLES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct UserLog {
    pub user_id: String,
    pub user_type: UserType,
    /// Sorted by timestamp.
    pub events: Vec<NotificationEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserBaseline {
    pub user_id: String,
    pub baseline_rate: f64,
    pub sample_count: usize,
}

/// One send from the second half of a user's log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatRecord {
    pub user_id: String,
    pub user_type: UserType,
    /// Streak when the notification was sent.
    pub streak: Streak,
    pub outcome: Outcome,
    pub baseline_rate: f64,
    pub raw_score: f64,
}

#[derive(Deserialize)]
struct RawEvent {
    user_id: String,
    user_type: i64,
    timestamp: i64,
    raw_score: f64,
    outcome: u8,
}

/// Reads a JSON Lines event log.
pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<UserLog>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_log(file, &path.display().to_string())
}

/// Parses JSON Lines from any reader. `origin` names the source in errors.
pub fn parse_log(reader: impl Read, origin: &str) -> Result<Vec<UserLog>> {
    let parse_err = |line: usize, reason: String| Error::Parse {
        path: origin.to_string(),
        line,
        reason,
    };

    let mut by_user: BTreeMap<String, (UserType, Vec<NotificationEvent>)> = BTreeMap::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| parse_err(lineno, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawEvent =
            serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
        let user_type =
            UserType::new(raw.user_type).map_err(|e| parse_err(lineno, e.to_string()))?;
        let outcome = Outcome::try_from(raw.outcome).map_err(|e| parse_err(lineno, e))?;
        if !(0.0..=1.0).contains(&raw.raw_score) {
            return Err(parse_err(
                lineno,
                format!("raw_score must be in [0, 1], got {}", raw.raw_score),
            ));
        }
        let event = NotificationEvent {
            user_id: raw.user_id,
            user_type,
            timestamp: raw.timestamp,
            raw_score: raw.raw_score,
            outcome,
        };
        let entry = by_user
            .entry(event.user_id.clone())
            .or_insert_with(|| (user_type, Vec::new()));
        if entry.0 != user_type {
            return Err(Error::InconsistentUserType {
                user_id: event.user_id,
                first: entry.0,
                second: user_type,
            });
        }
        entry.1.push(event);
    }

    Ok(by_user
        .into_iter()
        .map(|(user_id, (user_type, mut events))| {
            // stable: equal timestamps keep file order
            events.sort_by_key(|e| e.timestamp);
            UserLog {
                user_id,
                user_type,
                events,
            }
        })
        .collect())
}

/// Groups already-parsed events by user, in the same order `parse_log` would.
pub fn group_events(events: &[NotificationEvent]) -> Result<Vec<UserLog>> {
    let mut by_user: BTreeMap<&str, (UserType, Vec<NotificationEvent>)> = BTreeMap::new();
    for e in events {
        let entry = by_user
            .entry(e.user_id.as_str())
            .or_insert_with(|| (e.user_type, Vec::new()));
        if entry.0 != e.user_type {
            return Err(Error::InconsistentUserType {
                user_id: e.user_id.clone(),
                first: entry.0,
                second: e.user_type,
            });
        }
        entry.1.push(e.clone());
    }
    Ok(by_user
        .into_iter()
        .map(|(user_id, (user_type, mut events))| {
            events.sort_by_key(|e| e.timestamp);
            UserLog {
                user_id: user_id.to_string(),
                user_type,
                events,
            }
        })
        .collect())
}

/// First half gets `floor(n / 2)` events.
pub fn split_halves(log: &UserLog) -> (&[NotificationEvent], &[NotificationEvent]) {
    log.events.split_at(log.events.len() / 2)
}

/// Mean outcome over the first half, or `None` when the user has fewer than
/// `min_samples` events there.
pub fn estimate_baseline(first: &[NotificationEvent], min_samples: usize) -> Option<UserBaseline> {
    let min_samples = min_samples.max(1);
    if first.len() < min_samples {
        return None;
    }
    let opens = first.iter().filter(|e| e.outcome.is_open()).count();
    Some(UserBaseline {
        user_id: first[0].user_id.clone(),
        baseline_rate: opens as f64 / first.len() as f64,
        sample_count: first.len(),
    })
}

/// Flattens the second half with the streak starting at 0.
pub fn flatten(
    second: &[NotificationEvent],
    baseline: &UserBaseline,
    bounds: StreakBounds,
) -> Vec<FlatRecord> {
    flatten_from(second, baseline, Streak::INITIAL, bounds)
}

/// Flattens the second half starting from a given streak.
pub fn flatten_from(
    second: &[NotificationEvent],
    baseline: &UserBaseline,
    start: Streak,
    bounds: StreakBounds,
) -> Vec<FlatRecord> {
    let mut s = bounds.clamp(start);
    second
        .iter()
        .map(|e| {
            let rec = FlatRecord {
                user_id: e.user_id.clone(),
                user_type: e.user_type,
                streak: s,
                outcome: e.outcome,
                baseline_rate: baseline.baseline_rate,
                raw_score: e.raw_score,
            };
            s = advance_streak(s, e.outcome, bounds);
            rec
        })
        .collect()
}

/// Where the second-half streak replay starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreakStart {
    /// Start at 0 at the split.
    Fresh,
    /// Continue from the streak reached by replaying the first half. The
    /// first-half outcomes still only feed the baseline rate.
    #[default]
    CarryOver,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetOptions {
    pub min_samples: usize,
    pub bounds: StreakBounds,
    pub streak_start: StreakStart,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions {
            min_samples: DEFAULT_MIN_SAMPLES,
            bounds: StreakBounds::default(),
            streak_start: StreakStart::default(),
        }
    }
}

/// The flattened estimation set plus bookkeeping about who was used.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<FlatRecord>,
    pub baselines: Vec<UserBaseline>,
    pub excluded_users: Vec<String>,
    /// Types of every user in the input, eligible or not.
    pub types_seen: BTreeSet<UserType>,
}

pub fn build_dataset(logs: &[UserLog], opts: DatasetOptions) -> Dataset {
    let per_user: Vec<(Option<UserBaseline>, Vec<FlatRecord>)> = logs
        .par_iter()
        .map(|log| {
            let (first, second) = split_halves(log);
            match estimate_baseline(first, opts.min_samples) {
                None => (None, Vec::new()),
                Some(base) => {
                    let start = match opts.streak_start {
                        StreakStart::Fresh => Streak::INITIAL,
                        StreakStart::CarryOver => {
                            first.iter().fold(Streak::INITIAL, |s, e| {
                                advance_streak(s, e.outcome, opts.bounds)
                            })
                        }
                    };
                    let recs = flatten_from(second, &base, start, opts.bounds);
                    (Some(base), recs)
                }
            }
        })
        .collect();

    let mut ds = Dataset {
        records: Vec::new(),
        baselines: Vec::new(),
        excluded_users: Vec::new(),
        types_seen: logs.iter().map(|l| l.user_type).collect(),
    };
    for (log, (base, recs)) in logs.iter().zip(per_user) {
        match base {
            Some(b) => {
                ds.baselines.push(b);
                ds.records.extend(recs);
            }
            None => ds.excluded_users.push(log.user_id.clone()),
        }
    }
    ds
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(user: &str, ts: i64, y: u8) -> NotificationEvent {
        NotificationEvent {
            user_id: user.into(),
            user_type: UserType::new(1).unwrap(),
            timestamp: ts,
            raw_score: 0.5,
            outcome: Outcome::try_from(y).unwrap(),
        }
    }

    fn base(rate: f64) -> UserBaseline {
        UserBaseline {
            user_id: "u".into(),
            baseline_rate: rate,
            sample_count: 10,
        }
    }

    fn streaks(recs: &[FlatRecord]) -> Vec<i32> {
        recs.iter().map(|r| r.streak.value()).collect()
    }

    #[test]
    fn empty_input() {
        assert!(parse_log("".as_bytes(), "mem").unwrap().is_empty());
    }

    #[test]
    fn sorts_events_per_user() {
        let log = r#"{"user_id":"a","user_type":2,"timestamp":30,"raw_score":0.1,"outcome":1}
{"user_id":"a","user_type":2,"timestamp":10,"raw_score":0.2,"outcome":0}
{"user_id":"a","user_type":2,"timestamp":20,"raw_score":0.3,"outcome":1}
"#;
        let logs = parse_log(log.as_bytes(), "mem").unwrap();
        assert_eq!(logs.len(), 1);
        let ts: Vec<i64> = logs[0].events.iter().map(|e| e.timestamp).collect();
        assert_eq!(ts, vec![10, 20, 30]);
        assert_eq!(logs[0].user_type.id(), 2);
    }

    #[test]
    fn users_ordered_by_id() {
        let log = r#"{"user_id":"b","user_type":1,"timestamp":1,"raw_score":0.1,"outcome":1}
{"user_id":"a","user_type":1,"timestamp":1,"raw_score":0.1,"outcome":1}
"#;
        let ids: Vec<String> = parse_log(log.as_bytes(), "mem")
            .unwrap()
            .into_iter()
            .map(|l| l.user_id)
            .collect();
        assert_eq!(ids, vec!["a", "b"]);
    }

    #[test]
    fn bad_outcome_names_the_line() {
        let log = r#"{"user_id":"a","user_type":1,"timestamp":1,"raw_score":0.1,"outcome":1}
{"user_id":"a","user_type":1,"timestamp":2,"raw_score":0.1,"outcome":2}
"#;
        match parse_log(log.as_bytes(), "mem") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_user_type_rejected() {
        let log = r#"{"user_id":"a","user_type":9,"timestamp":1,"raw_score":0.1,"outcome":1}"#;
        assert!(matches!(
            parse_log(log.as_bytes(), "mem"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn malformed_json_rejected() {
        assert!(matches!(
            parse_log("{not json".as_bytes(), "mem"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn conflicting_types_rejected() {
        let log = r#"{"user_id":"a","user_type":1,"timestamp":1,"raw_score":0.1,"outcome":1}
{"user_id":"a","user_type":3,"timestamp":2,"raw_score":0.1,"outcome":1}"#;
        assert!(matches!(
            parse_log(log.as_bytes(), "mem"),
            Err(Error::InconsistentUserType { .. })
        ));
    }

    fn log_of(n: usize) -> UserLog {
        UserLog {
            user_id: "u".into(),
            user_type: UserType::new(1).unwrap(),
            events: (0..n).map(|i| ev("u", i as i64, (i % 2) as u8)).collect(),
        }
    }

    #[test]
    fn split_sizes() {
        for (n, a, b) in [(10, 5, 5), (7, 3, 4), (0, 0, 0)] {
            let log = log_of(n);
            let (f, s) = split_halves(&log);
            assert_eq!((f.len(), s.len()), (a, b));
        }
    }

    #[test]
    fn baseline_mean_and_exclusion() {
        let log = log_of(10);
        let alt: Vec<_> = log
            .events
            .iter()
            .enumerate()
            .map(|(i, e)| NotificationEvent {
                outcome: Outcome::from(i % 2 == 0),
                ..e.clone()
            })
            .collect();
        assert_eq!(estimate_baseline(&alt, 10).unwrap().baseline_rate, 0.5);
        assert!(estimate_baseline(&alt[..4], 10).is_none());
        let ones: Vec<_> = (0..10).map(|i| ev("u", i, 1)).collect();
        assert_eq!(estimate_baseline(&ones, 10).unwrap().baseline_rate, 1.0);
    }

    #[test]
    fn flatten_streaks() {
        let mk = |ys: &[u8]| -> Vec<NotificationEvent> {
            ys.iter().enumerate().map(|(i, &y)| ev("u", i as i64, y)).collect()
        };
        let b = StreakBounds::default();
        assert_eq!(streaks(&flatten(&mk(&[1, 1, 0, 1]), &base(0.5), b)), vec![0, 1, 2, -1]);
        assert!(flatten(&mk(&[]), &base(0.5), b).is_empty());
        assert_eq!(streaks(&flatten(&mk(&[0, 0]), &base(0.5), b)), vec![0, -1]);
        assert_eq!(
            streaks(&flatten_from(&mk(&[0, 1]), &base(0.5), Streak(-3), b)),
            vec![-3, -4]
        );
    }

    #[test]
    fn dataset_excludes_thin_users_and_carries_streak() {
        let mut logs = vec![log_of(30)];
        logs.push(UserLog {
            user_id: "thin".into(),
            user_type: UserType::new(4).unwrap(),
            events: (0..8).map(|i| ev("thin", i, 1)).collect(),
        });
        let ds = build_dataset(&logs, DatasetOptions::default());
        assert_eq!(ds.excluded_users, vec!["thin".to_string()]);
        assert_eq!(ds.records.len(), 15);
        assert_eq!(ds.types_seen.len(), 2);
        // first half of log_of(30) ends with outcome 0 at index 14, after a 1
        assert_eq!(ds.records[0].streak, Streak(-1));

        let fresh = build_dataset(
            &logs,
            DatasetOptions {
                streak_start: StreakStart::Fresh,
                ..Default::default()
            },
        );
        assert_eq!(fresh.records[0].streak, Streak(0));
    }

    proptest! {
        #[test]
        fn split_is_lossless(n in 0usize..200) {
            let log = log_of(n);
            let (f, s) = split_halves(&log);
            let joined: Vec<_> = f.iter().chain(s).cloned().collect();
            prop_assert_eq!(joined, log.events.clone());
        }

        #[test]
        fn flatten_preserves_count_and_rate(ys in proptest::collection::vec(0u8..=1, 0..100)) {
            let events: Vec<_> = ys.iter().enumerate().map(|(i, &y)| ev("u", i as i64, y)).collect();
            let recs = flatten(&events, &base(0.3), StreakBounds::default());
            prop_assert_eq!(recs.len(), events.len());
            let opens = recs.iter().filter(|r| r.outcome.is_open()).count();
            prop_assert_eq!(opens, ys.iter().filter(|&&y| y == 1).count());
        }
    }
}
