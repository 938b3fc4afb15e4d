//! Treatment definitions for `simulate`.
//!
//! ```toml
//! [[treatments]]
//! name = "heuristic"
//! policy = "heuristic"
//! threshold = 0.005
//! baseline = true
//!
//! [[treatments]]
//! name = "rl"
//! policy = "rl"
//! kappa = 0.4
//! limit_adjustment = 1
//! ```

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use notif_ltv_core::model::validate_kappa;
use notif_ltv_core::{HeuristicThresholds, UserType};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentFile {
    pub treatments: Vec<TreatmentSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentSpec {
    pub name: String,
    #[serde(default)]
    pub baseline: bool,
    #[serde(default)]
    pub limit_adjustment: i32,
    #[serde(flatten)]
    pub policy: PolicySpec,
}

/// Where the learned policy's behaviour model comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    /// The simulation's ground-truth factor table, κ-corrected with the
    /// treatment's κ.
    #[default]
    Oracle,
    /// Factors estimated from the simulated logging period.
    Fitted,
}

fn default_gamma() -> f64 {
    0.9
}

fn default_horizon() -> usize {
    250
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum PolicySpec {
    NoFilter,
    Heuristic {
        /// One cutoff for every user type.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        threshold: Option<f64>,
        /// Per-type cutoffs, types 1 to 6.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        thresholds: Option<[f64; UserType::COUNT]>,
    },
    Rl {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        kappa: Option<f64>,
        #[serde(default)]
        model: ModelSource,
        /// A pre-solved policy table; overrides `kappa` and `model`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        table: Option<PathBuf>,
        #[serde(default = "default_gamma")]
        gamma: f64,
        #[serde(default = "default_horizon")]
        horizon: usize,
    },
}

impl PolicySpec {
    pub fn heuristic_thresholds(&self) -> Result<Option<HeuristicThresholds>> {
        let PolicySpec::Heuristic {
            threshold,
            thresholds,
        } = self
        else {
            return Ok(None);
        };
        let h = match (threshold, thresholds) {
            (Some(k), None) => HeuristicThresholds::uniform(*k)?,
            (None, Some(ks)) => HeuristicThresholds::new(*ks)?,
            _ => {
                return Err(CliError::Validation(
                    "heuristic treatment needs exactly one of `threshold` or `thresholds`".into(),
                ))
            }
        };
        Ok(Some(h))
    }
}

impl TreatmentFile {
    /// Checks everything that can be checked without running anything.
    pub fn validate(&self) -> Result<()> {
        if self.treatments.is_empty() {
            return Err(CliError::Validation("no treatments defined".into()));
        }
        for t in &self.treatments {
            if t.name.is_empty() {
                return Err(CliError::Validation("treatment name must not be empty".into()));
            }
            t.policy.heuristic_thresholds()?;
            if let PolicySpec::Rl {
                kappa,
                table,
                gamma,
                horizon,
                ..
            } = &t.policy
            {
                match (kappa, table) {
                    (Some(k), _) => validate_kappa(*k)?,
                    (None, Some(_)) => {}
                    (None, None) => {
                        return Err(CliError::Validation(format!(
                            "rl treatment `{}` needs `kappa` or `table`",
                            t.name
                        )))
                    }
                }
                if !(0.0..1.0).contains(gamma) {
                    return Err(CliError::Validation(format!(
                        "rl treatment `{}`: gamma must be in [0, 1)",
                        t.name
                    )));
                }
                if *horizon == 0 {
                    return Err(CliError::Validation(format!(
                        "rl treatment `{}`: horizon must be at least 1",
                        t.name
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_policy_kinds_from_toml() {
        let f: TreatmentFile = toml::from_str(
            r#"
            [[treatments]]
            name = "nf"
            policy = "no_filter"

            [[treatments]]
            name = "h"
            policy = "heuristic"
            threshold = 0.1
            baseline = true

            [[treatments]]
            name = "rl"
            policy = "rl"
            kappa = 0.4
            limit_adjustment = -1
            "#,
        )
        .unwrap();
        f.validate().unwrap();
        assert_eq!(f.treatments[0].policy, PolicySpec::NoFilter);
        assert!(f.treatments[1].baseline);
        assert_eq!(f.treatments[2].limit_adjustment, -1);
        match &f.treatments[2].policy {
            PolicySpec::Rl {
                kappa,
                model,
                gamma,
                horizon,
                ..
            } => {
                assert_eq!(*kappa, Some(0.4));
                assert_eq!(*model, ModelSource::Oracle);
                assert_eq!((*gamma, *horizon), (0.9, 250));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let bad = [
            r#"[[treatments]]
               name = "h"
               policy = "heuristic""#,
            r#"[[treatments]]
               name = "rl"
               policy = "rl"
               kappa = 1.5"#,
            r#"[[treatments]]
               name = "rl"
               policy = "rl""#,
        ];
        for text in bad {
            let f: TreatmentFile = toml::from_str(text).unwrap();
            assert!(f.validate().is_err(), "{text}");
        }
        assert!(toml::from_str::<TreatmentFile>(
            r#"[[treatments]]
               name = "x"
               policy = "magic""#
        )
        .is_err());
    }
}
