use std::path::PathBuf;

use thiserror::Error;

use crate::model::UserType;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("user type {0} is outside 1..=6")]
    UnknownUserType(i64),

    #[error("{path}: line {line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("user `{user_id}` appears with more than one user type ({first} and {second})")]
    InconsistentUserType {
        user_id: String,
        first: UserType,
        second: UserType,
    },

    #[error("calibration needs at least 2 observations, got {0}")]
    TooFewCalibrationPoints(usize),

    #[error("no records for user type(s) {0:?}")]
    MissingUserTypes(Vec<UserType>),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("model does not cover user type {0}")]
    UncoveredUserType(UserType),

    #[error("streak bounds of {what} ({found}) differ from the expected {expected}")]
    BoundsMismatch {
        what: &'static str,
        found: String,
        expected: String,
    },

    #[error("mean open rate for user type {user_type} is {value}, expected a value in (0, 1)")]
    DegenerateMeanOpen { user_type: UserType, value: f64 },

    #[error("duplicate treatment name `{0}`")]
    DuplicateTreatment(String),

    #[error("no treatment is flagged as the baseline")]
    NoBaseline,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
