use std::io;

use chrono::NaiveDate;

/// Errors surfaced by every TitAnt stage.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("line {line}: field `{field}`: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },

    #[error("line {line}: expected 52 basic features, found {found}")]
    FeatureArity { line: usize, found: usize },

    #[error("arity mismatch: expected {expected}, got {got}")]
    Arity { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("node id {id} out of range (|V| = {len})")]
    NodeOutOfRange { id: usize, len: usize },

    #[error("labels are single-class; cannot fit a discriminative model")]
    DegenerateLabels,

    #[error("feature store has no published versions")]
    NoVersions,

    #[error("feature store version {0} does not exist")]
    VersionNotFound(NaiveDate),

    #[error("feature store version {0} already exists")]
    DuplicateVersion(NaiveDate),

    #[error("row for user `{user}` is missing column family `{family}`")]
    IncompleteRow { user: String, family: &'static str },

    #[error("corrupt {what}: {message}")]
    Corrupt { what: &'static str, message: String },

    #[error("no model loaded")]
    NoModel,

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn corrupt(what: &'static str, message: impl Into<String>) -> Self {
        Error::Corrupt {
            what,
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
