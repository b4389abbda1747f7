// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module.

use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
#[non_exhaustive]
pub enum Error {
    /// Operand dimensions do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// A softmax row had no finite entry.
    #[error("degenerate row: {0}")]
    DegenerateRow(String),

    /// Invalid configuration or out-of-range parameter.
    #[error("config error: {0}")]
    Config(String),

    /// An operation that needs at least one sample got none.
    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    /// A caption/non-caption pair is malformed.
    #[error("pairing error: {0}")]
    Pairing(String),

    /// A classifier fold lacks one of the two classes.
    #[error("class imbalance: {0}")]
    ClassImbalance(String),

    /// Artifacts that must come from the same model do not.
    #[error("provenance error: {0}")]
    Provenance(String),

    /// Filesystem failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed JSON input.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// CSV writer failure.
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
