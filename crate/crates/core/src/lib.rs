// SPDX-License-Identifier: MIT OR Apache-2.0

//! Caption-sensitive attention intervention on a toy vision-prefix decoder.
//!
//! Pipeline: measure how a caption-style query shifts last-token visual
//! attention ([`analysis`]), pick the caption query with the smallest shift
//! ([`search`]), probe every head for caption sensitivity and derive shift
//! vectors ([`probe`]), then add those shifts to the top heads at inference
//! ([`intervention`]). [`harness`] builds planted models and corpora where
//! the right answer is known.

pub mod analysis;
pub mod config;
pub mod error;
pub mod grid;
pub mod harness;
pub mod intervention;
pub mod manifest;
pub mod model;
pub mod pipeline;
pub mod probe;
pub mod report;
pub mod search;
pub mod tensor;

pub use error::{Error, Result};
pub use grid::{HeadGrid, HeadId};
