//! Multi-task bi-GRU models for target-dependent sentiment classification.
//!
//! An auxiliary whole-passage classifier pools bidirectional GRU states over
//! every position; the main target-level classifier reads both the auxiliary
//! GRUs and its own GRUs over the left and right contexts of the target.

pub mod cli;
pub mod datasets;
pub mod embeddings;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod models;
pub mod numerics;
pub mod recurrent;
pub mod sensitivity;
pub mod training;

pub use error::{Error, Result};
