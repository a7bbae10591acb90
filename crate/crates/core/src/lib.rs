//! Boosted nonparametric hazard estimation for survival data with
//! time-varying covariates, and the real-time mortality-warning pipeline
//! built on it.
//!
//! - [`data`]: trajectories, epochs and their subdivision on a time grid.
//! - [`ingest`]: CSV timelines to trajectories (forward fill, truncation, patient split).
//! - [`boost`]: the tree-boosted hazard estimator and its cross-validation.
//! - [`cox`]: linear time-varying Cox baseline.
//! - [`flag`]: risk paths and the instant / sustained-window flagging rules.
//! - [`eval`]: threshold sweeps, ROC and precision-recall areas.
//! - [`simulate`]: synthetic stays with known hazards.
//! - [`persist`]: versioned text model files.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod boost;
pub mod cox;
pub mod data;
mod error;
pub mod eval;
pub mod flag;
pub mod ingest;
pub mod persist;
pub mod simulate;

pub use error::{Error, Result};
