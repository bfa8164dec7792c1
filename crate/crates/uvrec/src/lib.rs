//! File formats, configuration, dataset persistence and experiment
//! orchestration for [`uvrec_core`], plus the `uvrec` command line.

// `!(x > y)` checks are written that way on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod manifest;
pub mod render;
pub mod tensor_io;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
