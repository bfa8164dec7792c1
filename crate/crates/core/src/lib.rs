#![no_std]
#![cfg_attr(docsrs, feature(doc_cfg))]
// `!(x > y)` checks are written that way on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Interferometric reconstruction core.
//!
//! Everything here is pure computation over heap buffers: no files, no
//! clocks, no threads. The `uvrec` crate layers IO, configuration and the
//! command line on top.
//!
//! The pipeline, front to back:
//!
//! - [`skysim`] builds synthetic skies, uv coverage and sparse visibility.
//! - [`imaging`] images visibility grids, runs Högbom CLEAN and scores maps.
//! - [`modality`] expands visibility into an image-form feature map and a
//!   text prompt, and encodes both with frozen token encoders.
//! - [`fusion`] encodes the visibility query, pools the knowledge tokens
//!   and fuses them with cross-modal attention.
//! - [`reconstructor`] is the FiLM-conditioned neural field, the weighted
//!   spectral loss and the training loop.
//!
//! [`numerics`] provides the tensors, the gradient tape, FFTs and Adam that
//! the rest is built on.
//!
//! # Features
//! - `std`: enables runtime CPU feature detection in the matrix kernels.

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod error;
pub mod fusion;
pub mod imaging;
pub mod modality;
pub mod numerics;
pub mod reconstructor;
pub mod skysim;

pub use error::{Error, Result};
pub use num_complex::Complex64;
