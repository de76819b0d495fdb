//! Metric learning with an angular triplet loss and an adversarial camera
//! discriminator, built on a small reverse-mode autodiff engine.
//!
//! The crate is organised bottom-up:
//!
//! - [`autodiff`]: dense `f64` tensors and a define-by-run tape.
//! - [`nn`]: fully-connected layers, dropout, Adam, step-decay schedules and
//!   the binary checkpoint format.
//! - [`losses`]: distance matrices, PK sampling, batch-hard mining and the
//!   Euclidean, cosine and angular triplet losses.
//! - [`adversarial`]: the camera discriminator, label-smoothed camera loss and
//!   the alternating extractor/discriminator trainer.
//! - [`data`]: synthetic multi-camera datasets, IDX ingestion, augmentation
//!   and query/gallery splitting.
//! - [`eval`]: single-query retrieval metrics (mAP, CMC) and the camera
//!   leakage probe.
//! - [`experiment`]: JSON-described runs tying the pieces together.
//! - [`gradsuite`]: the finite-difference verification suite for every loss.

// Validation is written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversarial;
pub mod autodiff;
pub mod data;
mod error;
pub mod eval;
pub mod experiment;
pub mod gradsuite;
pub mod losses;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
