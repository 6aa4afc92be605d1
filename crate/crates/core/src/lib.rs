//! Streaming sparse regression toolkit.
//!
//! The centerpiece is [`spice::SpiceModel`], an online solver for the
//! square-root-penalized least-squares criterion that keeps only fixed-size
//! sufficient statistics (Gram matrix, cross moments, sample count) and so
//! runs in constant memory over unbounded streams. Around it:
//!
//! * [`features`] builds regressor vectors (linear or Laplace sinusoid bases
//!   with optional mean blocks),
//! * [`stats`] accumulates the sufficient statistics,
//! * [`blup`] re-derives the same predictions from the moment-model view,
//!   which doubles as an equivalence oracle,
//! * [`baselines`] provides cross-validated ridge and lasso reference fits,
//! * [`conformal`] wraps any point predictor in split-conformal intervals,
//! * [`verify`] checks fitted weights against brute-force subset oracles and
//!   finite-sample divergence bounds,
//! * [`datagen`] reproduces the heavy-tailed sparse synthetic benchmark,
//! * [`experiment`] drives the replicated comparison studies.

pub mod baselines;
pub mod blup;
pub mod conformal;
pub mod datagen;
mod error;
pub mod experiment;
pub mod features;
mod mat;
pub mod spice;
pub mod stats;
pub mod verify;

pub use error::Error;
pub use mat::Matrix;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
