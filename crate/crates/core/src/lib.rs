//! Variational Bayesian last-layer (VBLL) classification on frozen features.
//!
//! The crate is split along the pipeline:
//!
//! - [`data`]: loading, cleaning, stratified splitting and z-scoring of the
//!   three medical tabular datasets.
//! - [`features`]: the frozen feature vectors fed to the head (standardized
//!   raw features, a seeded random projection, or an external embedding file).
//! - [`head`]: the variational last layer itself, its ELBO loss and analytic
//!   gradients, and the predictive distribution.
//! - [`optim`]: Adam, KL annealing schedules and the training loop.
//! - [`metrics`]: accuracy/precision/recall/F1, AUC, NLL, Brier, ECE and
//!   reliability-diagram bins.
//! - [`experiment`] and [`svg`]: the baseline-vs-presets grid runner and its
//!   CSV/SVG artifacts.

pub mod data;
pub mod error;
pub mod experiment;
pub mod features;
pub mod head;
pub mod metrics;
pub mod optim;
pub mod reference;
pub mod svg;

pub use error::{Error, Result};
