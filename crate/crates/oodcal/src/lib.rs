//! Out-of-domain (OOD) intent detection with Monte-Carlo dropout.
//!
//! `oodcal` trains a compact in-domain intent classifier (mean-pooled trainable
//! embeddings + a two-hidden-layer MLP) and detects out-of-domain queries by
//! calibrating softmax uncertainty: N stochastic forward passes with
//! inference-time dropout are averaged into a single probability vector, which
//! is scored by maximum softmax probability (MSP) or entropy against a
//! threshold calibrated on validation data. LOF and Gaussian
//! discriminant-analysis distance baselines, KL-to-uniform analysis, parameter
//! sweeps, and timing benchmarks round out the experiment suite.
//!
//! The crate is organized around one currency type, [`encoder::ProbDist`], a
//! probability vector over the in-domain classes:
//!
//! - [`data`] -- CLINC-format corpus loading, synthetic dataset generation,
//!   vocabulary construction.
//! - [`encoder`] -- the embedding-bag + MLP forward pass with per-layer
//!   inverted dropout hooks, checkpoint I/O.
//! - [`trainer`] -- cross-entropy loss, manual backpropagation, Adam, early
//!   stopping.
//! - [`bayes`] -- Monte-Carlo dropout: averaged stochastic forward passes with
//!   reproducible per-(utterance, pass) random streams.
//! - [`detect`] -- MSP/entropy scoring, LOF and GDA baselines, adaptive
//!   threshold calibration.
//! - [`eval`] -- detection metrics, KL-to-uniform summaries, parameter sweeps,
//!   confidence histograms, timing benchmarks.
//! - [`cli`] -- run configuration and the subcommand drivers behind the
//!   `oodcal` binary.
//!
//! See the `examples/` directory for one runnable program per capability, and
//! the `oodcal` binary for the same pipeline as subcommands.

pub mod bayes;
pub mod cli;
pub mod data;
pub mod detect;
pub mod encoder;
pub mod eval;
pub mod mat;
pub mod trainer;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// Dataset or vocabulary contents violate an invariant.
    #[error("data error: {0}")]
    Data(String),

    /// A required dataset split is empty.
    #[error("empty split: {0}")]
    EmptySplit(String),

    /// Run or generator configuration is invalid.
    #[error("config error: {0}")]
    Config(String),

    /// Tensor shapes are inconsistent.
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    /// A non-finite value surfaced mid-computation (diverged training or
    /// corrupted parameters).
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("detector mismatch: score from {score:?}, threshold for {threshold:?}")]
    DetectorMismatch {
        score: detect::DetectorKind,
        threshold: detect::DetectorKind,
    },

    /// Threshold calibration needs both IND and OOD examples.
    #[error("validation set contains only one of IND/OOD")]
    SingleClassValidation,

    #[error("covariance matrix is singular despite shrinkage")]
    SingularCovariance,
}

pub type Result<T> = std::result::Result<T, Error>;
