//! Sequence forecasting toolkit: a GRU encoder-decoder that translates an
//! observed feature sequence into the sequence of future action symbols,
//! plus a weakly supervised variant that labels future frames without
//! frame-level annotations.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: a minimal reverse-mode autodiff engine (f64, dynamic graph)
//! - [`nn`]: GRU cell, bidirectional encoder, additive attention, linear maps
//! - [`losses`]: cross-entropy, the uncertainty-weighted sequence loss, and
//!   a debiased Sinkhorn optimal-transport loss
//! - [`models`]: the forecasters, baselines, training loops, checkpoints
//! - [`data`]: synthetic activity-grammar corpora and JSONL ingestion
//! - [`metrics`]: BLEU-1/2, sequence-item accuracy, mAP, per-class accuracy
//! - [`cli`]: the `seqcast` binary (generate / train / eval / forecast)

pub mod cli;
pub mod data;
pub mod grad_check;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod rng;
pub mod tensor;

use thiserror::Error;

/// Crate-wide error type. The CLI maps these onto distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] tensor::TensorError),
    #[error("config error: {0}")]
    Config(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("lookup error: {0}")]
    Lookup(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for this error class (0 is success).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io(_) => 3,
            Error::Validation(_) | Error::Parse { .. } => 4,
            _ => 1,
        }
    }
}
