//! Desk-scale RGB-thermal tracking toolkit.
//!
//! Everything runs on plain `f64` buffers with deterministic, seedable
//! initialization — small enough to study on a laptop, strict enough to
//! trust: numeric kernels are validated against naive reference
//! implementations, analytic gradients against finite differences, and the
//! template-update policy against an independent simulator.

use std::fmt;
use std::io;

pub mod backbone;
pub mod bbox;
pub mod config;
pub mod eval;
pub mod fusion;
pub mod head;
pub mod loss;
pub mod modality;
pub mod pnm;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod tracker;
pub mod update;
pub mod verify;

/// Crate-wide error for the model pipeline and its file formats.
#[derive(Debug)]
pub enum Error {
    /// A tensor operation failed (shape mismatch, non-finite value, ...).
    Tensor(tensor::TensorError),
    /// An image failed to decode.
    Image(pnm::PnmError),
    /// A metrics computation or benchmark file failed.
    Eval(eval::EvalError),
    /// A configuration value violates its documented constraints.
    Config(String),
    /// Input data violates a contract (degenerate box, bad layout, ...).
    Data(String),
    /// Filesystem failure, annotated with the path involved.
    Io { path: std::path::PathBuf, source: io::Error },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Tensor(e) => write!(f, "tensor: {e}"),
            Error::Image(e) => write!(f, "image: {e}"),
            Error::Eval(e) => write!(f, "eval: {e}"),
            Error::Config(m) => write!(f, "config: {m}"),
            Error::Data(m) => write!(f, "{m}"),
            Error::Io { path, source } => write!(f, "{}: {source}", path.display()),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Tensor(e) => Some(e),
            Error::Image(e) => Some(e),
            Error::Eval(e) => Some(e),
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl From<tensor::TensorError> for Error {
    fn from(e: tensor::TensorError) -> Self {
        Error::Tensor(e)
    }
}

impl From<pnm::PnmError> for Error {
    fn from(e: pnm::PnmError) -> Self {
        Error::Image(e)
    }
}

impl From<eval::EvalError> for Error {
    fn from(e: eval::EvalError) -> Self {
        Error::Eval(e)
    }
}

impl Error {
    /// Wraps an I/O error with the path it happened on.
    pub fn io(path: impl Into<std::path::PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
