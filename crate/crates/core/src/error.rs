use thiserror::Error;

use crate::coupling::MPNet;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("integration blew up at step {step}: non-finite state")]
    BlowUp { step: usize },

    /// Adam received a non-finite gradient entry.
    #[error("non-finite gradient at optimizer step {step}")]
    NonFiniteGradient { step: u64 },

    /// Training produced a non-finite loss; `checkpoint` is the last net with a finite loss.
    #[error("training aborted at epoch {epoch}: non-finite loss")]
    TrainingAborted {
        epoch: usize,
        checkpoint: Box<MPNet>,
    },

    #[error("unsupported gradient: {0}")]
    UnsupportedGradient(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("parse error at `{field}`: {message}")]
    Parse { field: String, message: String },

    #[error("field is not divergence-free: |div| = {divergence:e} at {point:?}")]
    NotDivergenceFree { point: Vec<f64>, divergence: f64 },

    #[error("decomposition residual {residual:e} exceeds tolerance {tol:e} at {point:?}")]
    Decomposition {
        point: Vec<f64>,
        residual: f64,
        tol: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn parse(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            got,
        })
    }
}
