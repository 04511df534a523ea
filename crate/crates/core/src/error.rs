use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: axis {axis} out of range for rank {rank}")]
    AxisOutOfRange {
        op: &'static str,
        axis: usize,
        rank: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("npy parse error at byte {offset}: {reason}")]
    NpyParse { offset: usize, reason: String },

    #[error(
        "spectrum is not conjugate-symmetric (max deviation {max_dev:.3e}, tolerance {tol:.3e})"
    )]
    AsymmetricSpectrum { max_dev: f64, tol: f64 },

    #[error("training aborted at epoch {epoch}, batch {batch}: {reason}")]
    TrainingAborted {
        epoch: usize,
        batch: usize,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn npy(offset: usize, reason: impl Into<String>) -> Self {
        Error::NpyParse {
            offset,
            reason: reason.into(),
        }
    }
}
