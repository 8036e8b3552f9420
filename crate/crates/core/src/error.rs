use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the stack. Variants map onto the CLI exit-code
/// contract: [`Error::is_validation`] errors are integrity/config problems,
/// the rest are runtime failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("invalid track: {0}")]
    InvalidTrack(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("channel collision: servo and motor both on channel {0}")]
    ChannelCollision(u8),

    #[error("pulse {pulse_us} us exceeds PWM period {period_us} us")]
    PulseExceedsPeriod { pulse_us: f64, period_us: f64 },

    #[error("{path}: {msg}")]
    Dataset { path: PathBuf, msg: String },

    #[error("no records found in {0}")]
    NoRecords(PathBuf),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },

    #[error("vehicle is {offset_m:.3} m from the centerline, beyond the expert's {limit_m:.3} m range")]
    TooFarFromTrack { offset_m: f64, limit_m: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn dataset(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Dataset {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// True for errors caused by bad inputs (config, data integrity) rather
    /// than by the environment.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io { .. } | Error::NonFiniteLoss { .. } | Error::TooFarFromTrack { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
