use std::path::PathBuf;

use thiserror::Error;

use crate::config::ConfigError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} = {value} outside valid interval [{min}, {max}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("grid of {points} points is too coarse (need at least {min})")]
    Resolution { points: usize, min: usize },
    #[error("unknown channel {channel} (stream has {channel_count} channels)")]
    UnknownChannel { channel: u8, channel_count: u16 },
    #[error("fit failed: {reason} (residual {residual:.3e})")]
    Fit { reason: String, residual: f64 },
    #[error("malformed event file: {0}")]
    Format(String),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

impl Error {
    pub(crate) fn out_of_range(what: &'static str, value: f64, range: (f64, f64)) -> Self {
        Error::OutOfRange {
            what,
            value,
            min: range.0,
            max: range.1,
        }
    }
}
