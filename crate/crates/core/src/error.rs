use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Wavelength outside the tabulated/valid range of a model.
    #[error("{what} `{name}` evaluated at {wavelength_nm} nm, outside its valid range [{min_nm}, {max_nm}] nm")]
    Range {
        what: &'static str,
        name: String,
        wavelength_nm: f64,
        min_nm: f64,
        max_nm: f64,
    },

    /// Physically meaningless argument (e.g. an idler longer than infinity).
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration value failed validation. `key` names the offending field.
    #[error("invalid config `{key}`: {message}")]
    Config { key: String, message: String },

    /// A file failed to parse. `location` is line/column or record number.
    #[error("parse error in {source_name} at {location}: {message}")]
    Parse {
        source_name: String,
        location: String,
        message: String,
    },

    #[error("stream is not time-sorted at event {index} ({previous} ps > {current} ps)")]
    Unsorted {
        index: usize,
        previous: u64,
        current: u64,
    },

    /// Time↔wavelength mapping is not one-to-one where it is needed.
    #[error("calibration is not one-to-one between arrival time difference and wavelength: {0}")]
    NonMonotone(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("spectrum has no nonzero density")]
    EmptySpectrum,

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse classification used by the CLI to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Runtime,
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Range { .. } | Error::Domain(_) | Error::Config { .. } | Error::Parse { .. } => {
                ErrorKind::Config
            }
            _ => ErrorKind::Runtime,
        }
    }

    /// Short stable tag for machine-parseable error lines.
    pub fn tag(&self) -> &'static str {
        match self {
            Error::Range { .. } => "range",
            Error::Domain(_) => "domain",
            Error::Config { .. } => "config",
            Error::Parse { .. } => "parse",
            Error::Unsorted { .. } => "unsorted",
            Error::NonMonotone(_) => "non_monotone",
            Error::Fit(_) => "fit",
            Error::EmptySpectrum => "empty_spectrum",
            Error::Io { .. } => "io",
        }
    }
}
