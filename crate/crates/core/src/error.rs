use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("binomial C({n}, {k}) is undefined: k exceeds n")]
    InvalidBinomial { n: usize, k: usize },

    #[error("log-factorial table holds {capacity} entries, {requested} requested")]
    TableTooSmall { requested: usize, capacity: usize },

    #[error("terminating 2F1 needs nonpositive integer numerator parameters, got a={a}, b={b}")]
    NonTerminatingSeries { a: i64, b: i64 },

    #[error(
        "2F1 denominator parameter c={c} hits zero at term {index} before the series terminates"
    )]
    DegenerateDenominator { c: f64, index: usize },

    #[error("Bessel argument {0} is negative")]
    NegativeArgument(f64),

    #[error("Bessel argument {0} is beyond the overflow guard")]
    BesselOverflow(f64),

    #[error("invalid {name}: {value} ({reason})")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("index out of range: {0}")]
    InvalidIndex(String),

    #[error(
        "truncation cap {cap} reached with residual mass {residual:e} above tolerance {tol:e}"
    )]
    TruncationCap { cap: usize, residual: f64, tol: f64 },

    #[error("closed-form count probability is singular at eta={0}; use the exact endpoint kernel")]
    EndpointEta(f64),

    #[error("kernel covers n <= {kernel_n_max} but the state needs n <= {state_n_max}")]
    TruncationMismatch {
        kernel_n_max: usize,
        state_n_max: usize,
    },

    #[error("Fano factor is undefined for the vacuum (zero mean)")]
    ZeroMean,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn param(name: &'static str, value: f64, reason: &'static str) -> Self {
        Error::InvalidParameter {
            name,
            value,
            reason,
        }
    }
}
