use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A user-supplied parameter violates a precondition. `field` names the
    /// offending parameter (dotted path for config blocks).
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("system of {sites} sites exceeds the limit of {limit} for {method}")]
    TooLarge {
        sites: usize,
        limit: usize,
        method: &'static str,
    },

    #[error("Krylov exponential did not reach tolerance {tol:e} (estimate {estimate:e}) after {halvings} step halvings")]
    KrylovNotConverged {
        tol: f64,
        estimate: f64,
        halvings: u32,
    },

    #[error("jump probability {probability:.4} per substep exceeds the bound {bound}")]
    JumpProbability { probability: f64, bound: f64 },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: &'static str },

    #[error("trace drifted to {trace} at t = {time} us")]
    TraceDrift { trace: f64, time: f64 },

    #[error("no staggered signal in the correlation map")]
    NoStaggeredSignal,

    #[error("need at least {needed} usable shells, found {found}")]
    InsufficientShells { needed: usize, found: usize },

    #[error("shell {0} missing from the correlation map")]
    MissingShell(usize),

    #[error("displacement class ({k}, {l}) has no site pairs")]
    EmptyClass { k: i64, l: i64 },

    #[error("degeneracy {count} exceeds the listing cap {cap} and sampling is disabled")]
    DegeneracyCap { count: u128, cap: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config parse error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input rather than by a numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Invalid { .. }
                | Error::DimensionMismatch { .. }
                | Error::TooLarge { .. }
                | Error::Config(_)
                | Error::DegeneracyCap { .. }
        )
    }
}
