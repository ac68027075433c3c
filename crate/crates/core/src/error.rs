//! Error type shared by all solver modules.
//!
//! Every variant carries an `op` string of the form `module.operation`
//! identifying where the failure was detected, so front ends can report
//! the offending module without unwinding context manually.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch for `{field}`: expected {expected}, got {got}")]
    DimensionMismatch {
        op: &'static str,
        field: &'static str,
        expected: String,
        got: String,
    },

    #[error("{op}: `{field}` must be symmetric positive definite (min eigenvalue {min_eig:.3e})")]
    NotPositiveDefinite {
        op: &'static str,
        field: &'static str,
        min_eig: f64,
    },

    #[error(
        "{op}: K is not coercive: min eigenvalue of K*K is {min_eig:.3e}, floor {floor:.3e}"
    )]
    NotCoercive {
        op: &'static str,
        min_eig: f64,
        floor: f64,
    },

    #[error("{op}: invalid parameter: {what}")]
    InvalidParameter { op: &'static str, what: String },

    #[error("{op}: the pair (A, B) is not stabilizable (Hautus test failed)")]
    NotStabilizable { op: &'static str },

    #[error("{op}: the pair (A, C) is not detectable (Hautus test failed)")]
    NotDetectable { op: &'static str },

    #[error(
        "{op}: step size too large: half-step check error {error:.3e} exceeds tolerance {tol:.3e} at t = {t}"
    )]
    StepSizeTooLarge {
        op: &'static str,
        t: f64,
        error: f64,
        tol: f64,
    },

    #[error("{op}: non-finite value encountered at t = {t}")]
    NonFiniteEncountered { op: &'static str, t: f64 },

    #[error("{op}: Newton iteration stalled with residual {residual:.3e}")]
    NewtonStalled { op: &'static str, residual: f64 },

    #[error("{op}: KKT system is rank-deficient (sigma_min/sigma_max = {ratio:.3e})")]
    SingularKkt { op: &'static str, ratio: f64 },

    #[error("{op}: no exponential decay to fit (beta = {beta:.3e})")]
    InsufficientDecay { op: &'static str, beta: f64 },

    #[error("{op}: structural hypotheses fail: {what}")]
    HypothesesFail { op: &'static str, what: String },

    #[error("{op}: generation exhausted after {attempts} rejection attempts")]
    GenerationExhausted { op: &'static str, attempts: usize },
}

impl Error {
    /// True for errors caused by malformed input rather than by numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch { .. }
                | Error::NotPositiveDefinite { .. }
                | Error::NotCoercive { .. }
                | Error::InvalidParameter { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
