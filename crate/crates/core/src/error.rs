use thiserror::Error;

/// Errors raised by model construction, integration and the operator oracle.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("Pauli index {0} out of range (expected 1..=3)")]
    PauliIndex(usize),

    #[error("commutator for row {row} has nonzero identity component {value:e}")]
    IdentityComponent { row: usize, value: f64 },

    #[error("degenerate coupling: output bias vector is zero")]
    DegenerateCoupling,

    #[error("resolvent (sI - A) is singular at s = {re} + {im}i")]
    SingularResolvent { re: f64, im: f64 },

    #[error("dimension mismatch in {context}: {detail}")]
    Dimension { context: &'static str, detail: String },

    #[error("matrix D D^T is singular or ill-conditioned (condition number {cond:e})")]
    SingularMeasurement { cond: f64 },

    #[error("non-finite value at step {step} (t = {time}) in {context}")]
    NonFinite { context: &'static str, step: usize, time: f64 },

    #[error("time grid is invalid: {0}")]
    Grid(String),

    #[error("two-point law infeasible: |mean| = {mean} exceeds |C_p| = {norm}")]
    InfeasibleMoments { mean: f64, norm: f64 },

    #[error("Fock truncation leakage {leakage:e} exceeds {threshold:e} at t = {time}; increase n_trunc")]
    Leakage { leakage: f64, threshold: f64, time: f64 },

    #[error("trace drift {drift:e} exceeds tolerance at t = {time}")]
    TraceDrift { drift: f64, time: f64 },

    #[error("expectation value has imaginary part {imag:e}")]
    ComplexExpectation { imag: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { field, reason: reason.into() }
}
