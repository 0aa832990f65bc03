use thiserror::Error;

/// Failure modes shared by every module of the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{op} requires a square matrix, got {rows}x{cols}")]
    NotSquare {
        op: &'static str,
        rows: usize,
        cols: usize,
    },
    #[error("{op}: shape mismatch, expected {expected}, got {actual}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        actual: String,
    },
    #[error("matrix is singular to working precision at pivot {pivot} (|pivot| = {magnitude:e})")]
    Singular { pivot: usize, magnitude: f64 },
    #[error("{op}: result out of floating-point range")]
    Range { op: &'static str },
    #[error("non-finite entry in {what}")]
    NonFinite { what: &'static str },
    #[error("eigenvalue iteration did not converge within {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("unsupported exponent p = {p} (exact induced norms exist only for p in {{1, 2, inf}})")]
    UnsupportedExponent { p: f64 },
    #[error("time {t} is not a multiple of the spatial step 1/{n}")]
    OffGrid { t: f64, n: usize },
    #[error("atom at r = {r} is not on the grid k/{n}")]
    AtomOffGrid { r: f64, n: usize },
    #[error("state is outside the generator domain: boundary value {value:e} at s = 1")]
    OutsideDomain { value: f64 },
    #[error("operator too large: {cols} columns exceeds cap {cap}")]
    SizeCap { cols: usize, cap: usize },
    #[error("lambda = {lambda} lies within {distance:e} of the spectrum")]
    NearSpectrum { lambda: String, distance: f64 },
    #[error("Id - C R(lambda, A_-1) B is singular at lambda = {lambda} (margin {margin:e})")]
    FeedbackSingularAt { lambda: String, margin: f64 },
    #[error("discrete feedback operator Id - F is singular (margin {margin:e})")]
    FeedbackSingular { margin: f64 },
    #[error("boundary atom at r = 1 has weight {weight} within 1e-8 of 1: the boundary condition f(1) = Phi f degenerates and the operator is not a generator")]
    DegenerateBoundary { weight: String },
    #[error("all {trials} trial inputs had zero norm")]
    AllTrialsSkipped { trials: usize },
    #[error("{op} needs at least {needed} samples, got {got}")]
    TooFewSamples {
        op: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("invalid argument to {op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;
