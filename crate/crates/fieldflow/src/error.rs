//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("unsupported dimension {0}: only d = 1 and d = 2 lattices are implemented")]
    UnsupportedDimension(usize),

    #[error("side length {side} is not an integer multiple of spacing {eps} (ratio {ratio})")]
    NonIntegralSpacing { side: f64, eps: f64, ratio: f64 },

    #[error("rejected configuration: {0}")]
    InvalidParameter(String),

    #[error("geometry mismatch: field has {found} sites, operator expects {expected}")]
    GeometryMismatch { found: usize, expected: usize },

    #[error("invalid covariance: multiplier is {value} at mode {mode}")]
    InvalidCovariance { mode: usize, value: f64 },

    #[error("time {t} outside the schedule range [0, {tau}]")]
    TimeOutOfRange { t: f64, tau: f64 },

    #[error("degenerate estimate: importance weights carry no information")]
    DegenerateEstimate,

    #[error("dense operator path limited to {cap} sites, lattice has {sites}")]
    DenseCapExceeded { sites: usize, cap: usize },

    #[error("flow step rejected at t = {t}: increment norm {increment:.3e} exceeds {limit:.3e}")]
    StepRejected { t: f64, increment: f64, limit: f64 },

    #[error("eigensolve failed: {0}")]
    EigensolveFailure(String),

    #[error("MALA acceptance rate {rate:.4} is below 1%; reduce the step size")]
    StepSizeTooLarge { rate: f64 },

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("test function value {value} escapes the divergence domain [{lo}, {hi}]")]
    DomainEscape { value: f64, lo: f64, hi: f64 },

    #[error("degenerate half-space threshold: empirical mass is {mass}")]
    DegenerateThreshold { mass: f64 },

    #[error("imaginary residue {residue:.3e} exceeds tolerance {limit:.3e} after spectral multiply")]
    ImaginaryResidue { residue: f64, limit: f64 },

    #[error("grid too coarse: relative eigenvalue drift {drift:.3e} exceeds {tol:.3e} under refinement")]
    GridTooCoarse { drift: f64, tol: f64 },

    #[error("ensemble file corrupt: {0}")]
    CorruptEnsemble(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("metadata error: {0}")]
    Metadata(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FlowError>;
