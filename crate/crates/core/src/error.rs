use thiserror::Error;

use crate::model::ValidationReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid instance: {0}")]
    Invalid(ValidationReport),

    #[error("drift bound violated at j={j}: need {lo} < b < {hi}, got {b}")]
    DriftBound { j: usize, b: f64, lo: f64, hi: f64 },

    #[error("negative killing rate at j={j}: {k}")]
    NegativeKilling { j: usize, k: f64 },

    #[error("step h={h} too large: admissible bound is h < {bound}")]
    StepTooLarge { h: f64, bound: f64 },

    #[error("no anchor quantile separates the pmf")]
    DegenerateAnchor,

    #[error("no split index brackets x0")]
    NoBracket,

    #[error("singular linear system")]
    Singular,

    #[error("intensity at state {j} must be positive, got {value}")]
    NonPositiveIntensity { j: usize, value: f64 },

    #[error("{what}: residual {residual:.3e} exceeds tolerance {tol:.1e}")]
    Residual { what: &'static str, residual: f64, tol: f64 },

    #[error("solver did not converge: {reason} (residual trace tail {trace:?})")]
    NonConvergence { reason: String, trace: Vec<f64> },

    #[error("law mismatch: {0}")]
    Law(String),

    #[error("atomization at N={n} produced {atoms} atoms; need N >= {min_n}")]
    TooFewAtoms { n: u32, atoms: usize, min_n: u32 },

    #[error("invalid continuous spec: {0}")]
    Spec(String),

    #[error("hypothesis check failed: {0}")]
    Hypothesis(String),
}

impl Error {
    /// True for errors caused by bad input rather than by a numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Invalid(_)
                | Error::DriftBound { .. }
                | Error::NegativeKilling { .. }
                | Error::StepTooLarge { .. }
                | Error::DegenerateAnchor
                | Error::NonPositiveIntensity { .. }
                | Error::Law(_)
                | Error::TooFewAtoms { .. }
                | Error::Spec(_)
                | Error::Hypothesis(_)
        )
    }
}
