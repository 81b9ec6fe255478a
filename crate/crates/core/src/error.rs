use thiserror::Error;

/// Errors raised by the laboratory.
///
/// The variants are grouped by how a caller (the CLI in particular) should react:
/// usage problems, numerical failures, and I/O.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("no real spectral bound: eigenvalue of maximal real part is {re} + {im}i")]
    NoRealSpectralBound { re: f64, im: f64 },

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    Solver { iterations: usize, residual: f64 },

    #[error("lambda = {lambda} lies in the numerical spectrum (condition estimate {condition:e})")]
    InSpectrum { lambda: f64, condition: f64 },

    #[error("no power law: fit residual {residual:.4} exceeds {threshold:.4}")]
    NoPowerLaw { residual: f64, threshold: f64 },

    #[error("no pole seen: fitted growth exponent {exponent:.4}")]
    NoPole { exponent: f64 },

    #[error("numerical rank: {0}")]
    Rank(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl LabError {
    /// True for failures of the numerics (as opposed to bad input or I/O).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            LabError::NoRealSpectralBound { .. }
                | LabError::Solver { .. }
                | LabError::InSpectrum { .. }
                | LabError::NoPowerLaw { .. }
                | LabError::NoPole { .. }
                | LabError::Rank(_)
        )
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        LabError::Domain(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        LabError::Validation(msg.into())
    }

    pub(crate) fn precondition(msg: impl Into<String>) -> Self {
        LabError::Precondition(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
