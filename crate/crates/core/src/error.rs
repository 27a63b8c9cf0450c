use thiserror::Error;

/// Errors raised while evaluating, differentiating or optimizing a problem.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum OcpError {
    #[error("invalid dimensions: {0}")]
    InvalidDims(String),

    #[error("dimension mismatch in {what}{}: expected {expected}, got {got}", stage_suffix(*.stage))]
    DimensionMismatch {
        what: &'static str,
        stage: Option<usize>,
        expected: usize,
        got: usize,
    },

    #[error("numerical blow-up at stage {stage} (non-finite value from {origin})")]
    NonFinite { stage: usize, origin: &'static str },

    #[error("curvature requires dd_* oracles or FD problem")]
    MissingSecondOrder,

    #[error("Hessian asymmetry {defect:e} at ({row}, {col}) exceeds tolerance {tolerance:e}")]
    Asymmetric {
        row: usize,
        col: usize,
        defect: f64,
        tolerance: f64,
    },

    #[error("regularized Hessian is not positive definite")]
    LinearSolveFailure,

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },
}

fn stage_suffix(stage: Option<usize>) -> String {
    match stage {
        Some(k) => format!(" at stage {k}"),
        None => String::new(),
    }
}

impl OcpError {
    pub(crate) fn param(field: impl Into<String>, reason: impl Into<String>) -> Self {
        OcpError::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, OcpError>;
