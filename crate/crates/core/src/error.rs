use thiserror::Error;

/// Errors raised anywhere in the reconstruction stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("loss node must be a tracked scalar on this tape")]
    NotScalarLoss,
    #[error("mask target unreachable: {0}")]
    MaskUnreachable(String),
    #[error("autocalibration region is empty")]
    EmptyAcs,
    #[error("coil support is empty")]
    EmptySupport,
    #[error("data-consistency step diverged at step {step}: |w| = {norm:e} exceeds {limit:e}")]
    Divergence { step: usize, norm: f64, limit: f64 },
    #[error("non-finite loss at iteration {iter} (lr {lr:e}, grad norm {grad_norm:e})")]
    NonFiniteLoss {
        iter: usize,
        lr: f64,
        grad_norm: f64,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Stable machine-readable class name, used for CLI error reports.
    pub fn class(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::NonFinite(_) => "non_finite",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NotScalarLoss => "not_scalar_loss",
            Error::MaskUnreachable(_) => "mask_unreachable",
            Error::EmptyAcs => "empty_acs",
            Error::EmptySupport => "empty_support",
            Error::Divergence { .. } => "divergence",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Image(_) => "image",
        }
    }

    pub(crate) fn shape(op: &'static str, expected: impl std::fmt::Debug, got: impl std::fmt::Debug) -> Self {
        Error::ShapeMismatch {
            op,
            expected: format!("{expected:?}"),
            got: format!("{got:?}"),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
