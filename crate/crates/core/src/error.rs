use crate::tensor::ParamSet;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value produced by {0}")]
    Numerics(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unstable configuration: {0}")]
    Stability(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error("point outside the differentiable domain: {0}")]
    Domain(String),

    #[error("degenerate PDE: {0}")]
    DegeneratePde(String),

    #[error("ODE solver failed: {0}")]
    Solver(String),

    /// Training produced a non-finite loss. `last_finite` holds the
    /// parameters from the last epoch whose loss was finite, when one exists.
    #[error("training diverged at epoch {epoch}: {reason}")]
    Training {
        epoch: usize,
        reason: String,
        last_finite: Option<Box<ParamSet>>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// Config/contract problems exit with 2, numerical failures with 3.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Training { .. } | Error::Solver(_) | Error::Numerics(_) => 3,
            _ => 2,
        }
    }
}
