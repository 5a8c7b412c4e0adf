use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },
    #[error("kernel size must be odd, got {0}")]
    EvenKernel(usize),
    #[error("backward requires a scalar output, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("variable does not belong to this tape")]
    ForeignVar,
    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },
    #[error("invalid moment spec: {0}")]
    InvalidSpec(String),
    #[error("numerically singular factorization: {0}")]
    Singular(String),
    #[error("unsupported derivative (p, q) = ({p}, {q}) for {layer}")]
    UnsupportedDerivative {
        p: usize,
        q: usize,
        layer: &'static str,
    },
    #[error("reference norm is zero")]
    ZeroReference,
    #[error("empty batch")]
    EmptyBatch,
    #[error("simulation blew up in trajectory {trajectory} at step {step}")]
    BlowUp { trajectory: usize, step: usize },
    #[error("loss became non-finite at epoch {epoch}")]
    NanLoss { epoch: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFinite { .. }
            | Error::BlowUp { .. }
            | Error::NanLoss { .. }
            | Error::Singular(_) => 3,
            _ => 2,
        }
    }
}
