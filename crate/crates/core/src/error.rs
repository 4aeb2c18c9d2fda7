use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("degenerate shape in {op}: {shape:?}")]
    DegenerateShape {
        op: &'static str,
        shape: (usize, usize),
    },
    #[error("{what} index {index} out of range (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },
    #[error("loss over zero rows in {0}")]
    EmptyLoss(&'static str),
    #[error("expected a 1x1 scalar, got {0:?}")]
    NotScalar((usize, usize)),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("labels must be 0 or 1, found {0}")]
    NonBinary(usize),
    #[error("non-finite loss at step {step}: main={main}, domain={domain:?}")]
    NonFiniteLoss {
        step: usize,
        main: f64,
        domain: Option<f64>,
    },
}

pub(crate) fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
