use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("group mismatch: element of {found} used with group {expected}")]
    GroupMismatch { expected: String, found: String },

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("group order {order} exceeds the enumeration cap {cap}; use sampling")]
    OrderTooLarge { order: String, cap: usize },

    #[error("cannot draw {requested} distinct elements from a group of order {order}")]
    SampleTooLarge { requested: usize, order: String },

    #[error("invalid group element: {0}")]
    InvalidElement(String),

    #[error("invalid group: {0}")]
    InvalidGroup(String),

    #[error("output action {action} is not valid for {kind} explanations")]
    ActionMismatch { action: &'static str, kind: &'static str },

    #[error("{op}: dimension mismatch ({detail})")]
    DimMismatch { op: &'static str, detail: String },

    #[error("backward requires a scalar output, got dims {0:?}")]
    NonScalarOutput(Vec<usize>),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("model {kind} has no tap `{tap}`")]
    MissingTap { kind: &'static str, tap: &'static str },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("conjugate gradient did not converge after {iterations} iterations (residual {residual:e})")]
    CgNotConverged { iterations: usize, residual: f64 },

    #[error("SMO did not converge after {iterations} iterations (gap {gap:e})")]
    SmoNotConverged { iterations: usize, gap: f64 },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, with all context layers stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}
