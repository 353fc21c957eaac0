use thiserror::Error;

/// Errors raised by the numerical kernels.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("target density is not positive at nodes {nodes:?}")]
    PositivityViolation { nodes: Vec<usize> },

    #[error("ratio field below floor {floor:e} at nodes {nodes:?}")]
    DriftSingularity { floor: f64, nodes: Vec<usize> },

    #[error("discriminator saturated (D >= 1 - {ceiling:e}) at indices {indices:?}")]
    DiscriminatorSaturation { ceiling: f64, indices: Vec<usize> },

    #[error("transport map is not monotone: 1 + eps*xi' <= 0 at nodes {nodes:?}")]
    InvalidTransport { nodes: Vec<usize> },

    #[error("truncation window too narrow: captured mass {mass:.6}")]
    WindowTooNarrow { mass: f64 },

    #[error("resolvent did not converge in {iterations} iterations (bracket gap {bracket_gap:e})")]
    NonConvergence { iterations: usize, bracket_gap: f64 },

    #[error("monotone bracket inverted by {excess:e} at iteration {iteration}")]
    MonotonicityViolation { iteration: usize, excess: f64 },

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<FlowError>,
    },

    #[error("unsupported dimension {0}")]
    UnsupportedDimension(usize),

    #[error("degenerate ensemble: {0}")]
    DegenerateEnsemble(String),

    #[error("non-finite value encountered: {0}")]
    Divergence(String),
}

impl FlowError {
    pub(crate) fn at_step(self, step: usize) -> Self {
        FlowError::AtStep {
            step,
            source: Box::new(self),
        }
    }

    /// Innermost error with any step annotations removed.
    pub fn root(&self) -> &FlowError {
        match self {
            FlowError::AtStep { source, .. } => source.root(),
            other => other,
        }
    }

    /// Step index attached by the time stepper, if any.
    pub fn step(&self) -> Option<usize> {
        match self {
            FlowError::AtStep { step, .. } => Some(*step),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, FlowError>;
