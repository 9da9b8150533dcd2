use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("too few antennas: got {got}, need at least {need}")]
    TooFewAntennas { got: usize, need: usize },

    #[error("invalid index set: lag {missing} is not a difference of two indices")]
    InvalidIndexSet { missing: i64 },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("odd m = {0} is not supported by the closed-form circular difference set")]
    OddMUnsupported(usize),

    #[error("degenerate annular sector: inner and outer radius coincide")]
    DegenerateSector,

    #[error("m = {0} is too small for the circular radii recursion (need m >= 5)")]
    MTooSmall(usize),

    #[error("infeasible covering: slab solve failed at lag index {0}")]
    InfeasibleCovering(usize),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("negative amplitude {0} in a power measure")]
    NegativeAmplitude(f64),

    #[error("noise power must be positive")]
    ZeroNoise,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("no grid sample passed the support threshold")]
    EmptySupport,

    #[error("the retained samples cover the whole circle; support is degenerate")]
    DegenerateSupport,

    #[error("empty lambda ladder")]
    EmptyLadder,

    #[error("quadrature did not converge (last relative change {0:e})")]
    QuadratureNotConverged(f64),

    #[error("theta0 = {0} is not in the support of the measure")]
    Theta0NotInSupport(f64),

    #[error("solver did not converge after {iters} iterations")]
    NotConverged { iters: usize },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// Wrap `self` with the pipeline stage it came from.
    pub fn at(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Strip stage labels.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }
}
