use thiserror::Error;

use crate::nn::Mlp;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty mesh")]
    EmptyMesh,

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("rank-deficient correspondence")]
    RankDeficientCorrespondence,

    #[error("isolated vertex {0}")]
    IsolatedVertex(usize),

    #[error("parameter out of range: {value} not in [{lo}, {hi}]")]
    ParameterOutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("invalid knot vector: {0}")]
    InvalidKnots(String),

    #[error("underdetermined fit: {0}")]
    UnderdeterminedFit(String),

    #[error("degenerate kernel configuration (condition estimate {0:.3e})")]
    DegenerateKernels(f64),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("divergence at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize, last_finite: Box<Mlp> },

    #[error("actuation out of range: component {index} = {value}")]
    ActuationOutOfRange { index: usize, value: f64 },

    #[error("capture failed: every marker dropped after {0} attempts")]
    CaptureFailed(usize),

    #[error("baseline requires complete frames")]
    NoCompleteFrames,

    #[error("no observed markers in training frames")]
    NoObservations,

    #[error("fit failed for sample {index}: {source}")]
    SampleFit {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn mismatch(what: &'static str, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch { what, expected, got }
    }
}
