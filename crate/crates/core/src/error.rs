use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // interpolation kernels
    #[error("vector length mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("cannot take the angle of a zero-norm vector")]
    ZeroVector,
    #[error("vectors are antipodal (theta = {theta}); the spherical path is undefined")]
    AntipodalVectors { theta: f64 },
    #[error("non-finite value in {0}")]
    NonFiniteInput(String),
    #[error("interpolation ratio {0} is outside [0, 1]")]
    InvalidRatio(f64),
    #[error("invalid schedule parameters: {0}")]
    InvalidSchedule(String),

    // plans
    #[error("position {position} is out of range (maximum {max})")]
    PositionOutOfRange { position: usize, max: usize },
    #[error("position {0} appears more than once in the plan")]
    DuplicatePosition(usize),
    #[error("plan has no insertion positions")]
    EmptyPlan,
    #[error("{methods} methods given for {positions} positions")]
    MethodCountMismatch { positions: usize, methods: usize },
    #[error("alpha override for position {0}, which is not in the plan")]
    UnknownOverride(usize),
    #[error("plan was built for {plan} layers but the checkpoint has {checkpoint}")]
    PlanMismatch { plan: usize, checkpoint: usize },
    #[error("unknown interpolation method `{0}`")]
    UnknownMethod(String),
    #[error("unknown interpolation scope `{0}`")]
    UnknownScope(String),

    // container
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("tensors `{first}` and `{second}` have overlapping data regions")]
    OffsetOverlap { first: String, second: String },
    #[error("tensor `{name}` ends at byte {end} but only {available} data bytes exist")]
    TruncatedData { name: String, end: usize, available: usize },
    #[error("unsupported dtype `{0}`")]
    UnsupportedDtype(String),
    #[error("malformed config: {0}")]
    MalformedConfig(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("tensor `{name}`: {reason}")]
    InvalidTensor { name: String, reason: String },

    // layers
    #[error("layer {0} does not exist")]
    MissingLayer(usize),
    #[error("layer {index} is missing tensors: {}", missing.join(", "))]
    IncompleteBlock { index: usize, missing: Vec<String> },
    #[error("block indices are not contiguous from 0: {0:?}")]
    NonContiguousLayers(Vec<usize>),
    #[error("config declares {config} layers but tensors describe {tensors}")]
    LayerCountMismatch { config: usize, tensors: usize },
    #[error("flanking layers disagree on tensor set: {0}")]
    SuffixMismatch(String),
    #[error("shape mismatch for `{name}`: {left:?} vs {right:?}")]
    ShapeMismatch { name: String, left: Vec<usize>, right: Vec<usize> },
    #[error("dtype mismatch for `{0}` between flanking layers")]
    DtypeMismatch(String),

    // toy engine
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("token {token} is outside the vocabulary of {vocab}")]
    TokenOutOfRange { token: u32, vocab: usize },
    #[error("checkpoint cannot be executed: {0}")]
    IncompleteCheckpoint(String),
    #[error("layer {layer} is out of range for a {blocks}-block model")]
    LayerOutOfRange { layer: usize, blocks: usize },

    // diagnostics
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("standard deviation must be positive and finite, got {0}")]
    InvalidSigma(f64),
    #[error("reports were produced from different probes")]
    ProbeMismatch,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Stable variant name, used as the machine-greppable error prefix.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::ZeroVector => "ZeroVector",
            Error::AntipodalVectors { .. } => "AntipodalVectors",
            Error::NonFiniteInput(_) => "NonFiniteInput",
            Error::InvalidRatio(_) => "InvalidRatio",
            Error::InvalidSchedule(_) => "InvalidSchedule",
            Error::PositionOutOfRange { .. } => "PositionOutOfRange",
            Error::DuplicatePosition(_) => "DuplicatePosition",
            Error::EmptyPlan => "EmptyPlan",
            Error::MethodCountMismatch { .. } => "MethodCountMismatch",
            Error::UnknownOverride(_) => "UnknownOverride",
            Error::PlanMismatch { .. } => "PlanMismatch",
            Error::UnknownMethod(_) => "UnknownMethod",
            Error::UnknownScope(_) => "UnknownScope",
            Error::MalformedHeader(_) => "MalformedHeader",
            Error::OffsetOverlap { .. } => "OffsetOverlap",
            Error::TruncatedData { .. } => "TruncatedData",
            Error::UnsupportedDtype(_) => "UnsupportedDtype",
            Error::MalformedConfig(_) => "MalformedConfig",
            Error::Io { .. } => "IoFailure",
            Error::InvalidTensor { .. } => "InvalidTensor",
            Error::MissingLayer(_) => "MissingLayer",
            Error::IncompleteBlock { .. } => "IncompleteBlock",
            Error::NonContiguousLayers(_) => "NonContiguousLayers",
            Error::LayerCountMismatch { .. } => "LayerCountMismatch",
            Error::SuffixMismatch(_) => "SuffixMismatch",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::DtypeMismatch(_) => "DtypeMismatch",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::TokenOutOfRange { .. } => "TokenOutOfRange",
            Error::IncompleteCheckpoint(_) => "IncompleteCheckpoint",
            Error::LayerOutOfRange { .. } => "LayerOutOfRange",
            Error::EmptyInput(_) => "EmptyInput",
            Error::InvalidSigma(_) => "InvalidSigma",
            Error::ProbeMismatch => "ProbeMismatch",
        }
    }

    /// True for failures reading or writing files, including files whose
    /// container layout cannot be parsed.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::MalformedHeader(_)
                | Error::OffsetOverlap { .. }
                | Error::TruncatedData { .. }
                | Error::UnsupportedDtype(_)
                | Error::MalformedConfig(_)
        )
    }
}
