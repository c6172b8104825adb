use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the toolkit can report. Each variant maps to its own
/// process exit code through [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not an RSTF file: {0}")]
    Format(String),
    #[error("corrupt tensor file: {0}")]
    CorruptFile(String),
    #[error("unsupported dtype code {0:#04x}")]
    UnsupportedDtype(u8),
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("duplicate image_id {0:?}")]
    DuplicateId(String),
    #[error("class ids are not contiguous: {0}")]
    NonContiguousClasses(String),
    #[error("class name {name:?} maps to several class ids ({first} and {second})")]
    InconsistentClassName { name: String, first: usize, second: usize },
    #[error("tensor file missing for image {image_id:?}: {path}")]
    MissingTensor { image_id: String, path: PathBuf },
    #[error("shape mismatch in {context}: {message}")]
    ShapeMismatch { context: String, message: String },
    #[error("missing weight file {0}")]
    MissingWeights(PathBuf),
    #[error("non-finite value in {0}")]
    NonFiniteInput(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("class {class_id} has no images at layer {layer:?}")]
    EmptyClass { class_id: usize, layer: String },
    #[error("layer mismatch: expected {expected:?}, found {found:?}")]
    LayerMismatch { expected: String, found: String },
    #[error("unknown image {0:?}")]
    UnknownImage(String),
    #[error("no patterns in scope: {0}")]
    EmptyScope(String),
    #[error("neuron index {index} out of range for {channels} channels")]
    BadNeuron { index: usize, channels: usize },
    #[error("zero variance vector")]
    ZeroVariance,
    #[error("need at least 2 patterns, got {0}")]
    TooFewPatterns(usize),
    #[error("class {class_id} has {available} images, needs {required}")]
    ClassTooSmall {
        class_id: usize,
        available: usize,
        required: usize,
    },
    #[error("missing confidence for image {0:?}")]
    MissingConfidence(String),
    #[error("RDM labels differ")]
    LabelMismatch,
    #[error("degenerate RDM: upper triangle has zero variance")]
    DegenerateRdm,
    #[error("bad distance matrix: {0}")]
    BadDistanceMatrix(String),
    #[error("eigensolver did not converge after {0} sweeps")]
    NoConvergence(usize),
    #[error("labels contain fewer than two distinct classes")]
    DegenerateLabels,
    #[error("training diverged at iteration {0}")]
    Diverged(usize),
    #[error("class {class_id} out of range for {n_classes} classes")]
    BadClass { class_id: usize, n_classes: usize },
    #[error("no head for layer {0:?}")]
    MissingHead(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn shape(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            message: message.into(),
        }
    }

    /// Distinct nonzero process exit code for this error kind.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 10,
            Error::Format(_) => 11,
            Error::CorruptFile(_) => 12,
            Error::UnsupportedDtype(_) => 13,
            Error::InvalidTensor(_) => 14,
            Error::Parse { .. } => 15,
            Error::DuplicateId(_) => 20,
            Error::NonContiguousClasses(_) => 21,
            Error::InconsistentClassName { .. } => 22,
            Error::MissingTensor { .. } => 23,
            Error::ShapeMismatch { .. } => 30,
            Error::MissingWeights(_) => 31,
            Error::NonFiniteInput(_) => 32,
            Error::EmptyInput(_) => 40,
            Error::EmptyClass { .. } => 41,
            Error::LayerMismatch { .. } => 42,
            Error::UnknownImage(_) => 43,
            Error::EmptyScope(_) => 50,
            Error::BadNeuron { .. } => 51,
            Error::ZeroVariance => 60,
            Error::TooFewPatterns(_) => 61,
            Error::ClassTooSmall { .. } => 62,
            Error::MissingConfidence(_) => 63,
            Error::LabelMismatch => 64,
            Error::DegenerateRdm => 65,
            Error::BadDistanceMatrix(_) => 66,
            Error::NoConvergence(_) => 67,
            Error::DegenerateLabels => 70,
            Error::Diverged(_) => 71,
            Error::BadClass { .. } => 72,
            Error::MissingHead(_) => 73,
            Error::InvalidArgument(_) => 2,
        }
    }
}
