//! Crate-wide error type.
//!
//! Each subsystem has its own enum; [`Error`] is the umbrella the public
//! API returns. [`Error::class`] buckets every variant into one of four
//! coarse classes that the CLI maps to distinct exit codes.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse error class, one exit code each.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad flags, bad config file, malformed spec input.
    Config,
    /// Filesystem / decode failures.
    Io,
    /// A caller or data violated an API contract.
    Contract,
    /// Training produced non-finite values.
    Divergence,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Config => 2,
            ErrorClass::Io => 3,
            ErrorClass::Contract => 4,
            ErrorClass::Divergence => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorClass::Config => "config",
            ErrorClass::Io => "io",
            ErrorClass::Contract => "contract",
            ErrorClass::Divergence => "divergence",
        }
    }
}

#[derive(Debug)]
pub enum Error {
    Numerics(NumericsError),
    Model(ModelError),
    Data(DataError),
    Metrics(MetricsError),
    Search(SearchError),
    Prune(PruneError),
    Config(String),
    Io(String),
}

#[derive(Debug)]
pub enum NumericsError {
    /// Element count does not match the shape product.
    ShapeDataMismatch { shape: Vec<usize>, len: usize },
    /// Two operand shapes are incompatible for the named op.
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    /// An op required a specific rank or axis length.
    BadShape { op: &'static str, shape: Vec<usize>, expected: String },
    /// backward() requires a scalar loss.
    NonScalarLoss { shape: Vec<usize> },
    /// backward() on a tape with no recorded operations.
    EmptyTape,
    /// A NaN/Inf was detected; `context` names where.
    NonFinite { context: String },
}

#[derive(Debug)]
pub enum ModelError {
    /// Encoding length does not match the layer count.
    EncodingLength { got: usize, expected: usize },
    /// An encoding entry was zero.
    EmptyLayer { layer: usize },
    /// Routing asked of a router whose experts are all masked off.
    NoActiveExpert { layer: usize },
    /// Input dimensions do not match the model config.
    InputShape { got: Vec<usize>, expected: Vec<usize> },
    /// Forward pass produced a NaN; names the first offending block.
    NanActivation { block: String },
    /// Checkpoint blob does not start with the expected magic.
    BadMagic,
    /// Checkpoint version this build cannot read.
    UnsupportedVersion { got: u32 },
    /// Checkpoint blob ends before the manifest says it should.
    Truncated { context: String },
    /// Manifest JSON failed to parse.
    Manifest(String),
    /// A stored tensor disagrees with the config-derived shape.
    TensorShape { name: String, got: Vec<usize>, expected: Vec<usize> },
    /// A required tensor is missing from the checkpoint.
    MissingTensor { name: String },
}

#[derive(Debug)]
pub enum DataError {
    /// DatasetSpec failed validation.
    BadSpec(String),
    /// The poorly-lit subset (or another required subset) is empty.
    EmptySubset { context: String },
    /// Ingest manifest has no data rows.
    EmptyManifest,
    /// Ingest manifest row failed to parse.
    MalformedRow { line: usize, message: String },
    /// Ingest row has a group outside 1..=10.
    BadGroup { line: usize, group: String },
    /// Ingest row names an unknown split.
    UnknownSplit { line: usize, token: String },
    /// A referenced image file is missing or unreadable.
    MissingFile { path: String, message: String },
    /// Image decoded to dimensions inconsistent with the dataset.
    ImageShape { path: String, got: (u32, u32), expected: (u32, u32) },
}

#[derive(Debug)]
pub enum MetricsError {
    /// Accuracy over an empty split is undefined.
    EmptySplit { split: String },
    /// A group with zero samples makes SPD undefined.
    EmptyGroup { group: u8 },
    /// The poorly-lit subset is empty, robustness undefined.
    EmptyLitSubset,
}

#[derive(Debug)]
pub enum SearchError {
    /// No encoding can satisfy the parameter-count bounds.
    InfeasibleBounds { min_params: u64, max_params: u64, lo: u64, hi: u64 },
    /// Rejection sampling gave up after the retry budget.
    SamplingExhausted { retries: usize },
    /// Surrogates need a minimum archive size.
    ArchiveTooSmall { got: usize, need: usize },
    /// Training one candidate produced non-finite loss.
    TrainingDiverged { encoding: String, context: String },
    /// A resumed state is inconsistent with the supplied config.
    ResumeMismatch(String),
}

#[derive(Debug)]
pub enum PruneError {
    /// Attempt to prune the only active expert of a layer.
    LastExpert { layer: usize, expert: usize },
    /// Target expert is already inactive.
    AlreadyPruned { layer: usize, expert: usize },
    /// Thresholds failed validation.
    BadThresholds(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Numerics(e) => write!(f, "{e}"),
            Error::Model(e) => write!(f, "{e}"),
            Error::Data(e) => write!(f, "{e}"),
            Error::Metrics(e) => write!(f, "{e}"),
            Error::Search(e) => write!(f, "{e}"),
            Error::Prune(e) => write!(f, "{e}"),
            Error::Config(m) => write!(f, "{m}"),
            Error::Io(m) => write!(f, "{m}"),
        }
    }
}

impl fmt::Display for NumericsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NumericsError::ShapeDataMismatch { shape, len } => {
                write!(f, "shape {shape:?} implies {} elements, data has {len}", shape.iter().product::<usize>())
            }
            NumericsError::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: incompatible shapes {lhs:?} and {rhs:?}")
            }
            NumericsError::BadShape { op, shape, expected } => {
                write!(f, "{op}: got shape {shape:?}, expected {expected}")
            }
            NumericsError::NonScalarLoss { shape } => {
                write!(f, "backward requires a scalar loss, got shape {shape:?}")
            }
            NumericsError::EmptyTape => write!(f, "backward on an empty tape"),
            NumericsError::NonFinite { context } => write!(f, "non-finite value in {context}"),
        }
    }
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::EncodingLength { got, expected } => {
                write!(f, "encoding has {got} entries, model has {expected} switch layers")
            }
            ModelError::EmptyLayer { layer } => write!(f, "layer {layer} has zero experts"),
            ModelError::NoActiveExpert { layer } => {
                write!(f, "router of layer {layer} has no active expert")
            }
            ModelError::InputShape { got, expected } => {
                write!(f, "input shape {got:?} does not match configured {expected:?}")
            }
            ModelError::NanActivation { block } => {
                write!(f, "non-finite activation first appeared in {block}")
            }
            ModelError::BadMagic => write!(f, "not a checkpoint file (bad magic)"),
            ModelError::UnsupportedVersion { got } => {
                write!(f, "unsupported checkpoint version {got}")
            }
            ModelError::Truncated { context } => write!(f, "checkpoint truncated: {context}"),
            ModelError::Manifest(m) => write!(f, "checkpoint manifest: {m}"),
            ModelError::TensorShape { name, got, expected } => {
                write!(f, "tensor {name}: stored shape {got:?}, expected {expected:?}")
            }
            ModelError::MissingTensor { name } => write!(f, "tensor {name} missing from checkpoint"),
        }
    }
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataError::BadSpec(m) => write!(f, "dataset spec: {m}"),
            DataError::EmptySubset { context } => write!(f, "empty subset: {context}"),
            DataError::EmptyManifest => write!(f, "manifest contains no data rows"),
            DataError::MalformedRow { line, message } => {
                write!(f, "manifest line {line}: {message}")
            }
            DataError::BadGroup { line, group } => {
                write!(f, "manifest line {line}: group {group} outside 1..=10")
            }
            DataError::UnknownSplit { line, token } => {
                write!(f, "manifest line {line}: unknown split {token:?}")
            }
            DataError::MissingFile { path, message } => write!(f, "{path}: {message}"),
            DataError::ImageShape { path, got, expected } => {
                write!(f, "{path}: image is {}x{}, dataset expects {}x{}", got.0, got.1, expected.0, expected.1)
            }
        }
    }
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::EmptySplit { split } => {
                write!(f, "accuracy undefined over empty split {split:?}")
            }
            MetricsError::EmptyGroup { group } => {
                write!(f, "SPD undefined: group {group} has no samples")
            }
            MetricsError::EmptyLitSubset => {
                write!(f, "robustness undefined: poorly-lit subset is empty")
            }
        }
    }
}

impl fmt::Display for SearchError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SearchError::InfeasibleBounds { min_params, max_params, lo, hi } => write!(
                f,
                "no encoding fits [{min_params}, {max_params}]: reachable counts span [{lo}, {hi}]"
            ),
            SearchError::SamplingExhausted { retries } => {
                write!(f, "constraint rejection sampling exhausted {retries} retries")
            }
            SearchError::ArchiveTooSmall { got, need } => {
                write!(f, "surrogates need an archive of >= {need}, got {got}")
            }
            SearchError::TrainingDiverged { encoding, context } => {
                write!(f, "training diverged for encoding {encoding}: {context}")
            }
            SearchError::ResumeMismatch(m) => write!(f, "resume state mismatch: {m}"),
        }
    }
}

impl fmt::Display for PruneError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PruneError::LastExpert { layer, expert } => {
                write!(f, "expert {expert} is the last active expert of layer {layer}")
            }
            PruneError::AlreadyPruned { layer, expert } => {
                write!(f, "expert {expert} of layer {layer} is already inactive")
            }
            PruneError::BadThresholds(m) => write!(f, "prune thresholds: {m}"),
        }
    }
}

impl std::error::Error for Error {}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Config,
            Error::Io(_) => ErrorClass::Io,
            Error::Data(e) => match e {
                DataError::BadSpec(_) => ErrorClass::Config,
                DataError::MissingFile { .. } => ErrorClass::Io,
                _ => ErrorClass::Config,
            },
            Error::Model(e) => match e {
                ModelError::BadMagic
                | ModelError::UnsupportedVersion { .. }
                | ModelError::Truncated { .. }
                | ModelError::Manifest(_) => ErrorClass::Io,
                ModelError::NanActivation { .. } => ErrorClass::Divergence,
                _ => ErrorClass::Contract,
            },
            Error::Numerics(e) => match e {
                NumericsError::NonFinite { .. } => ErrorClass::Divergence,
                _ => ErrorClass::Contract,
            },
            Error::Search(e) => match e {
                SearchError::TrainingDiverged { .. } => ErrorClass::Divergence,
                SearchError::InfeasibleBounds { .. } | SearchError::ResumeMismatch(_) => {
                    ErrorClass::Config
                }
                _ => ErrorClass::Contract,
            },
            Error::Metrics(_) | Error::Prune(_) => ErrorClass::Contract,
        }
    }

    pub fn io(e: std::io::Error, path: &std::path::Path) -> Error {
        Error::Io(format!("{}: {e}", path.display()))
    }
}

impl From<NumericsError> for Error {
    fn from(e: NumericsError) -> Self {
        Error::Numerics(e)
    }
}

impl From<ModelError> for Error {
    fn from(e: ModelError) -> Self {
        Error::Model(e)
    }
}

impl From<DataError> for Error {
    fn from(e: DataError) -> Self {
        Error::Data(e)
    }
}

impl From<MetricsError> for Error {
    fn from(e: MetricsError) -> Self {
        Error::Metrics(e)
    }
}

impl From<SearchError> for Error {
    fn from(e: SearchError) -> Self {
        Error::Search(e)
    }
}

impl From<PruneError> for Error {
    fn from(e: PruneError) -> Self {
        Error::Prune(e)
    }
}
