use std::path::PathBuf;

/// Errors produced anywhere in the library.
///
/// Every variant maps onto a stable [`Error::category`] string so callers
/// (the CLI in particular) can classify failures without matching on text.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("unsupported primitive `{0}` in loss expression")]
    UnsupportedPrimitive(String),

    #[error("malformed loss expression: {0}")]
    Expression(String),

    #[error("csv has no header row (first line looks like data)")]
    MissingHeader,

    #[error("csv is missing column `{0}`")]
    MissingColumn(String),

    #[error("line {line}: column `{column}` is not a number: {cell:?}")]
    NonNumeric {
        line: u64,
        column: String,
        cell: String,
    },

    #[error("line {line}: column `{column}` is not finite: {cell:?}")]
    NonFiniteCell {
        line: u64,
        column: String,
        cell: String,
    },

    #[error("duplicate node: line {second_line} repeats the coordinates of line {first_line}")]
    DuplicateNode { first_line: u64, second_line: u64 },

    #[error("csv contains no data rows")]
    EmptyFile,

    #[error("line {line}: expected {expected} fields, found {found}")]
    RaggedRow {
        line: u64,
        expected: usize,
        found: usize,
    },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("degenerate field: {0} has zero standard deviation")]
    DegenerateField(String),

    #[error("k = {k} exceeds the number of source nodes ({available})")]
    NeighborCount { k: usize, available: usize },

    #[error("invalid interpolation method: {0}")]
    InvalidMethod(String),

    #[error("unsupported model schema version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u64, supported: u64 },

    #[error("invalid model file: {0}")]
    ModelFormat(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite output from {network}")]
    NetworkOutput { network: &'static str },

    #[error(
        "training diverged at epoch {epoch}: total={total}, lf_mse={lf_mse}, hf_mse={hf_mse}, l2={l2}"
    )]
    Diverged {
        epoch: usize,
        total: f64,
        lf_mse: f64,
        hf_mse: f64,
        l2: f64,
    },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable, machine-readable category name.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::NonFinite { .. } => "non-finite",
            Error::InvalidSpec(_) => "invalid-spec",
            Error::UnsupportedPrimitive(_) => "unsupported-primitive",
            Error::Expression(_) => "expression",
            Error::MissingHeader => "missing-header",
            Error::MissingColumn(_) => "missing-column",
            Error::NonNumeric { .. } => "non-numeric",
            Error::NonFiniteCell { .. } => "non-finite-cell",
            Error::DuplicateNode { .. } => "duplicate-node",
            Error::EmptyFile => "empty-file",
            Error::RaggedRow { .. } => "ragged-row",
            Error::InvalidDataset(_) => "invalid-dataset",
            Error::DegenerateField(_) => "degenerate-field",
            Error::NeighborCount { .. } => "neighbor-count",
            Error::InvalidMethod(_) => "invalid-method",
            Error::UnsupportedVersion { .. } => "unsupported-version",
            Error::ModelFormat(_) => "model-format",
            Error::Config(_) => "config",
            Error::NetworkOutput { .. } => "network-output",
            Error::Diverged { .. } => "diverged",
            Error::File { .. } | Error::Io(_) => "io",
        }
    }

    /// True for failures that happen while computing on otherwise valid
    /// inputs (as opposed to rejected inputs).
    pub fn is_runtime_abort(&self) -> bool {
        matches!(self, Error::Diverged { .. } | Error::NetworkOutput { .. })
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
