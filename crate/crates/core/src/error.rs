use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Error type for every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid view labels: {0}")]
    Label(String),

    #[error("view nesting violated: {0}")]
    Nesting(String),

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("solver failed to converge at lambda index {lambda_index}: {message}")]
    Convergence {
        lambda_index: usize,
        message: String,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("stratification failure: {0}")]
    Stratification(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    MissingData(String),

    #[error("insufficient data: {0}")]
    Data(String),

    #[error("imputation failed: {0}")]
    Impute(String),

    #[error("parse error at line {line}{}: {message}", column.map(|c| format!(", column {c}")).unwrap_or_default())]
    Parse {
        line: usize,
        column: Option<usize>,
        message: String,
    },

    #[error("unsupported model file version: {0}")]
    Version(String),

    #[error("fold {fold}: {source}")]
    InFold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    /// Strips any fold annotations and returns the underlying error.
    pub fn root(&self) -> &Error {
        match self {
            Error::InFold { source, .. } => source.root(),
            e => e,
        }
    }

    /// Short machine-readable name of the error kind.
    pub fn kind(&self) -> &'static str {
        match self.root() {
            Error::Shape(_) => "shape",
            Error::Label(_) => "label",
            Error::Nesting(_) => "nesting",
            Error::Numeric(_) => "numeric",
            Error::Convergence { .. } => "convergence",
            Error::Degenerate(_) => "degenerate",
            Error::Stratification(_) => "stratification",
            Error::Config(_) => "config",
            Error::MissingData(_) => "missing_data",
            Error::Data(_) => "data",
            Error::Impute(_) => "impute",
            Error::Parse { .. } => "parse",
            Error::Version(_) => "version",
            Error::InFold { .. } => unreachable!(),
            Error::Io(_) => "io",
            Error::Serde(_) => "serde",
        }
    }

    pub(crate) fn in_fold(self, fold: usize) -> Error {
        Error::InFold {
            fold,
            source: Box::new(self),
        }
    }
}
