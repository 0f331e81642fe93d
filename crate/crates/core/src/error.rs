use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error{}: {message}", location(*.row, .column.as_deref()))]
    Parse {
        row: Option<usize>,
        column: Option<String>,
        message: String,
    },

    #[error("empty input")]
    EmptyInput,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate target{}: {reason}", .target.as_ref().map(|t| format!(" '{t}'")).unwrap_or_default())]
    DegenerateTarget {
        target: Option<String>,
        reason: String,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported learner for task: {0}")]
    UnsupportedTask(String),

    #[error("all candidate estimators failed: {}", .failures.iter().map(|(n, e)| format!("{n}: {e}")).collect::<Vec<_>>().join("; "))]
    MetaFit { failures: Vec<(String, String)> },

    #[error("empty variable block: {0}")]
    EmptyBlock(&'static str),

    #[error("skeleton learning needs at least 3 variables, got {0}; use a pairwise test instead")]
    TooFewVariables(usize),

    #[error("unknown column '{0}'")]
    UnknownColumn(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn location(row: Option<usize>, column: Option<&str>) -> String {
    match (row, column) {
        (Some(r), Some(c)) => format!(" at row {r}, column '{c}'"),
        (Some(r), None) => format!(" at row {r}"),
        (None, Some(c)) => format!(" in column '{c}'"),
        (None, None) => String::new(),
    }
}

impl Error {
    pub(crate) fn parse(row: Option<usize>, column: Option<&str>, message: impl Into<String>) -> Self {
        Error::Parse {
            row,
            column: column.map(str::to_owned),
            message: message.into(),
        }
    }

    /// Attaches a target name to a `DegenerateTarget` error; other variants pass through.
    pub fn with_target(self, name: &str) -> Self {
        match self {
            Error::DegenerateTarget { target: None, reason } => Error::DegenerateTarget {
                target: Some(name.to_owned()),
                reason,
            },
            other => other,
        }
    }
}
