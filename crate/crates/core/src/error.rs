use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Image axis, used to point configuration errors at the offending dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Rows,
    Cols,
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Axis::Rows => f.write_str("rows"),
            Axis::Cols => f.write_str("cols"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error on {axis} axis: {msg}")]
    AxisConfig { axis: Axis, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("backend error{}: {msg}", class.map(|c| format!(" (class {c})")).unwrap_or_default())]
    Backend { class: Option<usize>, msg: String },

    #[error("backend failure at {context}: {source}")]
    Query {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("operation not supported by this backend: {0}")]
    Unsupported(String),

    #[error("placement ({y}, {x}) is outside the valid patch region")]
    PlacementOutOfBounds { y: usize, x: usize },

    #[error(
        "attack enumeration budget exceeded: {relevant} attacker-relevant pixels at placement \
         ({y}, {x}) but the cap is {cap}; shrink the patch or the feature sets"
    )]
    EnumerationBudget {
        y: usize,
        x: usize,
        relevant: usize,
        cap: usize,
    },

    #[error("internal consistency error: {0}")]
    Internal(String),

    #[error("metrics error: {0}")]
    Metrics(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn backend(class: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Backend {
            class,
            msg: msg.into(),
        }
    }

    pub(crate) fn axis(axis: Axis, msg: impl Into<String>) -> Self {
        Error::AxisConfig {
            axis,
            msg: msg.into(),
        }
    }

    /// True for errors that originate in a classifier backend.
    pub fn is_backend(&self) -> bool {
        matches!(self, Error::Backend { .. } | Error::Query { .. })
    }

    /// True for errors caused by invalid user configuration.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::AxisConfig { .. } | Error::Config(_) | Error::Dataset(_)
        )
    }
}
