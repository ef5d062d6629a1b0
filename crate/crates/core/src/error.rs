use thiserror::Error;

pub type Result<T, E = TvaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum TvaError {
    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("unknown policy: {0}")]
    UnknownPolicy(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular design: columns {columns:?} are linearly dependent on the others ({detail})")]
    SingularDesign { columns: Vec<usize>, detail: String },

    #[error("solver did not converge: {0}")]
    NonConvergence(String),

    #[error("pool {0} has no assigned units")]
    EmptyPool(String),

    #[error("pooled regressors are collinear after absorbing fixed effects: {0}")]
    Collinear(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("{0}")]
    Io(String),

    #[error("stage `{stage}` failed: {source} (hint: {hint})")]
    Stage {
        stage: &'static str,
        hint: String,
        #[source]
        source: Box<TvaError>,
    },
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Numerical,
}

impl TvaError {
    pub fn class(&self) -> ErrorClass {
        match self {
            TvaError::SingularDesign { .. }
            | TvaError::NonConvergence(_)
            | TvaError::Collinear(_)
            | TvaError::Numerical(_) => ErrorClass::Numerical,
            TvaError::Stage { source, .. } => source.class(),
            _ => ErrorClass::Validation,
        }
    }

    pub(crate) fn at_stage(self, stage: &'static str, hint: impl Into<String>) -> Self {
        TvaError::Stage { stage, hint: hint.into(), source: Box::new(self) }
    }
}

impl From<std::io::Error> for TvaError {
    fn from(e: std::io::Error) -> Self {
        TvaError::Io(e.to_string())
    }
}

impl From<csv::Error> for TvaError {
    fn from(e: csv::Error) -> Self {
        TvaError::Validation(e.to_string())
    }
}

impl From<serde_json::Error> for TvaError {
    fn from(e: serde_json::Error) -> Self {
        TvaError::Validation(e.to_string())
    }
}
