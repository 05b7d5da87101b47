use std::path::PathBuf;

/// Errors raised anywhere in the CHF pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{quantity} = {value} is outside the valid range [{lo}, {hi}]")]
    Range {
        quantity: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("no sign change of the heat-balance residual over [{lo}, {hi}] kW/m^2")]
    Bracketing { lo: f64, hi: f64 },

    #[error("heat-balance iteration did not converge in {iterations} steps (last relative residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("size error: {0}")]
    Size(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate feature `{0}` has zero variance")]
    DegenerateFeature(String),

    #[error("degenerate uncertainty: zero standard deviation at point {0}")]
    DegenerateUncertainty(usize),

    #[error("division by zero measured value at indices {0:?}")]
    ZeroTarget(Vec<usize>),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },

    #[error("ensemble members failed: {0:?}")]
    Ensemble(Vec<usize>),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("record {index}: {source}")]
    Record {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("generation error: {0}")]
    Generation(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_record(self, index: usize) -> Self {
        Error::Record {
            index,
            source: Box::new(self),
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
