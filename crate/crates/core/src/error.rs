use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("node has no observations")]
    EmptyNode,
    #[error("quantile level {0} is outside (0, 1)")]
    InvalidTau(f64),
    #[error("no uncensored observations")]
    NoUncensored,
    #[error("bad input: {0}")]
    BadInput(String),
    #[error("no observation is out-of-bag for any tree")]
    NoOobCoverage,
    #[error("knockoff construction failed: {0}")]
    KnockoffFailure(String),
    #[error("fold {0} has no uncensored observations")]
    FoldDegenerate(usize),
    #[error("censoring calibration did not converge (best rate {best_rate:.4}, target {target:.4})")]
    CalibrationFailure {
        best_rate: f64,
        target: f64,
        best_bounds: [f64; 4],
    },
    #[error("baseline loss is zero")]
    DegenerateBaseline,
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    #[error("unsupported model version {0:?}")]
    UnsupportedVersion(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(row: usize, column: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            row,
            column: column.into(),
            message: message.into(),
        }
    }

    /// True for failures caused by the numbers rather than by the input files.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::KnockoffFailure(_)
                | Error::CalibrationFailure { .. }
                | Error::DegenerateBaseline
                | Error::NoOobCoverage
        )
    }
}
