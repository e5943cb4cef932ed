use thiserror::Error;

/// Errors raised by the alignment, registration and experiment routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("incompatible dimensionalities p_x = {x}, p_y = {y}: {requirement}")]
    Dimensions {
        x: usize,
        y: usize,
        requirement: &'static str,
    },
    #[error("length mismatch: {x} vs {y} timestamps ({context})")]
    Length {
        x: usize,
        y: usize,
        context: &'static str,
    },
    #[error("time series must have at least one timestamp and one feature")]
    EmptySeries,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("gamma must be positive and finite, got {0}")]
    InvalidGamma(f64),
    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error(
        "baseline method needs every input in one feature space, found dimensionalities {0:?}; \
         use a GI method for mixed-dimension sets"
    )]
    MixedDimensions(Vec<usize>),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for errors caused by the input data rather than by the caller's configuration.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Dimensions { .. }
                | Error::Length { .. }
                | Error::EmptySeries
                | Error::NonFinite(_)
                | Error::MixedDimensions(_)
                | Error::Parse { .. }
                | Error::Io(_)
                | Error::Csv(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
