use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("no plane found: every sampled hypothesis was degenerate")]
    NoPlaneFound,

    #[error("degenerate elevation axis: plane normal is parallel to the principal axis")]
    DegenerateElevationAxis,

    #[error("empty observation: {0}")]
    EmptyObservation(String),

    #[error("format error in {source_name} at {location}: {message}")]
    Format {
        source_name: String,
        location: String,
        message: String,
    },

    #[error("guidance unavailable: {0}")]
    GuidanceUnavailable(String),

    #[error("guidance protocol error: {0}")]
    Protocol(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

pub(crate) fn format_error(source: &str, location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Format {
        source_name: source.to_string(),
        location: location.into(),
        message: message.into(),
    }
}
