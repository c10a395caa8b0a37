use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("no overlap between trace column ranges")]
    NoOverlap,

    #[error("crossing traces at column {col}")]
    CrossingTraces { col: usize },

    #[error("ill-conditioned kernel matrix")]
    IllConditioned,

    #[error("no intersection with the lower trace from column {col}")]
    NoIntersection { col: usize },

    #[error("trace too short for the requested half-width; achievable maximum is {achievable_microns:.3} microns")]
    TraceTooShort { achievable_microns: f64 },

    #[error("zero variance: {0} is undefined")]
    ZeroVariance(&'static str),

    #[error("truth mask must contain both classes")]
    SingleClass,

    #[error("image: {0}")]
    Image(#[from] image::ImageError),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Short machine-readable tag, used in structured error bodies.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::NoOverlap => "no_overlap",
            Error::CrossingTraces { .. } => "crossing_traces",
            Error::IllConditioned => "ill_conditioned",
            Error::NoIntersection { .. } => "no_intersection",
            Error::TraceTooShort { .. } => "trace_too_short",
            Error::ZeroVariance(_) => "zero_variance",
            Error::SingleClass => "single_class",
            Error::Image(_) => "image",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
