use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("path is empty")]
    EmptyPath,

    #[error("waypoint ({x}, {y}) lies outside the build footprint")]
    WaypointOutOfBounds { x: f64, y: f64 },

    #[error("layer time {tau} s is not an integer multiple of the sample period {h} s")]
    InfeasibleHorizon { tau: f64, h: f64 },

    #[error("input {value} W at sample {sample} outside [0, {p_max}] W")]
    InputOutOfRange { sample: usize, value: f64, p_max: f64 },

    #[error("output weights vanish for beam at ({x}, {y})")]
    DegenerateOutput { x: f64, y: f64 },

    #[error("system matrix is singular: {0}")]
    Singular(String),

    #[error("problem too large for dense oracle: {0}")]
    TooLarge(String),

    #[error("sampling mismatch: {0}")]
    SamplingMismatch(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
