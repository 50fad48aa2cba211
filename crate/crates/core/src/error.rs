use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid exponent {0}: need p >= 1 or p = inf")]
    InvalidExponent(f64),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("time {t} lies beyond the mesh horizon {horizon}")]
    BeyondHorizon { t: f64, horizon: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("blow-up at t = {t} (step {step}): sup |X| = {sup:e}")]
    BlowUp { t: f64, step: usize, sup: f64 },
    #[error("aliasing: {0}")]
    Aliasing(String),
    #[error("internal consistency breach: {0}")]
    Consistency(String),
    #[error("config: {0}")]
    Config(String),
    #[error("missing increments: {0}")]
    MissingIncrements(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
