use thiserror::Error;

/// Errors raised across the simulation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("could not place UE {ue} in cell {cell} after {attempts} attempts (minimum distance infeasible?)")]
    PlacementFailure { cell: usize, ue: usize, attempts: usize },
    #[error("{ues} UEs per cell cannot have mutually orthogonal pilots of length {pilot_len}")]
    TooManyUes { ues: usize, pilot_len: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("pilot covariance block {block} of cell {cell} is not positive definite")]
    SingularPhi { cell: usize, block: usize },
    #[error("symbol time {t} is outside the downlink window ({first}..={last})")]
    OutOfWindow { t: i64, first: i64, last: i64 },
    #[error("SINR denominator {0} is not positive")]
    NonPositiveDenominator(f64),
    #[error("large-scale map is not subarray factorized")]
    NotFactorized,
    #[error("trend classification needs at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("Monte Carlo estimation needs at least {needed} trials, got {got}")]
    InsufficientTrials { needed: usize, got: usize },
    #[error("validation instance too large: {0}")]
    ConfigTooLarge(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),
    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
