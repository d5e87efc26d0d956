use thiserror::Error;

/// Errors produced anywhere in the decomposition library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("signal too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("AR model is unstable (pole on or outside the unit circle)")]
    UnstableModel,

    #[error("spectral grid mismatch: {0} bins vs {1} bins")]
    GridMismatch(usize, usize),

    #[error("model spectrum has a zero bin at index {0}")]
    ZeroModelBin(usize),

    #[error("harmonic {order} of f0 = {f0} lies at or above Nyquist")]
    AboveNyquist { f0: f64, order: usize },

    #[error(
        "least-squares system is ill-conditioned (condition number {condition:.3e}); \
         try a lower harmonic order or a longer segment"
    )]
    IllConditioned { condition: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("no valid tiling of {subsegments} subsegments with the allowed segment sizes")]
    NoValidTiling { subsegments: usize },

    #[error("metric is undefined: {0}")]
    UndefinedMetric(String),

    #[error("codebook format: {0}")]
    CodebookFormat(String),

    #[error("insufficient training data: {0}")]
    InsufficientData(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
