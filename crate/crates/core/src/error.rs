use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("zero-probability token {token}: clamp probabilities before taking logs")]
    ZeroProbability { token: usize },

    #[error("prefix of length {len} exceeds horizon {horizon}")]
    HorizonOverflow { len: usize, horizon: usize },

    #[error("token {token} out of range for alphabet of size {size}")]
    TokenOutOfRange { token: u32, size: usize },

    #[error("enumeration infeasible: {needed} outcomes exceed budget {budget}")]
    EnumerationInfeasible { needed: u128, budget: u128 },

    #[error("distributions live on different universes")]
    UniverseMismatch,

    #[error("absolute continuity violated at index {index}: p > 0 but q = 0")]
    NotAbsolutelyContinuous { index: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("checksum mismatch: stored {stored}, computed {computed}")]
    Checksum { stored: String, computed: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("rank {rank} at step {step} exceeds d_max = {d_max}")]
    RankCap {
        step: usize,
        rank: usize,
        d_max: usize,
    },

    #[error("span incompleteness detected at step {step}: relative residual {residual:.3e}")]
    SpanIncomplete { step: usize, residual: f64 },

    #[error("requested rank {requested} exceeds numerical rank {rank}")]
    RankDeficient { requested: usize, rank: usize },

    #[error("basis is not orthonormal: Gram deviation {deviation:.3e}")]
    NotOrthonormal { deviation: f64 },

    #[error("logit bound {bound} violated at prefix {prefix:?}: |logit| = {value}")]
    LogitBound {
        bound: f64,
        value: f64,
        prefix: Vec<u32>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
