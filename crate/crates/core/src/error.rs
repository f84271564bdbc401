use thiserror::Error;

use crate::sdp::SdpStatus;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("nodes are collocated (zero distance) on a {0} link")]
    CollocatedNodes(&'static str),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: String,
        got: String,
    },

    #[error("combiner for user {0} is identically zero")]
    ZeroCombiner(usize),

    #[error("malformed SDP: {0}")]
    MalformedSdp(String),

    #[error("SDP solve failed in {context}: status {status:?}")]
    Solver {
        context: String,
        status: SdpStatus,
    },

    #[error("lifted solution is degenerate: corner entry {0:e}")]
    DegenerateLift(f64),

    #[error("interference cancellation needs N >= L(K+L) = {required}, have N = {elements}")]
    Underdetermined { elements: usize, required: usize },

    #[error("stacked RIS channel is ill-conditioned: cond(AA^H) = {0:e}")]
    IllConditioned(f64),

    #[error("no effective D2D gain keeps every RIS element within unit modulus")]
    IcInfeasible,

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("fixture parse error at line {line}: {msg}")]
    Fixture { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
