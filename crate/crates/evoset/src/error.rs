//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown vertex index {0}")]
    UnknownVertex(usize),

    #[error("unknown vertex name {0:?}")]
    UnknownVertexName(String),

    #[error("time {t} beyond horizon {horizon}")]
    BeyondHorizon { t: u32, horizon: u32 },

    #[error("vertex {vertex} has zero conductance at time {t} (not in the active set)")]
    InactiveVertex { vertex: usize, t: u32 },

    #[error("vertex {vertex} left the support between times {t} and {}", t + 1)]
    SupportLost { vertex: usize, t: u32 },

    #[error("non-monotone vertex conductance at vertex {vertex} between times {t} and {}", t + 1)]
    NonMonotoneVertex { vertex: usize, t: u32 },

    #[error("graph too large: {n} vertices exceeds cap {cap}")]
    GraphTooLarge { n: usize, cap: usize },

    #[error("set state is empty")]
    EmptySetState,

    #[error("alpha=1 vacuous: both drift inequalities degenerate to an equality")]
    AlphaOne,

    #[error("invalid parameter {name}: {msg}")]
    Parameter { name: &'static str, msg: String },

    #[error("vertex conductances are not constant in time (vertex {vertex} changes at t={t})")]
    NonConstantConductance { vertex: usize, t: u32 },

    #[error("operation requires a full lattice box environment")]
    NotLatticeBox,

    #[error("conductances are not uniformly elliptic: {0}")]
    NotElliptic(String),

    #[error("invalid graph construction: {0}")]
    Construction(String),

    #[error("invalid graph document: {0}")]
    Document(String),

    #[error("config field `{field}`: {msg}")]
    Config { field: String, msg: String },

    #[error("origin cluster below minimum size in {tries} attempts (p likely subcritical)")]
    RetryCapExhausted { tries: u32 },

    #[error("growth edge ({u}, {v}) rejected: {why}")]
    GrowthEdge { u: String, v: String, why: String },

    #[error("kernel cache: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
