//! Error types shared across the crate.

use thiserror::Error;

/// Unified error type for all fallible operations in `sfr-core`.
#[derive(Debug, Error)]
pub enum SfrError {
    /// Tensor/grid dimensions do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A sampling mask is inconsistent with the grid it is applied to.
    #[error("mask/grid mismatch: {0}")]
    MaskMismatch(String),

    /// An argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Two signals with different sample rates were combined.
    #[error("incompatible signals: sample rates {0} Hz and {1} Hz differ")]
    SampleRateMismatch(f64, f64),

    /// A reference channel has zero energy, so NMSE is undefined.
    #[error("degenerate reference: channel {0} has zero energy")]
    DegenerateReference(usize),

    /// Non-finite values where finite ones are required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Invalid room geometry or acoustics.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// A room spec cannot yield a physical absorption coefficient.
    #[error("invalid room: {0}")]
    InvalidRoom(String),

    /// Training loss became NaN/Inf.
    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    TrainingDiverged { iteration: usize, loss: f64 },

    /// An adapter bundle does not match the network it is attached to.
    #[error("adapter incompatibility: {0}")]
    AdapterIncompatible(String),

    /// A named layer does not exist in the network.
    #[error("unknown layer: {0}")]
    UnknownLayer(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A persisted file has an unsupported format version.
    #[error("format version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: String },

    /// A persisted file is shorter than its header promises.
    #[error("truncated payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: u64, actual: u64 },

    /// A persisted file is structurally inconsistent.
    #[error("corrupt file: {0}")]
    Corrupt(String),
}

pub type Result<T> = std::result::Result<T, SfrError>;
