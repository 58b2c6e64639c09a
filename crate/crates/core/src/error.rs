//! Error types shared across the crate.

use thiserror::Error;

/// Top-level error for all rtmlab operations.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or infeasible problem setup.
    #[error("configuration error: {0}")]
    Config(String),

    /// A region exceeded the bounds of the field it addresses.
    #[error("bounds error: {0}")]
    Bounds(String),

    /// Malformed or unexpected wire data.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Transport-level failure (socket, channel, handshake).
    #[error("communication error: {0}")]
    Comm(String),

    /// A time step failed; carries rank, optional face, and step number.
    #[error("step error: rank {rank}, step {step}{}: {message}", face_suffix(.face))]
    Step {
        rank: u32,
        face: Option<crate::halo::FaceId>,
        step: u64,
        message: String,
    },

    /// A worker body failed inside a parallel loop.
    #[error("loop body failed at tile index {tile}: {message}")]
    LoopBody { tile: usize, message: String },

    /// Two runs that must agree bitwise did not.
    #[error("equivalence failure: {0}")]
    Equivalence(String),

    /// Invalid argument to a library operation.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

fn face_suffix(face: &Option<crate::halo::FaceId>) -> String {
    match face {
        Some(f) => format!(", face {f:?}"),
        None => String::new(),
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
