use alloc::string::String;

use crate::data::EntityId;

/// Errors raised by the algorithmic core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("rejected input: {0}")]
    RejectedInput(String),
    #[error("degenerate embedding: row {row} of the {what} set has zero norm")]
    DegenerateEmbedding { what: &'static str, row: usize },
    #[error("entity {0} is out of range")]
    OutOfRange(EntityId),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("missing capability: {0}")]
    Capability(String),
    #[error("non-finite gradient in tensor `{tensor}`")]
    NonFiniteGradient { tensor: String },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
