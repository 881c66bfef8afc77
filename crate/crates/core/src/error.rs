//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Raw weights that cannot be normalized into a probability vector.
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    /// Configuration parameter outside its documented range.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Token id at or beyond the vocabulary size.
    #[error("invalid token id {token} for vocabulary of size {vocab_size}")]
    InvalidToken { token: u32, vocab_size: usize },

    /// Mismatched or otherwise unusable operation input.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Embedding row that cannot be normalized (zero norm) or has wrong arity.
    #[error("invalid embedding: {0}")]
    InvalidEmbedding(String),

    /// Malformed text file (embeddings, keys, token streams).
    #[error("parse error: {0}")]
    ParseError(String),

    /// A zeta outcome with zero conditional mass was requested. The sampler
    /// never emits these, so reaching this is an embedder logic bug.
    #[error("impossible zeta outcome: {0}")]
    ImpossibleZeta(String),

    /// Text too short to score any position.
    #[error("insufficient length: need more than {min} tokens, got {got}")]
    InsufficientLength { min: usize, got: usize },

    /// Oracle instance beyond the exhaustive-enumeration budget.
    #[error("instance too large: {0}")]
    InstanceTooLarge(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
