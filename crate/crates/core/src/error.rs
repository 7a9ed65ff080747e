use thiserror::Error;

/// Errors produced by the label verification library.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("{what} out of range: {value} not in [{min}, {max}]")]
    Range {
        what: &'static str,
        value: i64,
        min: i64,
        max: i64,
    },

    #[error("payload length mismatch: expected {expected} characters, found {actual}")]
    Length { expected: usize, actual: usize },

    #[error("parse error at offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("character {ch:?} at position {position} is not Latin-1 encodable")]
    Encoding { ch: char, position: usize },

    #[error("key generation failed: {0}")]
    KeyGeneration(String),

    #[error("invalid key: {0}")]
    Key(String),
}

pub type Result<T> = std::result::Result<T, Error>;
