use thiserror::Error;

use crate::world::CellIndex;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the simulation engine.
///
/// File-format problems have their own type, [`crate::io::FormatError`].
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("cell {index} is outside a {rows}x{cols} grid")]
    IndexOutOfRange {
        index: CellIndex,
        rows: usize,
        cols: usize,
    },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("grid failed validation with {count} violation(s), first: {first}")]
    InvalidGrid { count: usize, first: String },
    #[error("context buffer initialisation failed: {0}")]
    BufferInit(String),
    #[error("empty context buffer cannot act as an exemplar set")]
    EmptyBuffer,
    #[error("degenerate site: {0}")]
    DegenerateSite(String),
    #[error("degenerate regression: {0}")]
    DegenerateRegression(String),
    #[error("world generation failed: {0}")]
    Generation(String),
}
