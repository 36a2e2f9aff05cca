//! On-disk formats.
//!
//! * Embedding binary (`.emb`): 4-byte magic `PEMB`, `u32` version, `u32`
//!   dimension, `u64` patch count, then `count * dim` little-endian `f32`.
//! * Site manifest: line-oriented `key = value` header followed by a
//!   `[cells]` CSV block mapping each cell to a contiguous run of patches.
//! * Exemplar file: same header style; exemplars either reference patches of
//!   a site cell or are listed inline under `[vectors]`.
//! * Results: per-step trial CSV and per-step aggregate CSV.

mod embeddings;
mod exemplars;
mod manifest;
mod results;

use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

use crate::world::CellIndex;

pub use embeddings::{
    read_embeddings, write_embeddings, EmbeddingHeader, EmbeddingReader, EMBEDDING_MAGIC,
    EMBEDDING_VERSION, HEADER_LEN,
};
pub use exemplars::{
    load_exemplars, save_exemplars, ExemplarFile, ExemplarSource, EXEMPLAR_VERSION,
};
pub use manifest::{
    load_site, load_site_unvalidated, save_site, CellRecord, LoadedSite, SiteMeta, MANIFEST_VERSION,
};
pub use results::{
    aggregate_from_trials_csv, format_fraction, write_aggregate, write_trials, CurveKey,
    AGGREGATE_HEADER, TRIALS_HEADER,
};

/// Failure to read or write one of the file formats. Each variant maps to a
/// distinct process exit code via [`FormatError::exit_code`].
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("line {line}: {msg}")]
    MalformedRecord { line: usize, msg: String },
    #[error("unsupported format version {found} (this build reads version {supported})")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("cell layout error: {0}")]
    Layout(LayoutError),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("patch {patch} contains non-finite values")]
    NonFinite { patch: u64 },
    #[error("embedding file truncated: expected {expected} patches, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("embedding file has {0} unexpected trailing bytes")]
    TrailingData(u64),
    #[error("loaded site fails validation: {0}")]
    Invalid(String),
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayoutError {
    MissingCell(CellIndex),
    DuplicateCell(CellIndex),
    OutOfBounds(CellIndex),
    Overlap { offset: u64 },
    Gap { offset: u64 },
    CountMismatch { manifest: u64, file: u64 },
}

impl fmt::Display for LayoutError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayoutError::MissingCell(c) => write!(f, "cell {c} has no record"),
            LayoutError::DuplicateCell(c) => write!(f, "cell {c} listed more than once"),
            LayoutError::OutOfBounds(c) => write!(f, "cell {c} outside the declared grid"),
            LayoutError::Overlap { offset } => write!(f, "patch ranges overlap at offset {offset}"),
            LayoutError::Gap { offset } => write!(f, "patch ranges leave a gap at offset {offset}"),
            LayoutError::CountMismatch { manifest, file } => write!(
                f,
                "manifest covers {manifest} patches, embedding file holds {file}"
            ),
        }
    }
}

impl FormatError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FormatError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            FormatError::Io { .. } => 3,
            FormatError::MalformedHeader(_)
            | FormatError::MalformedRecord { .. }
            | FormatError::Csv(_) => 4,
            FormatError::VersionMismatch { .. } => 5,
            FormatError::Layout(_) => 6,
            FormatError::DimensionMismatch(_) => 7,
            FormatError::NonFinite { .. } => 8,
            FormatError::Truncated { .. } | FormatError::TrailingData(_) => 9,
            FormatError::Invalid(_) => 10,
        }
    }
}

impl From<csv::Error> for FormatError {
    fn from(e: csv::Error) -> Self {
        FormatError::Csv(e.to_string())
    }
}

/// `(line number, key, value)` triples from a header block.
pub(crate) type HeaderPairs = Vec<(usize, String, String)>;

/// Splits `key = value` header lines, skipping blanks and `#` comments, up to
/// the first `[section]` line. Returns the pairs with their 1-based line
/// numbers and the index of the section line, if any.
pub(crate) fn parse_header(lines: &[&str]) -> Result<(HeaderPairs, Option<usize>), FormatError> {
    let mut out = Vec::new();
    for (i, raw) in lines.iter().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line.starts_with('[') {
            return Ok((out, Some(i)));
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| FormatError::MalformedRecord {
                line: i + 1,
                msg: format!("expected 'key = value', got '{line}'"),
            })?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok((out, None))
}

pub(crate) fn parse_num<T: std::str::FromStr>(
    line: usize,
    what: &str,
    v: &str,
) -> Result<T, FormatError> {
    v.trim().parse().map_err(|_| FormatError::MalformedRecord {
        line,
        msg: format!("bad {what} '{v}'"),
    })
}
