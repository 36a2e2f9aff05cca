use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::FormatError;
use crate::world::PatchEmbedding;

pub const EMBEDDING_MAGIC: [u8; 4] = *b"PEMB";
pub const EMBEDDING_VERSION: u32 = 1;
pub const HEADER_LEN: u64 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingHeader {
    pub dim: u32,
    pub count: u64,
}

impl EmbeddingHeader {
    pub fn payload_len(&self) -> u64 {
        self.count * u64::from(self.dim) * 4
    }
}

/// Streams patches from an embedding file one at a time.
pub struct EmbeddingReader<R> {
    inner: R,
    header: EmbeddingHeader,
    next: u64,
    buf: Vec<u8>,
}

impl EmbeddingReader<BufReader<File>> {
    /// Opens `path`, reads the header and checks the file length against it.
    pub fn open(path: &Path) -> Result<Self, FormatError> {
        let file = File::open(path).map_err(|e| FormatError::io(path, e))?;
        let len = file.metadata().map_err(|e| FormatError::io(path, e))?.len();
        let reader = Self::new(BufReader::new(file)).map_err(|e| with_path(e, path))?;
        let expected = HEADER_LEN + reader.header.payload_len();
        if len < expected {
            let per_patch = u64::from(reader.header.dim) * 4;
            return Err(FormatError::Truncated {
                expected: reader.header.count,
                actual: len.saturating_sub(HEADER_LEN) / per_patch,
            });
        }
        if len > expected {
            return Err(FormatError::TrailingData(len - expected));
        }
        Ok(reader)
    }
}

impl<R: Read> EmbeddingReader<R> {
    pub fn new(mut inner: R) -> Result<Self, FormatError> {
        let mut head = [0u8; HEADER_LEN as usize];
        inner.read_exact(&mut head).map_err(|_| {
            FormatError::MalformedHeader("embedding file shorter than its 20-byte header".into())
        })?;
        if head[..4] != EMBEDDING_MAGIC {
            return Err(FormatError::MalformedHeader(format!(
                "bad magic {:?}, expected {:?}",
                &head[..4],
                EMBEDDING_MAGIC
            )));
        }
        let version = u32::from_le_bytes(head[4..8].try_into().expect("4 bytes"));
        if version != EMBEDDING_VERSION {
            return Err(FormatError::VersionMismatch {
                found: version,
                supported: EMBEDDING_VERSION,
            });
        }
        let dim = u32::from_le_bytes(head[8..12].try_into().expect("4 bytes"));
        let count = u64::from_le_bytes(head[12..20].try_into().expect("8 bytes"));
        if dim == 0 {
            return Err(FormatError::MalformedHeader("dimension is zero".into()));
        }
        Ok(Self {
            inner,
            header: EmbeddingHeader { dim, count },
            next: 0,
            buf: vec![0; dim as usize * 4],
        })
    }

    pub fn header(&self) -> EmbeddingHeader {
        self.header
    }

    /// Next patch, `None` after the last one.
    pub fn next_patch(&mut self) -> Result<Option<PatchEmbedding>, FormatError> {
        if self.next == self.header.count {
            return Ok(None);
        }
        if self.inner.read_exact(&mut self.buf).is_err() {
            return Err(FormatError::Truncated {
                expected: self.header.count,
                actual: self.next,
            });
        }
        let values: Vec<f32> = self
            .buf
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FormatError::NonFinite { patch: self.next });
        }
        self.next += 1;
        Ok(Some(PatchEmbedding::new(values)))
    }
}

fn with_path(e: FormatError, path: &Path) -> FormatError {
    match e {
        FormatError::MalformedHeader(m) => {
            FormatError::MalformedHeader(format!("{}: {m}", path.display()))
        }
        other => other,
    }
}

/// Reads a whole embedding file into memory.
pub fn read_embeddings(path: &Path) -> Result<(EmbeddingHeader, Vec<PatchEmbedding>), FormatError> {
    let mut reader = EmbeddingReader::open(path)?;
    let header = reader.header();
    let mut out = Vec::with_capacity(header.count as usize);
    while let Some(p) = reader.next_patch()? {
        out.push(p);
    }
    Ok((header, out))
}

/// Writes patches in order. All patches must have dimension `dim`.
pub fn write_embeddings<'a>(
    path: &Path,
    dim: usize,
    patches: impl ExactSizeIterator<Item = &'a PatchEmbedding>,
) -> Result<(), FormatError> {
    let path_buf = PathBuf::from(path);
    let err = |e| FormatError::io(path_buf.clone(), e);
    let dim32 = u32::try_from(dim)
        .map_err(|_| FormatError::DimensionMismatch(format!("dimension {dim} exceeds u32")))?;
    let mut w = BufWriter::new(File::create(path).map_err(err)?);
    w.write_all(&EMBEDDING_MAGIC).map_err(err)?;
    w.write_all(&EMBEDDING_VERSION.to_le_bytes()).map_err(err)?;
    w.write_all(&dim32.to_le_bytes()).map_err(err)?;
    w.write_all(&(patches.len() as u64).to_le_bytes())
        .map_err(err)?;
    for (i, p) in patches.enumerate() {
        if p.dim() != dim {
            return Err(FormatError::DimensionMismatch(format!(
                "patch {i} has dimension {}, expected {dim}",
                p.dim()
            )));
        }
        for v in p.values() {
            w.write_all(&v.to_le_bytes()).map_err(err)?;
        }
    }
    w.flush().map_err(err)
}
