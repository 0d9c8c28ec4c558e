//! Dense row-major embedding storage and the `EMB1` container.
//!
//! ```text
//! magic  b"EMB1"            4 bytes
//! count  u32 little-endian
//! dim    u32 little-endian
//! values count × dim f32 little-endian, row-major
//! ```
//!
//! No padding, no footer. Trailing bytes are rejected.

use std::fs;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

pub const EMBEDDING_MAGIC: [u8; 4] = *b"EMB1";

const HEADER_LEN: usize = 12;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("bad magic bytes {found:?}, expected \"EMB1\"")]
    BadMagic { found: [u8; 4] },
    #[error("truncated header: {found} of {HEADER_LEN} bytes")]
    TruncatedHeader { found: usize },
    #[error("truncated payload: header declares {count} rows of dim {dim}, payload holds {rows_found} complete rows ({bytes_found} bytes)")]
    Truncated { count: usize, dim: usize, rows_found: usize, bytes_found: usize },
    #[error("{extra} unexpected trailing bytes after payload")]
    TrailingBytes { extra: usize },
    #[error("non-finite value {value} at row {row}, column {col}")]
    NonFinite { row: usize, col: usize, value: f32 },
    #[error("dim must be positive when count > 0")]
    ZeroDim,
    #[error("values length {len} does not equal count × dim = {count} × {dim}")]
    Shape { count: usize, dim: usize, len: usize },
    #[error("matrix too large for the EMB1 container ({count} × {dim})")]
    TooLarge { count: usize, dim: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    count: usize,
    dim: usize,
    values: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(count: usize, dim: usize, values: Vec<f32>) -> Result<Self, EmbeddingError> {
        if count > 0 && dim == 0 {
            return Err(EmbeddingError::ZeroDim);
        }
        if count.checked_mul(dim) != Some(values.len()) {
            return Err(EmbeddingError::Shape { count, dim, len: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite { row: i / dim, col: i % dim, value: values[i] });
        }
        Ok(Self { count, dim, values })
    }

    pub fn from_rows<I, R>(dim: usize, rows: I) -> Result<Self, EmbeddingError>
    where
        I: IntoIterator<Item = R>,
        R: AsRef<[f32]>,
    {
        let mut values = Vec::new();
        let mut count = 0;
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(EmbeddingError::Shape { count: count + 1, dim, len: values.len() + r.len() });
            }
            values.extend_from_slice(r);
            count += 1;
        }
        Self::new(count, dim, values)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        // chunks_exact(0) panics; an empty matrix has no rows either way.
        self.values.chunks_exact(self.dim.max(1))
    }

    /// Rows rescaled to unit L2 norm (norm accumulated in f64). All-zero rows
    /// are left untouched.
    pub fn l2_normalized(&self) -> Self {
        let mut values = self.values.clone();
        if self.dim > 0 {
            for row in values.chunks_exact_mut(self.dim) {
                let norm = row.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
                if norm > 0.0 {
                    for v in row.iter_mut() {
                        *v = (f64::from(*v) / norm) as f32;
                    }
                }
            }
        }
        Self { count: self.count, dim: self.dim, values }
    }

    /// Multiply every value by `factor`. Panics if the result is not finite.
    pub fn scaled(&self, factor: f32) -> Self {
        let values: Vec<f32> = self.values.iter().map(|v| v * factor).collect();
        Self::new(self.count, self.dim, values).expect("scaled matrix must stay finite")
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, EmbeddingError> {
        let mut header = [0u8; HEADER_LEN];
        let got = read_up_to(&mut r, &mut header)?;
        if got >= 4 && header[..4] != EMBEDDING_MAGIC {
            return Err(EmbeddingError::BadMagic { found: header[..4].try_into().unwrap() });
        }
        if got < HEADER_LEN {
            if got < 4 {
                let mut found = [0u8; 4];
                found[..got].copy_from_slice(&header[..got]);
                if found[..got] != EMBEDDING_MAGIC[..got] {
                    return Err(EmbeddingError::BadMagic { found });
                }
            }
            return Err(EmbeddingError::TruncatedHeader { found: got });
        }
        let count = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        if count > 0 && dim == 0 {
            return Err(EmbeddingError::ZeroDim);
        }

        let row_bytes = dim * 4;
        let mut values = Vec::with_capacity(count.saturating_mul(dim).min(1 << 28));
        let mut buf = vec![0u8; row_bytes];
        for row in 0..count {
            let got = read_up_to(&mut r, &mut buf)?;
            if got < row_bytes {
                return Err(EmbeddingError::Truncated {
                    count,
                    dim,
                    rows_found: row,
                    bytes_found: row * row_bytes + got,
                });
            }
            for (col, chunk) in buf.chunks_exact(4).enumerate() {
                let v = f32::from_le_bytes(chunk.try_into().unwrap());
                if !v.is_finite() {
                    return Err(EmbeddingError::NonFinite { row, col, value: v });
                }
                values.push(v);
            }
        }
        let mut extra = [0u8; 64];
        let trailing = read_up_to(&mut r, &mut extra)?;
        if trailing > 0 {
            let mut rest = Vec::new();
            r.read_to_end(&mut rest)?;
            return Err(EmbeddingError::TrailingBytes { extra: trailing + rest.len() });
        }
        Ok(Self { count, dim, values })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), EmbeddingError> {
        let count = u32::try_from(self.count)
            .map_err(|_| EmbeddingError::TooLarge { count: self.count, dim: self.dim })?;
        let dim = u32::try_from(self.dim)
            .map_err(|_| EmbeddingError::TooLarge { count: self.count, dim: self.dim })?;
        w.write_all(&EMBEDDING_MAGIC)?;
        w.write_all(&count.to_le_bytes())?;
        w.write_all(&dim.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(HEADER_LEN + self.values.len() * 4);
        self.write_to(&mut buf).expect("write to memory");
        buf
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbeddingError> {
        let f = fs::File::open(path)?;
        Self::read_from(BufReader::with_capacity(1 << 20, f))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EmbeddingError> {
        let f = fs::File::create(path)?;
        self.write_to(BufWriter::with_capacity(1 << 20, f))
    }
}

/// Fill as much of `buf` as the reader provides; returns the byte count.
fn read_up_to<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}
