//! Little-endian embedding store:
//!
//! ```text
//! "APEM" | u32 version=1 | u32 N | N × record
//! record = u32 id_len | id (utf-8) | u32 h | u32 w | u32 d
//!        | u32 stride_freq | u32 stride_time | h·w·d × f32 in (h, w, d) order
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use super::EmbeddingMap;
use crate::error::{Error, Result};

pub const EMBED_MAGIC: &[u8; 4] = b"APEM";
const VERSION: u32 = 1;

fn truncated(what: &str) -> Error {
    Error::Truncated(what.to_string())
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => truncated(what),
        _ => Error::io("<embedding store>", e),
    })
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

/// Streaming reader over an embedding store.
pub struct EmbeddingReader<R> {
    inner: R,
    remaining: u32,
    total: u32,
}

impl EmbeddingReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let f = File::open(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::new(BufReader::new(f))
    }
}

impl<R: Read> EmbeddingReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        let mut filled = 0;
        while filled < 4 {
            match inner.read(&mut magic[filled..]) {
                Ok(0) => break,
                Ok(n) => filled += n,
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(Error::io("<embedding store>", e)),
            }
        }
        if filled < 4 || &magic != EMBED_MAGIC {
            return Err(Error::BadMagic { expected: "APEM" });
        }
        let version = read_u32(&mut inner, "header")?;
        if version != VERSION {
            return Err(Error::BadVersion(version));
        }
        let total = read_u32(&mut inner, "header")?;
        Ok(Self {
            inner,
            remaining: total,
            total,
        })
    }

    /// Record count declared in the header.
    pub fn len(&self) -> usize {
        self.total as usize
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    fn read_record(&mut self) -> Result<(String, EmbeddingMap)> {
        let index = self.total - self.remaining;
        let ctx = format!("record {index}");
        let id_len = read_u32(&mut self.inner, &ctx)? as usize;
        let mut id = vec![0u8; id_len.min(1 << 20)];
        if id_len > id.len() {
            return Err(Error::DimensionOverflow(format!("{ctx}: id length {id_len}")));
        }
        read_exact_or(&mut self.inner, &mut id, &ctx)?;
        let id = String::from_utf8(id).map_err(|_| Error::BadId)?;
        let mut dims = [0usize; 5];
        for d in &mut dims {
            *d = read_u32(&mut self.inner, &ctx)? as usize;
        }
        let [h, w, d, sf, st] = dims;
        let count = h
            .checked_mul(w)
            .and_then(|x| x.checked_mul(d))
            .filter(|&n| n <= (u32::MAX as usize))
            .ok_or_else(|| Error::DimensionOverflow(format!("{ctx}: {h}x{w}x{d}")))?;
        let mut raw = vec![0u8; count * 4];
        read_exact_or(&mut self.inner, &mut raw, &ctx)?;
        let values = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let map = EmbeddingMap::new(values, h, w, d, sf, st)?;
        Ok((id, map))
    }
}

impl<R: Read> Iterator for EmbeddingReader<R> {
    type Item = Result<(String, EmbeddingMap)>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        let rec = self.read_record();
        self.remaining = if rec.is_ok() { self.remaining - 1 } else { 0 };
        Some(rec)
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<Vec<(String, EmbeddingMap)>> {
    EmbeddingReader::open(path)?.collect()
}

/// Serializes records to any writer.
pub fn write_embeddings<W: Write>(mut out: W, items: &[(String, EmbeddingMap)]) -> std::io::Result<()> {
    out.write_all(EMBED_MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(items.len() as u32).to_le_bytes())?;
    for (id, map) in items {
        out.write_all(&(id.len() as u32).to_le_bytes())?;
        out.write_all(id.as_bytes())?;
        for v in [map.h, map.w, map.d, map.stride_freq, map.stride_time] {
            out.write_all(&(v as u32).to_le_bytes())?;
        }
        for v in &map.values {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()
}

pub fn save_embeddings(path: impl AsRef<Path>, items: &[(String, EmbeddingMap)]) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_embeddings(BufWriter::new(f), items).map_err(|e| Error::io(path, e))
}
