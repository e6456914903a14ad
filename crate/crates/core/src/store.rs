//! Binary checkpoint container.
//!
//! Layout: the 4-byte magic `PDRV`, a little-endian `u32` format version, a `u64`
//! header length, a JSON header and then the raw little-endian arrays in header
//! order. Writes go through a temporary file and a rename so a crash never leaves a
//! torn checkpoint behind.

use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"PDRV";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint is missing array `{0}`")]
    Missing(String),
    #[error("array `{name}` has the wrong type or length")]
    Mismatch { name: String },
    #[error("checkpoint is truncated")]
    Truncated,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F64(Vec<f64>),
    F32(Vec<f32>),
    U64(Vec<u64>),
}

impl ArrayData {
    fn dtype(&self) -> DType {
        match self {
            ArrayData::F64(_) => DType::F64,
            ArrayData::F32(_) => DType::F32,
            ArrayData::U64(_) => DType::U64,
        }
    }

    fn len(&self) -> usize {
        match self {
            ArrayData::F64(v) => v.len(),
            ArrayData::F32(v) => v.len(),
            ArrayData::U64(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum DType {
    F64,
    F32,
    U64,
}

impl DType {
    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 | DType::U64 => 8,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ArrayHeader {
    name: String,
    dtype: DType,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    arrays: Vec<ArrayHeader>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub meta: serde_json::Value,
    arrays: Vec<(String, ArrayData)>,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl Container {
    pub fn new(meta: serde_json::Value) -> Self {
        Self { meta, arrays: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, data: ArrayData) {
        self.arrays.push((name.into(), data));
    }

    pub fn push_f64(&mut self, name: impl Into<String>, v: Vec<f64>) {
        self.push(name, ArrayData::F64(v));
    }

    fn take(&mut self, name: &str) -> Result<ArrayData, StoreError> {
        let i = self
            .arrays
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| StoreError::Missing(name.to_string()))?;
        Ok(self.arrays.remove(i).1)
    }

    pub fn take_f64(&mut self, name: &str) -> Result<Vec<f64>, StoreError> {
        match self.take(name)? {
            ArrayData::F64(v) => Ok(v),
            _ => Err(StoreError::Mismatch { name: name.into() }),
        }
    }

    pub fn take_f32(&mut self, name: &str) -> Result<Vec<f32>, StoreError> {
        match self.take(name)? {
            ArrayData::F32(v) => Ok(v),
            _ => Err(StoreError::Mismatch { name: name.into() }),
        }
    }

    pub fn take_u64(&mut self, name: &str) -> Result<Vec<u64>, StoreError> {
        match self.take(name)? {
            ArrayData::U64(v) => Ok(v),
            _ => Err(StoreError::Mismatch { name: name.into() }),
        }
    }

    pub fn has(&self, name: &str) -> bool {
        self.arrays.iter().any(|(n, _)| n == name)
    }

    pub fn to_writer<W: Write>(&self, mut w: W) -> io::Result<()> {
        let header = Header {
            meta: self.meta.clone(),
            arrays: self
                .arrays
                .iter()
                .map(|(name, d)| ArrayHeader {
                    name: name.clone(),
                    dtype: d.dtype(),
                    len: d.len(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(io::Error::other)?;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        let mut buf = Vec::new();
        for (_, d) in &self.arrays {
            buf.clear();
            match d {
                ArrayData::F64(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
                ArrayData::F32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
                ArrayData::U64(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn from_reader<R: Read>(mut r: R) -> Result<Self, StoreError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|source| StoreError::Io {
            path: "<reader>".into(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        if bytes.len() < 16 {
            return Err(if bytes.starts_with(MAGIC) || bytes.len() < 4 {
                StoreError::Truncated
            } else {
                StoreError::BadMagic
            });
        }
        if &bytes[..4] != MAGIC {
            return Err(StoreError::BadMagic);
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(StoreError::UnsupportedVersion(version));
        }
        let json_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if body.len() < json_len {
            return Err(StoreError::Truncated);
        }
        let header: Header = serde_json::from_slice(&body[..json_len])?;
        let mut pos = json_len;
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for a in header.arrays {
            let n = a.len * a.dtype.width();
            let chunk = body.get(pos..pos + n).ok_or(StoreError::Truncated)?;
            pos += n;
            let data = match a.dtype {
                DType::F64 => ArrayData::F64(
                    chunk.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8"))).collect(),
                ),
                DType::F32 => ArrayData::F32(
                    chunk.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4"))).collect(),
                ),
                DType::U64 => ArrayData::U64(
                    chunk.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().expect("8"))).collect(),
                ),
            };
            arrays.push((a.name, data));
        }
        Ok(Self { meta: header.meta, arrays })
    }

    /// Atomically writes the container to `path`.
    pub fn write(&self, path: &Path) -> Result<(), StoreError> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir).map_err(io_err(dir))?;
            }
        }
        let tmp = path.with_extension("tmp");
        {
            let f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
            let mut w = io::BufWriter::new(f);
            self.to_writer(&mut w).map_err(io_err(&tmp))?;
            w.flush().map_err(io_err(&tmp))?;
        }
        fs::rename(&tmp, path).map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self, StoreError> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        Self::from_bytes(&bytes)
    }
}
