//! EXGN tensor container: the single on-disk format for checkpoints,
//! datasets, and prediction dumps.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "EXGN" | version u32 | entry count u32
//! per entry: name_len u16 | name (UTF-8) | dtype u8 (0=f32, 1=u8)
//!            | rank u8 | dims u64 × rank | raw little-endian payload
//! ```
//!
//! Entries are written in sorted name order, so equal contents produce
//! byte-identical files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"EXGN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad magic bytes {0:?}, expected \"EXGN\"")]
    BadMagic([u8; 4]),

    #[error("unsupported container version {0}, expected {FORMAT_VERSION}")]
    UnsupportedVersion(u32),

    #[error("entry {name:?}: unknown dtype code {code}")]
    BadDtype { name: String, code: u8 },

    #[error("duplicate entry {0:?}")]
    DuplicateEntry(String),

    #[error("entry name is not valid UTF-8")]
    BadName,

    #[error("malformed container: {0}")]
    Malformed(String),

    #[error("missing entry {0:?}")]
    MissingEntry(String),

    #[error("entry {name:?}: expected {expected}, found {found}")]
    WrongKind {
        name: String,
        expected: &'static str,
        found: &'static str,
    },
}

type Result<T> = std::result::Result<T, ContainerError>;

/// One named tensor in a container.
#[derive(Clone, Debug, PartialEq)]
pub enum TensorPayload {
    F32 { shape: Vec<usize>, data: Vec<f32> },
    U8 { shape: Vec<usize>, data: Vec<u8> },
}

impl TensorPayload {
    pub fn shape(&self) -> &[usize] {
        match self {
            TensorPayload::F32 { shape, .. } | TensorPayload::U8 { shape, .. } => shape,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape().iter().product()
    }

    fn dtype_code(&self) -> u8 {
        match self {
            TensorPayload::F32 { .. } => 0,
            TensorPayload::U8 { .. } => 1,
        }
    }

    fn kind_name(&self) -> &'static str {
        match self {
            TensorPayload::F32 { .. } => "f32",
            TensorPayload::U8 { .. } => "u8",
        }
    }
}

#[derive(Debug, Default)]
pub struct Container {
    entries: BTreeMap<String, TensorPayload>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, payload: TensorPayload) -> Result<()> {
        if payload.numel() != match &payload {
            TensorPayload::F32 { data, .. } => data.len(),
            TensorPayload::U8 { data, .. } => data.len(),
        } {
            return Err(ContainerError::Malformed(format!(
                "entry {name:?}: payload length does not match shape"
            )));
        }
        if self.entries.contains_key(name) {
            return Err(ContainerError::DuplicateEntry(name.to_string()));
        }
        self.entries.insert(name.to_string(), payload);
        Ok(())
    }

    pub fn insert_f32(&mut self, name: &str, shape: &[usize], data: Vec<f32>) -> Result<()> {
        self.insert(name, TensorPayload::F32 { shape: shape.to_vec(), data })
    }

    pub fn insert_u8(&mut self, name: &str, shape: &[usize], data: Vec<u8>) -> Result<()> {
        self.insert(name, TensorPayload::U8 { shape: shape.to_vec(), data })
    }

    pub fn get(&self, name: &str) -> Option<&TensorPayload> {
        self.entries.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&TensorPayload> {
        self.get(name)
            .ok_or_else(|| ContainerError::MissingEntry(name.to_string()))
    }

    pub fn require_f32(&self, name: &str) -> Result<(&[usize], &[f32])> {
        match self.require(name)? {
            TensorPayload::F32 { shape, data } => Ok((shape, data)),
            other => Err(ContainerError::WrongKind {
                name: name.to_string(),
                expected: "f32",
                found: other.kind_name(),
            }),
        }
    }

    pub fn require_u8(&self, name: &str) -> Result<(&[usize], &[u8])> {
        match self.require(name)? {
            TensorPayload::U8 { shape, data } => Ok((shape, data)),
            other => Err(ContainerError::WrongKind {
                name: name.to_string(),
                expected: "u8",
                found: other.kind_name(),
            }),
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &TensorPayload)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_writer<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        let count = u32::try_from(self.entries.len())
            .map_err(|_| ContainerError::Malformed("too many entries".into()))?;
        w.write_all(&count.to_le_bytes())?;
        for (name, payload) in &self.entries {
            let name_len = u16::try_from(name.len())
                .map_err(|_| ContainerError::Malformed(format!("entry name too long: {name:?}")))?;
            w.write_all(&name_len.to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[payload.dtype_code()])?;
            let rank = u8::try_from(payload.shape().len())
                .map_err(|_| ContainerError::Malformed(format!("entry rank too large: {name:?}")))?;
            w.write_all(&[rank])?;
            for &d in payload.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            match payload {
                TensorPayload::F32 { data, .. } => {
                    for v in data {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
                TensorPayload::U8 { data, .. } => w.write_all(data)?,
            }
        }
        Ok(())
    }

    pub fn write_to(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.to_writer(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn from_reader<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(ContainerError::BadMagic(magic));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(ContainerError::UnsupportedVersion(version));
        }
        let count = read_u32(&mut r)? as usize;
        let mut out = Container::new();
        for _ in 0..count {
            let name_len = read_u16(&mut r)? as usize;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes).map_err(|_| ContainerError::BadName)?;
            let mut head = [0u8; 2];
            r.read_exact(&mut head)?;
            let (dtype, rank) = (head[0], head[1] as usize);
            let mut shape = Vec::with_capacity(rank);
            let mut numel = 1usize;
            for _ in 0..rank {
                let d = read_u64(&mut r)?;
                let d = usize::try_from(d)
                    .map_err(|_| ContainerError::Malformed(format!("entry {name:?}: dim overflow")))?;
                numel = numel
                    .checked_mul(d)
                    .ok_or_else(|| ContainerError::Malformed(format!("entry {name:?}: size overflow")))?;
                shape.push(d);
            }
            let payload = match dtype {
                0 => {
                    let mut buf = vec![0u8; numel * 4];
                    r.read_exact(&mut buf)?;
                    let data = buf
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                        .collect();
                    TensorPayload::F32 { shape, data }
                }
                1 => {
                    let mut data = vec![0u8; numel];
                    r.read_exact(&mut data)?;
                    TensorPayload::U8 { shape, data }
                }
                code => return Err(ContainerError::BadDtype { name, code }),
            };
            out.insert(&name, payload)?;
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(ContainerError::Malformed("trailing bytes after last entry".into()));
        }
        Ok(out)
    }

    pub fn read_from(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(BufReader::new(File::open(path)?))
    }
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
