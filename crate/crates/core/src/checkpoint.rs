//! Versioned binary model files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "EEGC" | version u16 | kind u8 | count u32
//! count × ( name_len u16 | name UTF-8 | ndim u8 | dims u32… | f32 payload )
//! crc32 u32 over every preceding byte
//! ```

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::Path;

use eegart_autodiff::Tensor;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"EEGC";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Encoder = 1,
    Generator = 2,
    Discriminator = 3,
}

impl ModelKind {
    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(ModelKind::Encoder),
            2 => Some(ModelKind::Generator),
            3 => Some(ModelKind::Discriminator),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint CRC mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Crc { stored: u32, computed: u32 },
    #[error("unsupported checkpoint version {0} (expected {FORMAT_VERSION})")]
    Version(u16),
    #[error("unknown model kind tag {0}")]
    UnknownKind(u8),
    #[error("expected a {expected:?} checkpoint, found {found:?}")]
    WrongKind { expected: ModelKind, found: ModelKind },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),
    #[error("missing tensor {0:?}")]
    MissingTensor(String),
    #[error("tensor {name:?} has shape {got:?}, expected {expected:?}")]
    BadShape {
        name: String,
        got: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type NamedTensors = Vec<(String, Tensor<f32>)>;

/// A model that round-trips through a checkpoint.
pub trait Persist: Sized {
    const KIND: ModelKind;
    fn to_tensors(&self) -> NamedTensors;
    fn from_tensors(tensors: NamedTensors) -> Result<Self, CheckpointError>;
}

pub fn encode(kind: ModelKind, tensors: &[(String, Tensor<f32>)]) -> Result<Vec<u8>, CheckpointError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(kind as u8);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        if !seen.insert(name.as_str()) {
            return Err(CheckpointError::DuplicateName(name.clone()));
        }
        let name_len = u16::try_from(name.len()).map_err(|_| CheckpointError::Malformed(format!("name {name:?} too long")))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CheckpointError::Malformed(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Validates the CRC before anything else, so every corruption surfaces as
/// [`CheckpointError::Crc`].
pub fn decode(bytes: &[u8]) -> Result<(ModelKind, NamedTensors), CheckpointError> {
    if bytes.len() < MAGIC.len() + 2 + 1 + 4 + 4 {
        return Err(CheckpointError::Malformed(format!("only {} bytes", bytes.len())));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(CheckpointError::Crc { stored, computed });
    }
    let mut c = Cursor { bytes: body, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(CheckpointError::Malformed("bad magic".into()));
    }
    let version = c.u16()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let tag = c.u8()?;
    let kind = ModelKind::from_tag(tag).ok_or(CheckpointError::UnknownKind(tag))?;
    let count = c.u32()? as usize;
    let mut seen = HashSet::new();
    let mut tensors = Vec::new();
    for _ in 0..count {
        let len = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(CheckpointError::DuplicateName(name));
        }
        let ndim = c.u8()? as usize;
        let shape = (0..ndim).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let numel = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let numel = numel.filter(|&n| n <= body.len()).ok_or_else(|| CheckpointError::Malformed(format!("tensor {name:?} too large")))?;
        let payload = c.take(numel * 4)?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| CheckpointError::Malformed(format!("tensor {name:?}: {e}")))?;
        tensors.push((name, t));
    }
    if c.pos != body.len() {
        return Err(CheckpointError::Malformed(format!("{} trailing bytes", body.len() - c.pos)));
    }
    Ok((kind, tensors))
}

pub fn save_checkpoint<M: Persist>(model: &M, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    fs::write(path, encode(M::KIND, &model.to_tensors())?)?;
    Ok(())
}

pub fn load_checkpoint<M: Persist>(path: impl AsRef<Path>) -> Result<M, CheckpointError> {
    let (kind, tensors) = decode(&fs::read(path)?)?;
    if kind != M::KIND {
        return Err(CheckpointError::WrongKind {
            expected: M::KIND,
            found: kind,
        });
    }
    M::from_tensors(tensors)
}

/// Removes and returns the tensor called `name`.
pub fn take_tensor(tensors: &mut NamedTensors, name: &str) -> Result<Tensor<f32>, CheckpointError> {
    let i = tensors
        .iter()
        .position(|(n, _)| n == name)
        .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))?;
    Ok(tensors.remove(i).1)
}

/// Like [`take_tensor`] but also checks the shape.
pub fn take_shaped(tensors: &mut NamedTensors, name: &str, shape: &[usize]) -> Result<Tensor<f32>, CheckpointError> {
    let t = take_tensor(tensors, name)?;
    if t.shape() != shape {
        return Err(CheckpointError::BadShape {
            name: name.to_string(),
            got: t.shape().to_vec(),
            expected: shape.to_vec(),
        });
    }
    Ok(t)
}
