//! IDX binary arrays: two zero bytes, a type code, a rank byte, big-endian
//! `u32` dimensions, then big-endian values in row-major order.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Element storage for each IDX type code.
#[derive(Clone, Debug, PartialEq)]
pub enum IdxData {
    U8(Vec<u8>),
    I8(Vec<i8>),
    I16(Vec<i16>),
    I32(Vec<i32>),
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl IdxData {
    pub fn type_code(&self) -> u8 {
        match self {
            IdxData::U8(_) => 0x08,
            IdxData::I8(_) => 0x09,
            IdxData::I16(_) => 0x0B,
            IdxData::I32(_) => 0x0C,
            IdxData::F32(_) => 0x0D,
            IdxData::F64(_) => 0x0E,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            IdxData::U8(v) => v.len(),
            IdxData::I8(v) => v.len(),
            IdxData::I16(v) => v.len(),
            IdxData::I32(v) => v.len(),
            IdxData::F32(v) => v.len(),
            IdxData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            IdxData::U8(v) => v.iter().map(|&x| x as f64).collect(),
            IdxData::I8(v) => v.iter().map(|&x| x as f64).collect(),
            IdxData::I16(v) => v.iter().map(|&x| x as f64).collect(),
            IdxData::I32(v) => v.iter().map(|&x| x as f64).collect(),
            IdxData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            IdxData::F64(v) => v.clone(),
        }
    }
}

fn element_size(code: u8) -> Option<usize> {
    match code {
        0x08 | 0x09 => Some(1),
        0x0B => Some(2),
        0x0C | 0x0D => Some(4),
        0x0E => Some(8),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: IdxData,
}

fn format_err<T>(offset: usize, reason: impl Into<String>) -> Result<T> {
    Err(Error::Format {
        offset: offset as u64,
        reason: reason.into(),
    })
}

impl IdxArray {
    pub fn new(dims: Vec<usize>, data: IdxData) -> Result<Self> {
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::InvalidArgument(format!(
                "IDX dims {dims:?} do not match {} values",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return format_err(bytes.len(), "truncated magic number");
        }
        if bytes[0] != 0 || bytes[1] != 0 {
            let at = if bytes[0] != 0 { 0 } else { 1 };
            return format_err(at, "magic number must start with two zero bytes");
        }
        let code = bytes[2];
        let Some(size) = element_size(code) else {
            return format_err(2, format!("unknown type code 0x{code:02X}"));
        };
        let rank = bytes[3] as usize;
        if rank == 0 {
            return format_err(3, "rank must be at least 1");
        }
        let mut pos = 4;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            let Some(b) = bytes.get(pos..pos + 4) else {
                return format_err(bytes.len(), "truncated dimension header");
            };
            dims.push(u32::from_be_bytes([b[0], b[1], b[2], b[3]]) as usize);
            pos += 4;
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(size));
        let Some(nbytes) = count else {
            return format_err(4, "dimensions overflow");
        };
        let body = &bytes[pos..];
        if body.len() < nbytes {
            return format_err(
                bytes.len(),
                format!("truncated data: expected {nbytes} bytes after offset {pos}"),
            );
        }
        if body.len() > nbytes {
            return format_err(pos + nbytes, "trailing bytes after data");
        }
        let chunks = body.chunks_exact(size);
        let data = match code {
            0x08 => IdxData::U8(body.to_vec()),
            0x09 => IdxData::I8(body.iter().map(|&b| b as i8).collect()),
            0x0B => IdxData::I16(chunks.map(|c| i16::from_be_bytes([c[0], c[1]])).collect()),
            0x0C => IdxData::I32(chunks.map(|c| i32::from_be_bytes(c.try_into().unwrap())).collect()),
            0x0D => IdxData::F32(chunks.map(|c| f32::from_be_bytes(c.try_into().unwrap())).collect()),
            _ => IdxData::F64(chunks.map(|c| f64::from_be_bytes(c.try_into().unwrap())).collect()),
        };
        Ok(Self { dims, data })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read(path)?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.dims.len() > u8::MAX as usize || self.dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::InvalidArgument("IDX header cannot represent these dims".into()));
        }
        let mut out = vec![0, 0, self.data.type_code(), self.dims.len() as u8];
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
        match &self.data {
            IdxData::U8(v) => out.extend_from_slice(v),
            IdxData::I8(v) => out.extend(v.iter().map(|&x| x as u8)),
            IdxData::I16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
            IdxData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
            IdxData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
            IdxData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }
}
