//! Binary tensor encoding: little-endian `u32` rank, `rank` x `u32` dims,
//! then the row-major `f64` payload.

use std::io::{Read, Write};

use super::Tensor;
use crate::error::{Error, Result};

impl Tensor {
    pub fn write_binary<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&(self.rank() as u32).to_le_bytes())?;
        for &d in self.shape() {
            let d = u32::try_from(d).map_err(|_| Error::InvalidArgument(format!("dimension {d} exceeds u32")))?;
            w.write_all(&d.to_le_bytes())?;
        }
        for v in self.values() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.rank() + 8 * self.len());
        self.write_binary(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Read one tensor; `offset` is the stream position used in error reports
    /// and is advanced past the tensor.
    pub fn read_binary<R: Read>(r: &mut R, offset: &mut u64) -> Result<Tensor> {
        let rank = read_u32(r, offset)? as usize;
        if rank > 16 {
            return Err(Error::Format {
                offset: *offset - 4,
                reason: format!("implausible rank {rank}"),
            });
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(r, offset)? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format {
                offset: *offset,
                reason: "element count overflows".into(),
            })?;
        let mut values = Vec::with_capacity(n.min(1 << 24));
        let mut buf = [0u8; 8];
        for _ in 0..n {
            read_exact(r, &mut buf, offset)?;
            values.push(f64::from_le_bytes(buf));
        }
        Tensor::new(shape, values)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Tensor> {
        let mut offset = 0;
        let mut cursor = bytes;
        let t = Tensor::read_binary(&mut cursor, &mut offset)?;
        if !cursor.is_empty() {
            return Err(Error::Format {
                offset,
                reason: format!("{} trailing bytes", cursor.len()),
            });
        }
        Ok(t)
    }
}

pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], offset: &mut u64) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(Error::Format {
                    offset: *offset + filled as u64,
                    reason: "unexpected end of data".into(),
                })
            }
            Ok(k) => filled += k,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    *offset += buf.len() as u64;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R, offset: &mut u64) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, offset)?;
    Ok(u32::from_le_bytes(b))
}
