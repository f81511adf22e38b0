//! On-disk formats. All integers and floats are little-endian.
//!
//! Tensor file (`FQT1`):
//!
//! | bytes        | content                                       |
//! |--------------|-----------------------------------------------|
//! | 4            | magic `FQT1`                                  |
//! | 1            | dtype: 0 = f32, 1 = bf16                      |
//! | 1            | rank `r`                                      |
//! | 8 * r        | dims, u64 each                                |
//! | numel * 4/2  | row-major payload                             |
//!
//! Quantized container (`NVF4`):
//!
//! | bytes          | content                                     |
//! |----------------|---------------------------------------------|
//! | 4              | magic `NVF4`                                |
//! | 1              | format: 0 = NVFP4, 1 = MXFP4                |
//! | 1              | rank `r`                                    |
//! | 8 * r          | dims, u64 each                              |
//! | 4              | tensor scale, f32                           |
//! | n_blocks       | block scale codes (E4M3 or E8M0), one byte each |
//! | ceil(numel/2)  | FP4 codes, even index in the low nibble     |
//!
//! `n_blocks = rows * ceil(last_dim / block_size)`. An odd trailing nibble is zero.

use std::fs;
use std::path::Path;

use half::bf16;

use crate::block_quant::QuantizedTensor;
use crate::config::Format;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TENSOR_MAGIC: [u8; 4] = *b"FQT1";
pub const QUANT_MAGIC: [u8; 4] = *b"NVF4";

/// Element type of a tensor file payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    Bf16,
}

impl Dtype {
    fn to_byte(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::Bf16 => 1,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::Bf16),
            other => Err(Error::UnsupportedDtype(other)),
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::Bf16 => 2,
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(Error::Truncated { needed: n, available });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let found: [u8; 4] = self.take(4)?.try_into().expect("4 bytes");
        if found != expected {
            return Err(Error::BadMagic { expected, found });
        }
        Ok(())
    }

    fn shape(&mut self) -> Result<Vec<usize>> {
        let rank = self.u8()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
            let d = usize::try_from(d).map_err(|_| Error::Corrupt(format!("dimension {d}")))?;
            dims.push(d);
        }
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Corrupt(format!("element count of {dims:?} overflows")))?;
        Ok(dims)
    }

    fn finish(self) -> Result<()> {
        let rest = self.buf.len() - self.pos;
        if rest != 0 {
            return Err(Error::TrailingBytes(rest));
        }
        Ok(())
    }
}

fn write_shape(out: &mut Vec<u8>, shape: &[usize]) -> Result<()> {
    let rank = u8::try_from(shape.len())
        .map_err(|_| Error::InvalidInput(format!("rank {} exceeds 255", shape.len())))?;
    out.push(rank);
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    Ok(())
}

pub fn encode_tensor(x: &Tensor, dtype: Dtype) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(6 + 8 * x.shape().len() + x.numel() * dtype.width());
    out.extend_from_slice(&TENSOR_MAGIC);
    out.push(dtype.to_byte());
    write_shape(&mut out, x.shape())?;
    match dtype {
        Dtype::F32 => x.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        Dtype::Bf16 => x
            .data()
            .iter()
            .for_each(|v| out.extend_from_slice(&bf16::from_f32(*v).to_le_bytes())),
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let mut r = Reader::new(bytes);
    r.magic(TENSOR_MAGIC)?;
    let dtype = Dtype::from_byte(r.u8()?)?;
    let shape = r.shape()?;
    let numel: usize = shape.iter().product();
    let payload = r.take(
        numel
            .checked_mul(dtype.width())
            .ok_or_else(|| Error::Corrupt("payload size overflows".into()))?,
    )?;
    let data = match dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect(),
        Dtype::Bf16 => payload
            .chunks_exact(2)
            .map(|c| bf16::from_le_bytes(c.try_into().expect("2 bytes")).to_f32())
            .collect(),
    };
    r.finish()?;
    Tensor::new(shape, data)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_tensor(&fs::read(path)?)
}

/// Writes an f32 tensor file.
pub fn write_tensor(path: impl AsRef<Path>, x: &Tensor) -> Result<()> {
    write_tensor_as(path, x, Dtype::F32)
}

pub fn write_tensor_as(path: impl AsRef<Path>, x: &Tensor, dtype: Dtype) -> Result<()> {
    fs::write(path, encode_tensor(x, dtype)?)?;
    Ok(())
}

pub fn encode_quantized(q: &QuantizedTensor) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(
        14 + 8 * q.shape().len() + q.block_scales().len() + q.packed_codes().len(),
    );
    out.extend_from_slice(&QUANT_MAGIC);
    out.push(q.format().to_byte());
    write_shape(&mut out, q.shape())?;
    out.extend_from_slice(&q.tensor_scale().to_le_bytes());
    out.extend_from_slice(q.block_scales());
    out.extend_from_slice(q.packed_codes());
    Ok(out)
}

pub fn decode_quantized(bytes: &[u8]) -> Result<QuantizedTensor> {
    let mut r = Reader::new(bytes);
    r.magic(QUANT_MAGIC)?;
    let format = Format::from_byte(r.u8()?)?;
    let shape = r.shape()?;
    let alpha = f32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::Corrupt(format!("tensor scale {alpha}")));
    }
    let numel: usize = shape.iter().product();
    let nblocks = QuantizedTensor::expected_blocks(&shape, format);
    let scales = r.take(nblocks)?.to_vec();
    let codes = r.take(numel.div_ceil(2))?.to_vec();
    if numel % 2 == 1 && codes[codes.len() - 1] >> 4 != 0 {
        return Err(Error::Corrupt("non-zero padding nibble".into()));
    }
    r.finish()?;
    QuantizedTensor::new(shape, format, alpha, scales, codes)
}

pub fn read_quantized(path: impl AsRef<Path>) -> Result<QuantizedTensor> {
    decode_quantized(&fs::read(path)?)
}

pub fn write_quantized(path: impl AsRef<Path>, q: &QuantizedTensor) -> Result<()> {
    fs::write(path, encode_quantized(q)?)?;
    Ok(())
}
