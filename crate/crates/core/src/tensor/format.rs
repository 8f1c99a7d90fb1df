//! `DMTX` binary tensor files.
//!
//! Layout: magic `DMTX`, u8 version (1), u8 dtype (0 = f32, 1 = f64),
//! u8 rank, `rank` little-endian u32 dims, then the row-major payload in
//! little-endian.

use std::path::Path;

use super::{DType, Scalar, Tensor};
use crate::error::{Error, Result};

pub const DMTX_MAGIC: &[u8; 4] = b"DMTX";
pub const DMTX_VERSION: u8 = 1;

pub fn encode<T: Scalar>(t: &Tensor<T>) -> Result<Vec<u8>> {
    if t.rank() > u8::MAX as usize {
        return Err(Error::InvalidArgument(format!("rank {} too large", t.rank())));
    }
    let mut out = Vec::with_capacity(7 + 4 * t.rank() + t.len() * T::DTYPE.width());
    out.extend_from_slice(DMTX_MAGIC);
    out.push(DMTX_VERSION);
    out.push(T::DTYPE as u8);
    out.push(t.rank() as u8);
    for &d in t.shape() {
        let d = u32::try_from(d)
            .map_err(|_| Error::InvalidArgument(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    Ok(out)
}

/// Decode into `T`, converting if the stored dtype differs.
pub fn decode<T: Scalar>(bytes: &[u8], path: &Path) -> Result<Tensor<T>> {
    let bad = |detail: &str| Error::Format {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    if bytes.len() < 7 || &bytes[..4] != DMTX_MAGIC {
        return Err(bad("missing DMTX magic"));
    }
    if bytes[4] != DMTX_VERSION {
        return Err(bad(&format!("unsupported version {}", bytes[4])));
    }
    let dtype = DType::from_code(bytes[5]).ok_or_else(|| bad("unknown dtype"))?;
    let rank = bytes[6] as usize;
    let header = 7 + 4 * rank;
    if bytes.len() < header {
        return Err(bad("truncated header"));
    }
    let shape: Vec<usize> = (0..rank)
        .map(|i| {
            let o = 7 + 4 * i;
            u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize
        })
        .collect();
    let n: usize = shape.iter().product();
    let payload = &bytes[header..];
    if payload.len() != n * dtype.width() {
        return Err(bad(&format!(
            "payload has {} bytes, expected {}",
            payload.len(),
            n * dtype.width()
        )));
    }
    let data: Vec<T> = match dtype {
        DType::F32 => payload
            .chunks_exact(4)
            .map(|c| T::lit(f32::read_le(c) as f64))
            .collect(),
        DType::F64 => payload.chunks_exact(8).map(|c| T::lit(f64::read_le(c))).collect(),
    };
    Tensor::new(shape, data)
}

pub fn write_dmtx<T: Scalar>(path: &Path, t: &Tensor<T>) -> Result<()> {
    let bytes = encode(t)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_dmtx<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
