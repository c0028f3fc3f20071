//! `RPTN` binary tensor files.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | field |
//! |---|---|
//! | 4 | magic `RPTN` |
//! | 1 | version, `1` |
//! | 1 | dtype, `0` = f32, `1` = f64 |
//! | 1 | ndim |
//! | 8 × ndim | dims as u64 |
//! | rest | row-major values |
//!
//! A parameter file is the [`PARAM_NAMES`] tensors written back to back.

use std::fs;
use std::path::Path;

use crate::attention::{AttnConfig, RPAttnParams, PARAM_NAMES};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"RPTN";
pub const VERSION: u8 = 1;

pub fn encode_tensor<T: Real>(t: &Tensor<T>) -> Result<Vec<u8>> {
    if t.ndim() > u8::MAX as usize {
        return Err(Error::config(format!("{} dims exceed the format limit", t.ndim())));
    }
    let mut out = Vec::with_capacity(7 + 8 * t.ndim() + T::BYTES * t.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(T::DTYPE);
    out.push(t.ndim() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    Ok(out)
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = pos.checked_add(n).ok_or(Error::Truncated {
        needed: usize::MAX,
        found: bytes.len(),
    })?;
    let s = bytes.get(*pos..end).ok_or(Error::Truncated {
        needed: end,
        found: bytes.len(),
    })?;
    *pos = end;
    Ok(s)
}

/// Decodes one tensor from the front of `bytes`; returns it with the number
/// of bytes consumed.
pub fn decode_tensor<T: Real>(bytes: &[u8]) -> Result<(Tensor<T>, usize)> {
    let mut pos = 0;
    let magic = take(bytes, &mut pos, 4)?;
    if magic != MAGIC {
        return Err(Error::BadMagic(magic.try_into().expect("4 bytes")));
    }
    let head = take(bytes, &mut pos, 3)?;
    let (version, dtype, ndim) = (head[0], head[1], head[2]);
    if version != VERSION {
        return Err(Error::BadVersion(version));
    }
    if dtype != T::DTYPE {
        return Err(Error::DtypeMismatch {
            expected: T::DTYPE,
            found: dtype,
        });
    }
    let mut shape = Vec::with_capacity(ndim as usize);
    for _ in 0..ndim {
        let d = u64::from_le_bytes(take(bytes, &mut pos, 8)?.try_into().expect("8 bytes"));
        shape.push(usize::try_from(d).map_err(|_| Error::config("dimension exceeds address space"))?);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(Error::Overflow("tensor element count"))?;
    let nbytes = count.checked_mul(T::BYTES).ok_or(Error::Overflow("tensor byte count"))?;
    let payload = take(bytes, &mut pos, nbytes)?;
    let data = payload.chunks_exact(T::BYTES).map(T::read_le).collect();
    Ok((Tensor::new(shape, data)?, pos))
}

pub fn write_tensor<T: Real>(path: &Path, t: &Tensor<T>) -> Result<()> {
    fs::write(path, encode_tensor(t)?)?;
    Ok(())
}

/// Reads a single-tensor file; trailing bytes are rejected.
pub fn read_tensor<T: Real>(path: &Path) -> Result<Tensor<T>> {
    let bytes = fs::read(path)?;
    let (t, used) = decode_tensor(&bytes)?;
    if used != bytes.len() {
        return Err(Error::Contract(format!("{} trailing bytes after tensor", bytes.len() - used)));
    }
    Ok(t)
}

pub fn encode_params<T: Real>(params: &RPAttnParams<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for (_, t) in params.fields() {
        out.extend(encode_tensor(t)?);
    }
    Ok(out)
}

pub fn decode_params<T: Real>(cfg: &AttnConfig, bytes: &[u8]) -> Result<RPAttnParams<T>> {
    let mut pos = 0;
    let mut tensors = Vec::with_capacity(PARAM_NAMES.len());
    for _ in PARAM_NAMES {
        let (t, used) = decode_tensor(&bytes[pos..])?;
        tensors.push(t);
        pos += used;
    }
    if pos != bytes.len() {
        return Err(Error::Contract(format!("{} trailing bytes after parameters", bytes.len() - pos)));
    }
    RPAttnParams::from_tensors(cfg, tensors)
}

pub fn write_params<T: Real>(path: &Path, params: &RPAttnParams<T>) -> Result<()> {
    fs::write(path, encode_params(params)?)?;
    Ok(())
}

pub fn read_params<T: Real>(path: &Path, cfg: &AttnConfig) -> Result<RPAttnParams<T>> {
    decode_params(cfg, &fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{init_params, param_count};

    #[test]
    fn header_layout() {
        let t = Tensor::<f32>::new(vec![2], vec![1.0, -2.0]).unwrap();
        let b = encode_tensor(&t).unwrap();
        assert_eq!(&b[..7], b"RPTN\x01\x00\x01");
        assert_eq!(&b[7..15], &2u64.to_le_bytes());
        assert_eq!(&b[15..19], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 23);
    }

    #[test]
    fn scalar_and_empty() {
        let s = Tensor::scalar(3.25f64);
        let b = encode_tensor(&s).unwrap();
        assert_eq!(b[6], 0);
        assert_eq!(decode_tensor::<f64>(&b).unwrap().0, s);
        let e = Tensor::<f64>::zeros(&[3, 0, 2]);
        assert_eq!(decode_tensor::<f64>(&encode_tensor(&e).unwrap()).unwrap().0, e);
    }

    #[test]
    fn distinct_errors() {
        let t = Tensor::<f64>::from_fn(&[2, 2], |i| i as f64);
        let good = encode_tensor(&t).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_tensor::<f64>(&bad), Err(Error::BadMagic(_))));
        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(decode_tensor::<f64>(&bad), Err(Error::BadVersion(2))));
        assert!(matches!(decode_tensor::<f32>(&good), Err(Error::DtypeMismatch { expected: 0, found: 1 })));
        assert!(matches!(decode_tensor::<f64>(&good[..good.len() - 3]), Err(Error::Truncated { .. })));
        assert!(matches!(decode_tensor::<f64>(&good[..2]), Err(Error::Truncated { .. })));
    }

    #[test]
    fn params_serialize_in_field_order() {
        let cfg = AttnConfig::new(8, 2, 3, 3, 4);
        let p = init_params::<f64>(&cfg, 5).unwrap();
        let bytes = encode_params(&p).unwrap();
        let header: usize = p.fields().iter().map(|(_, t)| 7 + 8 * t.ndim()).sum();
        assert_eq!((bytes.len() - header) / 8, param_count(&cfg));
        assert_eq!(decode_params::<f64>(&cfg, &bytes).unwrap(), p);
        let other = AttnConfig::new(8, 2, 4, 3, 4);
        assert!(decode_params::<f64>(&other, &bytes).is_err());
    }
}
