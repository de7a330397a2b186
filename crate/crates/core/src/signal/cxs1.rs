//! CXS1: `"CXS1" | version u32 | n u32 | T u32 | F u32 | label_kind u8 | L u32`,
//! then per example `T·F` real parts, `T·F` imaginary parts and the labels,
//! all little-endian `f64`, then a CRC32 of everything after the header.

use std::fs;
use std::path::Path;

use super::{Dataset, LabelKind, SpectralSequence};
use crate::codec::{seal, unseal, Decoder, Encoder};
use crate::complex::ComplexTensor;
use crate::error::{FormatError, Result};
use crate::tensor::RealTensor;

pub const CXS1_MAGIC: [u8; 4] = *b"CXS1";
pub const CXS1_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 4 + 1 + 4;

pub fn encode_dataset(d: &Dataset) -> Vec<u8> {
    let mut e = Encoder::default();
    e.bytes(&CXS1_MAGIC);
    e.u32(CXS1_VERSION);
    e.u32(d.examples.len() as u32);
    e.u32(d.t as u32);
    e.u32(d.f as u32);
    e.u8(d.label_kind as u8);
    e.u32(d.n_labels as u32);
    for ex in &d.examples {
        e.f64s(ex.frames.re().data());
        e.f64s(ex.frames.im().data());
        e.f64s(&ex.labels);
    }
    seal(&mut e.buf, HEADER_LEN);
    e.buf
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut h = Decoder::new(bytes);
    h.magic(CXS1_MAGIC)?;
    let version = h.u32()?;
    if version != CXS1_VERSION {
        return Err(FormatError::UnsupportedVersion(version).into());
    }
    let (n, t, f) = (h.u32()? as usize, h.u32()? as usize, h.u32()? as usize);
    let code = h.u8()?;
    let kind = LabelKind::from_code(code).ok_or_else(|| FormatError::Invalid(format!("label kind {code}")))?;
    let l = h.u32()? as usize;
    let per_example = (2 * t * f + kind.label_len(t, l)) * 8;
    let needed = n
        .checked_mul(per_example)
        .and_then(|p| p.checked_add(HEADER_LEN + 4))
        .ok_or_else(|| FormatError::Invalid("declared sizes overflow".into()))?;
    if bytes.len() < needed {
        return Err(FormatError::Truncated { needed, available: bytes.len() }.into());
    }
    if bytes.len() > needed {
        return Err(FormatError::Invalid(format!("{} trailing bytes", bytes.len() - needed)).into());
    }
    let body = unseal(bytes, HEADER_LEN)?;
    let mut d = Decoder::new(&body[HEADER_LEN..]);
    let mut examples = Vec::with_capacity(n);
    for _ in 0..n {
        let re = RealTensor::new(vec![t, f], d.f64s(t * f)?)?;
        let im = RealTensor::new(vec![t, f], d.f64s(t * f)?)?;
        let labels = d.f64s(kind.label_len(t, l))?;
        examples.push(SpectralSequence { frames: ComplexTensor::new(re, im)?, labels });
    }
    Dataset::new(t, f, l, kind, examples)
}

pub fn write_dataset(path: impl AsRef<Path>, d: &Dataset) -> Result<()> {
    fs::write(path, encode_dataset(d))?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    decode_dataset(&fs::read(path)?)
}
