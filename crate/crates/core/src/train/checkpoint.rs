//! Checkpoints: `"CXCK" | version u32 | model/task text | F u32 | L u32 |
//! n u32 | n × (name, rank u32, dims u32…, f64 data) | CRC32`, little-endian,
//! with the checksum covering everything after the version.

use std::fs;
use std::path::Path;

use super::network::Network;
use crate::codec::{seal, unseal, Decoder, Encoder};
use crate::config::Config;
use crate::error::{Error, FormatError, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CXCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const PREFIX: usize = 8;

pub fn encode_checkpoint(net: &Network) -> Vec<u8> {
    let mut e = Encoder::default();
    e.bytes(&CHECKPOINT_MAGIC);
    e.u32(CHECKPOINT_VERSION);
    e.str(&Config::model_text(&net.model, &net.task));
    e.u32(net.n_features as u32);
    e.u32(net.n_labels as u32);
    e.u32(net.store.len() as u32);
    for id in net.store.ids() {
        let t = net.store.get(id);
        e.str(net.store.name(id));
        e.u32(t.shape().len() as u32);
        for &d in t.shape() {
            e.u32(d as u32);
        }
        e.f64s(t.data());
    }
    seal(&mut e.buf, PREFIX);
    e.buf
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Network> {
    let mut head = Decoder::new(bytes);
    head.magic(CHECKPOINT_MAGIC)?;
    let version = head.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::UnsupportedVersion(version).into());
    }
    let body = unseal(bytes, PREFIX)?;
    let mut d = Decoder::new(&body[PREFIX..]);
    let (model, task) = Config::parse_model_text(&d.str()?)?;
    let (f, l) = (d.u32()? as usize, d.u32()? as usize);
    let mut net = Network::new(&model, &task, f, l, 0)?;
    let n = d.u32()? as usize;
    if n != net.store.len() {
        return Err(FormatError::Invalid(format!("checkpoint holds {n} tensors, the model has {}", net.store.len())).into());
    }
    for id in net.store.ids().collect::<Vec<_>>() {
        let name = d.str()?;
        if name != net.store.name(id) {
            return Err(FormatError::Invalid(format!("expected tensor '{}', found '{name}'", net.store.name(id))).into());
        }
        let rank = d.u32()? as usize;
        let shape = (0..rank).map(|_| d.u32().map(|v| v as usize)).collect::<Result<Vec<_>, _>>()?;
        if shape != net.store.get(id).shape() {
            return Err(FormatError::Invalid(format!("tensor '{name}' has shape {shape:?}, expected {:?}", net.store.get(id).shape())).into());
        }
        let data = d.f64s(shape.iter().product())?;
        net.store.get_mut(id).data_mut().copy_from_slice(&data);
    }
    if d.remaining() != 0 {
        return Err(FormatError::Invalid(format!("{} trailing bytes", d.remaining())).into());
    }
    Ok(net)
}

pub fn save_checkpoint(path: impl AsRef<Path>, net: &Network) -> Result<()> {
    fs::write(path, encode_checkpoint(net)).map_err(Error::from)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network> {
    decode_checkpoint(&fs::read(path)?)
}
