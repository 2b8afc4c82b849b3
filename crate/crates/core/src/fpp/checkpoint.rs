use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::net::{FppConfig, FppModel, TensorSpec};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"FPPNET\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: FppConfig,
    parameter_count: usize,
    tensors: Vec<TensorSpec>,
}

/// Writes magic, version, a JSON header echoing the config and tensor table,
/// then the flat parameters as little-endian f64.
pub fn write_checkpoint<W: Write>(model: &FppModel, mut out: W) -> Result<()> {
    let header = serde_json::to_vec(&Header {
        config: model.config,
        parameter_count: model.params().len(),
        tensors: model.layout().to_vec(),
    })?;
    out.write_all(MAGIC)?;
    out.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    out.write_u64::<LittleEndian>(header.len() as u64)?;
    out.write_all(&header)?;
    for &p in model.params() {
        out.write_f64::<LittleEndian>(p)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<FppModel> {
    let bad = |m: &str| Error::format("checkpoint", m);
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
    if &magic != MAGIC {
        return Err(bad("not a predictor checkpoint"));
    }
    let version = input.read_u32::<LittleEndian>().map_err(|_| bad("truncated version"))?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let len = input.read_u64::<LittleEndian>().map_err(|_| bad("truncated header length"))?;
    if len > 1 << 24 {
        return Err(bad("header too large"));
    }
    let mut raw = vec![0u8; len as usize];
    input.read_exact(&mut raw).map_err(|_| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&raw).map_err(|e| bad(&format!("header: {e}")))?;
    header.config.validate()?;
    if header.tensors != header.config.layout() || header.parameter_count != header.config.parameter_count() {
        return Err(bad("tensor table does not match the config"));
    }
    let mut params = vec![0.0; header.parameter_count];
    input
        .read_f64_into::<LittleEndian>(&mut params)
        .map_err(|_| bad("truncated parameters"))?;
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes"));
    }
    FppModel::from_params(header.config, params)
}

pub fn save_checkpoint(model: &FppModel, path: &std::path::Path) -> Result<()> {
    write_checkpoint(model, std::io::BufWriter::new(std::fs::File::create(path)?))
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<FppModel> {
    read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
}
