//! Binary checkpoint: `VCKP`, version byte, JSON head config, named `f64`
//! tensors, CRC32 trailer. All integers and floats are little-endian.
//!
//! ```text
//! magic     4  "VCKP"
//! version   1
//! config    u32 length + UTF-8 JSON of HeadConfig
//! count     u32
//! tensor*   u16 name length + name, u8 rank, u32 extent per axis, f64 values
//! crc32     u32 over all preceding bytes
//! ```

use std::path::Path;

use super::config::HeadConfig;
use super::params::HeadParams;
use crate::binio::{len_u32, Reader, Writer};
use crate::error::{Result, VictrError};
use crate::numerics::DiffTensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"VCKP";
pub const CHECKPOINT_VERSION: u8 = 1;

pub fn encode_checkpoint(params: &HeadParams) -> Result<Vec<u8>> {
    let mut w = Writer::new(&CHECKPOINT_MAGIC, CHECKPOINT_VERSION);
    let config = serde_json::to_vec(&params.config).map_err(|e| VictrError::Config(e.to_string()))?;
    w.blob(&config)?;
    w.u32(len_u32(params.names().len())?);
    for (name, t) in params.names().iter().zip(params.tensors()) {
        w.str16(name)?;
        let rank = u8::try_from(t.shape().len()).map_err(|_| VictrError::Range("tensor rank above 255".into()))?;
        w.u8(rank);
        for &e in t.shape() {
            w.u32(len_u32(e)?);
        }
        for &v in &t.values {
            w.f64(v);
        }
    }
    Ok(w.finish())
}

pub fn decode_checkpoint(data: &[u8]) -> Result<HeadParams> {
    let mut r = Reader::open(data, &CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    Reader::precheck_crc(data)?;
    let config: HeadConfig =
        serde_json::from_slice(r.blob()?).map_err(|e| VictrError::Config(format!("checkpoint config: {e}")))?;
    let count = r.u32()? as usize;
    let mut named = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name = r.str16()?;
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| Ok(r.u32()? as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        named.push((name, DiffTensor::new(shape, values)?));
    }
    r.verify()?;
    HeadParams::from_named(config, named)
}

pub fn save_checkpoint(params: &HeadParams, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(params)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<HeadParams> {
    decode_checkpoint(&std::fs::read(path)?)
}
