//! Model checkpoints: a one-byte format version, a JSON header holding the
//! [`NetConfig`], then the flat parameter array as little-endian f64.

use std::io::{Read, Write};
use std::path::Path;

use super::{FlowModel, NetConfig, ParamVector};
use crate::error::{invalid, Result};

const VERSION: u8 = 1;

pub fn save<W: Write>(model: &FlowModel, mut w: W) -> Result<()> {
    let header = serde_json::to_vec(&model.config)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    w.write_all(&(model.params.len() as u64).to_le_bytes())?;
    for v in &model.params.values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn load<R: Read>(mut r: R) -> Result<FlowModel> {
    let mut version = [0u8; 1];
    r.read_exact(&mut version)?;
    if version[0] != VERSION {
        return Err(invalid(format!(
            "checkpoint version {} unsupported (expected {VERSION})",
            version[0]
        )));
    }
    let mut len4 = [0u8; 4];
    r.read_exact(&mut len4)?;
    let mut header = vec![0u8; u32::from_le_bytes(len4) as usize];
    r.read_exact(&mut header)?;
    let config: NetConfig = serde_json::from_slice(&header)?;
    config.validate()?;

    let mut len8 = [0u8; 8];
    r.read_exact(&mut len8)?;
    let count = u64::from_le_bytes(len8) as usize;
    if count != config.param_count() {
        return Err(invalid(format!(
            "checkpoint holds {count} parameters but the config needs {}",
            config.param_count()
        )));
    }
    let mut values = Vec::with_capacity(count);
    let mut buf = [0u8; 8];
    for _ in 0..count {
        r.read_exact(&mut buf)?;
        values.push(f64::from_le_bytes(buf));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(invalid("checkpoint has trailing bytes"));
    }
    Ok(FlowModel {
        params: ParamVector { values, layout: config.layer_shapes() },
        config,
    })
}

pub fn save_file(model: &FlowModel, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    save(model, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_file(path: &Path) -> Result<FlowModel> {
    let bytes = std::fs::read(path)?;
    load(bytes.as_slice())
}
