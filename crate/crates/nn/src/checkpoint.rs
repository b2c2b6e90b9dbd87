//! Parameter checkpoints ("GPAR"): magic `GPAR`, version u16 LE, entry count
//! u32 LE, then per entry: name (u16 LE length + UTF-8 bytes), rank u8,
//! dims u32 LE each, payload f64 LE.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{NnError, Result};
use crate::model::ModelInstance;

pub const PARAM_MAGIC: &[u8; 4] = b"GPAR";
pub const PARAM_VERSION: u16 = 1;

pub fn encode_params(model: &mut ModelInstance) -> Vec<u8> {
    let entries = model.state_mut();
    let mut out = Vec::new();
    out.extend_from_slice(PARAM_MAGIC);
    out.extend_from_slice(&PARAM_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for entry in entries {
        let name = entry.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(entry.shape.len() as u8);
        for &d in &entry.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in entry.value.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_params(path: &Path, model: &mut ModelInstance) -> Result<()> {
    let bytes = encode_params(model);
    let mut f = fs::File::create(path).map_err(|e| NnError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    f.write_all(&bytes).map_err(|e| NnError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Loads a checkpoint into an already-built model; entry names, order and
/// shapes must match the model exactly.
pub fn load_params(path: &Path, model: &mut ModelInstance) -> Result<()> {
    let data = fs::read(path).map_err(|e| NnError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    decode_params(path, &data, model)
}

pub fn decode_params(path: &Path, data: &[u8], model: &mut ModelInstance) -> Result<()> {
    let err = |detail: String| NnError::Checkpoint {
        path: path.to_path_buf(),
        detail,
    };
    if data.len() < 10 || &data[0..4] != PARAM_MAGIC {
        return Err(err("bad magic".into()));
    }
    if u16::from_le_bytes([data[4], data[5]]) != PARAM_VERSION {
        return Err(err("unsupported version".into()));
    }
    let count = u32::from_le_bytes(data[6..10].try_into().unwrap()) as usize;
    let mut off = 10usize;
    let entries = model.state_mut();
    if count != entries.len() {
        return Err(err(format!(
            "{} entries in file, model has {}",
            count,
            entries.len()
        )));
    }
    for entry in entries {
        let need = |off: usize, n: usize| -> Result<()> {
            if off + n > data.len() {
                Err(err(format!("truncated at entry {}", entry.name)))
            } else {
                Ok(())
            }
        };
        need(off, 2)?;
        let name_len = u16::from_le_bytes([data[off], data[off + 1]]) as usize;
        off += 2;
        need(off, name_len)?;
        let name = std::str::from_utf8(&data[off..off + name_len])
            .map_err(|_| err("non-utf8 name".into()))?;
        if name != entry.name {
            return Err(err(format!("expected entry {}, found {name}", entry.name)));
        }
        off += name_len;
        need(off, 1)?;
        let rank = data[off] as usize;
        off += 1;
        need(off, 4 * rank)?;
        let mut dims = Vec::with_capacity(rank);
        for i in 0..rank {
            dims.push(u32::from_le_bytes(data[off + 4 * i..off + 4 * i + 4].try_into().unwrap()) as usize);
        }
        off += 4 * rank;
        if dims != entry.shape {
            return Err(err(format!(
                "shape mismatch for {}: file {dims:?}, model {:?}",
                entry.name, entry.shape
            )));
        }
        let n: usize = dims.iter().product();
        need(off, 8 * n)?;
        for (i, v) in entry.value.iter_mut().enumerate() {
            *v = f64::from_le_bytes(data[off + 8 * i..off + 8 * i + 8].try_into().unwrap());
        }
        off += 8 * n;
    }
    if off != data.len() {
        return Err(err(format!("{} trailing bytes", data.len() - off)));
    }
    Ok(())
}
