//! Checkpoint container.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic        4 bytes  "STGC"
//! version      u32      1
//! header_len   u32
//! header       JSON     {"model": ModelConfig, "head": HeadSpec}
//! count        u32      number of tensors
//! per tensor:
//!   name_len   u32, name (UTF-8)
//!   kind       u8       0 = weight, 1 = running statistic
//!   trainable  u8
//!   ndim       u32, dims (u32 each)
//!   values     f64 × prod(dims)
//! ```

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::{HeadSpec, ModelConfig, ParamKind, StGcn};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"STGC";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    head: HeadSpec,
}

pub fn to_bytes(model: &StGcn) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.write_all(MAGIC)?;
    out.write_u32::<LittleEndian>(VERSION)?;
    let header = serde_json::to_vec(&Header {
        model: model.config().clone(),
        head: model.head_spec().clone(),
    })?;
    out.write_u32::<LittleEndian>(header.len() as u32)?;
    out.write_all(&header)?;
    out.write_u32::<LittleEndian>(model.params().len() as u32)?;
    for p in model.params() {
        out.write_u32::<LittleEndian>(p.name.len() as u32)?;
        out.write_all(p.name.as_bytes())?;
        out.write_u8(match p.kind {
            ParamKind::Weight => 0,
            ParamKind::RunningStat => 1,
        })?;
        out.write_u8(p.trainable as u8)?;
        out.write_u32::<LittleEndian>(p.shape.len() as u32)?;
        for &d in &p.shape {
            out.write_u32::<LittleEndian>(d as u32)?;
        }
        for &v in &p.value {
            out.write_f64::<LittleEndian>(v)?;
        }
    }
    Ok(out)
}

fn format_err(e: std::io::Error) -> Error {
    Error::Format(format!("truncated checkpoint: {e}"))
}

pub fn from_bytes(bytes: &[u8]) -> Result<StGcn> {
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(format_err)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.read_u32::<LittleEndian>().map_err(format_err)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = r.read_u32::<LittleEndian>().map_err(format_err)? as usize;
    let mut header = vec![0u8; len];
    r.read_exact(&mut header).map_err(format_err)?;
    let header: Header = serde_json::from_slice(&header)?;
    let mut model = StGcn::new(header.model, header.head, 0)?;
    let count = r.read_u32::<LittleEndian>().map_err(format_err)? as usize;
    if count != model.params().len() {
        return Err(Error::Format(format!(
            "checkpoint has {count} tensors, architecture needs {}",
            model.params().len()
        )));
    }
    for i in 0..count {
        let name_len = r.read_u32::<LittleEndian>().map_err(format_err)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(format_err)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let kind = r.read_u8().map_err(format_err)?;
        let trainable = r.read_u8().map_err(format_err)? != 0;
        let ndim = r.read_u32::<LittleEndian>().map_err(format_err)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.read_u32::<LittleEndian>().map_err(format_err)? as usize);
        }
        let param = &mut model.params_mut()[i];
        let expected_kind = match param.kind {
            ParamKind::Weight => 0,
            ParamKind::RunningStat => 1,
        };
        if param.name != name || param.shape != shape || kind != expected_kind {
            return Err(Error::Format(format!(
                "tensor {i}: found `{name}` {shape:?}, expected `{}` {:?}",
                param.name, param.shape
            )));
        }
        for v in param.value.iter_mut() {
            *v = r.read_f64::<LittleEndian>().map_err(format_err)?;
        }
        param.trainable = trainable;
    }
    if (r.position() as usize) != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(model)
}

pub fn save(model: &StGcn, path: impl AsRef<Path>) -> Result<()> {
    let bytes = to_bytes(model)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<StGcn> {
    from_bytes(&std::fs::read(path)?)
}
