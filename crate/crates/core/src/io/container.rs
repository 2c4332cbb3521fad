//! Canonical dataset container.
//!
//! Little-endian throughout. Samples shorter than `T` are zero-padded on disk
//! and trimmed back to their stored length on load.
//!
//! ```text
//! magic        4 bytes  "STGD"
//! version      u32      1
//! topology     u32      0 custom, 1 kinect_v1, 2 kinect_v2, 3 shared20
//! N C T V M    u32 × 5  C = 3, M = 1
//! frame_rate   f64
//! K            u32, then K × (len u32, UTF-8 class name)
//! per sample   label u32, subject u32, length u32
//! data         f32 × N·C·T·V·M, row-major [N, C, T, V, M]
//! ```

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::sequence::{Dataset, SkeletonSequence};
use crate::topology::TopologyKind;

pub const MAGIC: &[u8; 4] = b"STGD";
pub const VERSION: u32 = 1;

pub fn write_dataset(dataset: &Dataset, mut w: impl Write) -> Result<()> {
    dataset.validate()?;
    let n = dataset.len();
    let t_max = dataset.samples.iter().map(|s| s.frames()).max().unwrap_or(0);
    let v = match dataset.samples.first() {
        Some(s) => s.joints(),
        None => dataset.topology.joint_count().unwrap_or(0),
    };
    if let Some(s) = dataset.samples.iter().find(|s| s.joints() != v) {
        return Err(Error::shape(format!("mixed joint counts {v} and {}", s.joints())));
    }
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(dataset.topology.code() as u32)?;
    for d in [n, 3, t_max, v, 1] {
        w.write_u32::<LittleEndian>(d as u32)?;
    }
    w.write_f64::<LittleEndian>(dataset.frame_rate)?;
    w.write_u32::<LittleEndian>(dataset.class_names.len() as u32)?;
    for name in &dataset.class_names {
        w.write_u32::<LittleEndian>(name.len() as u32)?;
        w.write_all(name.as_bytes())?;
    }
    for s in &dataset.samples {
        w.write_u32::<LittleEndian>(s.label as u32)?;
        w.write_u32::<LittleEndian>(s.subject_id)?;
        w.write_u32::<LittleEndian>(s.frames() as u32)?;
    }
    let mut buf = Vec::with_capacity(3 * t_max * v * 4);
    for s in &dataset.samples {
        buf.clear();
        for c in 0..3 {
            for t in 0..t_max {
                for j in 0..v {
                    let x = if t < s.frames() { s.get(c, t, j) as f32 } else { 0.0 };
                    buf.write_f32::<LittleEndian>(x)?;
                }
            }
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn truncated(e: std::io::Error) -> Error {
    Error::Format(format!("truncated dataset container: {e}"))
}

pub fn read_dataset(mut r: impl Read) -> Result<Dataset> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a dataset container (bad magic)".into()));
    }
    let version = r.read_u32::<LittleEndian>().map_err(truncated)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported container version {version}")));
    }
    let code = r.read_u32::<LittleEndian>().map_err(truncated)?;
    let topology = u8::try_from(code)
        .map_err(|_| Error::Format(format!("unknown topology code {code}")))
        .and_then(TopologyKind::from_code)?;
    let mut dims = [0usize; 5];
    for d in dims.iter_mut() {
        *d = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    }
    let [n, c, t_max, v, m] = dims;
    if c != 3 || m != 1 {
        return Err(Error::Format(format!("expected C=3, M=1, found C={c}, M={m}")));
    }
    let frame_rate = r.read_f64::<LittleEndian>().map_err(truncated)?;
    let k = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let mut class_names = Vec::with_capacity(k);
    for _ in 0..k {
        let len = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(truncated)?;
        class_names.push(String::from_utf8(name).map_err(|_| Error::Format("class name is not UTF-8".into()))?);
    }
    let mut meta = Vec::with_capacity(n);
    for _ in 0..n {
        let label = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let subject = r.read_u32::<LittleEndian>().map_err(truncated)?;
        let len = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        if len > t_max {
            return Err(Error::Format(format!("sample length {len} exceeds T={t_max}")));
        }
        meta.push((label, subject, len));
    }
    let mut samples = Vec::with_capacity(n);
    let mut raw = vec![0f32; 3 * t_max * v];
    for (label, subject, len) in meta {
        r.read_f32_into::<LittleEndian>(&mut raw).map_err(truncated)?;
        let mut coords = Vec::with_capacity(3 * len * v);
        for c in 0..3 {
            let base = c * t_max * v;
            coords.extend(raw[base..base + len * v].iter().map(|&x| x as f64));
        }
        samples.push(SkeletonSequence::from_coords(coords, len, v, topology)?.with_meta(label, subject, frame_rate));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after dataset container".into()));
    }
    Dataset::new(samples, class_names, frame_rate, topology)
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut bytes = Vec::new();
    write_dataset(dataset, &mut bytes)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let bytes = std::fs::read(path)?;
    read_dataset(bytes.as_slice())
}
