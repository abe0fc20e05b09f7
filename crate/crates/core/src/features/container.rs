//! Binary feature container and NPY export.
//!
//! Layout (little-endian):
//!
//! ```text
//! "SSDF" | version u16 | n_mels u16 | frames u16 | channels u16 | floor_db f32
//! | values f32 * (n_mels * frames * channels), row-major [mel, frame, channel]
//! ```

use std::io::{Read, Write};

use ndarray::Array3;

use super::{FeatureMap, Provenance};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SSDF";
const VERSION: u16 = 1;

fn ser_err(e: std::io::Error) -> Error {
    Error::Serialization(e.to_string())
}

pub fn write_feature_map<W: Write>(map: &FeatureMap, mut w: W) -> Result<()> {
    let [n_mels, frames, channels] = map.shape();
    let dim = |d: usize, name: &str| {
        u16::try_from(d).map_err(|_| Error::Serialization(format!("{name} {d} exceeds u16")))
    };
    let mut buf = Vec::with_capacity(16 + 4 * map.values.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&dim(n_mels, "n_mels")?.to_le_bytes());
    buf.extend_from_slice(&dim(frames, "frames")?.to_le_bytes());
    buf.extend_from_slice(&dim(channels, "channels")?.to_le_bytes());
    buf.extend_from_slice(&map.floor_db.to_le_bytes());
    for v in map.values.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf).map_err(ser_err)
}

/// Reads a container. Provenance is not stored in the container and comes
/// back empty; callers keep it in their index.
pub fn read_feature_map<R: Read>(mut r: R) -> Result<FeatureMap> {
    let mut head = [0u8; 16];
    r.read_exact(&mut head).map_err(ser_err)?;
    if &head[0..4] != MAGIC {
        return Err(Error::Serialization("not an SSDF feature container".into()));
    }
    let u16_at = |i: usize| u16::from_le_bytes([head[i], head[i + 1]]);
    let version = u16_at(4);
    if version != VERSION {
        return Err(Error::Serialization(format!("unsupported SSDF version {version}")));
    }
    let (n_mels, frames, channels) = (
        usize::from(u16_at(6)),
        usize::from(u16_at(8)),
        usize::from(u16_at(10)),
    );
    let floor_db = f32::from_le_bytes([head[12], head[13], head[14], head[15]]);
    let mut raw = vec![0u8; 4 * n_mels * frames * channels];
    r.read_exact(&mut raw).map_err(ser_err)?;
    let data: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let values = Array3::from_shape_vec((n_mels, frames, channels), data)
        .map_err(|e| Error::Serialization(e.to_string()))?;
    Ok(FeatureMap {
        values,
        floor_db,
        provenance: Provenance {
            sample_id: String::new(),
            config_hash: String::new(),
        },
    })
}

/// NPY v1.0, `<f4`, C order.
pub fn write_npy<W: Write>(map: &FeatureMap, mut w: W) -> Result<()> {
    let [a, b, c] = map.shape();
    let mut header = format!("{{'descr': '<f4', 'fortran_order': False, 'shape': ({a}, {b}, {c}), }}");
    // magic(6) + version(2) + len(2) + header + '\n' must be a multiple of 64
    let unpadded = 10 + header.len() + 1;
    header.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    header.push('\n');
    let mut buf = Vec::with_capacity(10 + header.len() + 4 * map.values.len());
    buf.extend_from_slice(b"\x93NUMPY\x01\x00");
    buf.extend_from_slice(&(header.len() as u16).to_le_bytes());
    buf.extend_from_slice(header.as_bytes());
    for v in map.values.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf).map_err(ser_err)
}

/// Reads a 3-D `<f4` C-order array written by [`write_npy`].
pub fn read_npy<R: Read>(mut r: R) -> Result<Array3<f32>> {
    let mut pre = [0u8; 10];
    r.read_exact(&mut pre).map_err(ser_err)?;
    if &pre[..6] != b"\x93NUMPY" {
        return Err(Error::Serialization("not an NPY file".into()));
    }
    let hlen = usize::from(u16::from_le_bytes([pre[8], pre[9]]));
    let mut header = vec![0u8; hlen];
    r.read_exact(&mut header).map_err(ser_err)?;
    let header = String::from_utf8_lossy(&header);
    if !header.contains("'<f4'") || header.contains("'fortran_order': True") {
        return Err(Error::Serialization("only little-endian f32 C-order arrays supported".into()));
    }
    let shape_str = header
        .split("'shape': (")
        .nth(1)
        .and_then(|s| s.split(')').next())
        .ok_or_else(|| Error::Serialization("NPY header has no shape".into()))?;
    let dims: Vec<usize> = shape_str
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Error::Serialization(format!("bad dim {s:?}"))))
        .collect::<Result<_>>()?;
    let [a, b, c] = <[usize; 3]>::try_from(dims)
        .map_err(|d| Error::Serialization(format!("expected 3 dims, got {d:?}")))?;
    let mut raw = vec![0u8; 4 * a * b * c];
    r.read_exact(&mut raw).map_err(ser_err)?;
    let data = raw
        .chunks_exact(4)
        .map(|x| f32::from_le_bytes([x[0], x[1], x[2], x[3]]))
        .collect();
    Array3::from_shape_vec((a, b, c), data).map_err(|e| Error::Serialization(e.to_string()))
}
