//! Binary feature-map container.
//!
//! Little-endian layout: magic `"BPFM"`, version `u32 = 1`, `H u32`, `W u32`,
//! `D u32`, flags `u32` (bit 0: geo-transform present), geo `f64 x 3`
//! (origin_east, origin_north, resolution; zeros if absent), then
//! `H*W*D` f32 payload in row-major `[row][col][channel]` order.
//! Confidence maps are stored with `D = 1`.

use byteorder::{ByteOrder, LittleEndian, ReadBytesExt, WriteBytesExt};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{ConfidenceMap, FeatureMap, GeoTransform};

pub const MAGIC: [u8; 4] = *b"BPFM";
pub const VERSION: u32 = 1;

const FLAG_GEO: u32 = 1;

/// Write a feature map to `path`; `load_container` reproduces it bit-exactly.
pub fn save_container<P: AsRef<Path>>(fm: &FeatureMap, path: P) -> Result<()> {
    if let Some(idx) = fm.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(idx));
    }
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(&MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(fm.height() as u32)?;
    w.write_u32::<LittleEndian>(fm.width() as u32)?;
    w.write_u32::<LittleEndian>(fm.dim() as u32)?;
    let flags = if fm.geo().is_some() { FLAG_GEO } else { 0 };
    w.write_u32::<LittleEndian>(flags)?;
    let (oe, on, res) = match fm.geo() {
        Some(g) => (g.origin_east, g.origin_north, g.resolution),
        None => (0.0, 0.0, 0.0),
    };
    w.write_f64::<LittleEndian>(oe)?;
    w.write_f64::<LittleEndian>(on)?;
    w.write_f64::<LittleEndian>(res)?;

    let mut buf = vec![0u8; 64 * 1024];
    for chunk in fm.data().chunks(buf.len() / 4) {
        let bytes = &mut buf[..chunk.len() * 4];
        LittleEndian::write_f32_into(chunk, bytes);
        w.write_all(bytes)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a feature map written by [`save_container`].
pub fn load_container<P: AsRef<Path>>(path: P) -> Result<FeatureMap> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if magic != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = read_u32(&mut r, "version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let h = read_u32(&mut r, "height")? as usize;
    let w = read_u32(&mut r, "width")? as usize;
    let d = read_u32(&mut r, "dim")? as usize;
    let flags = read_u32(&mut r, "flags")?;
    let mut geo_raw = [0f64; 3];
    for (i, v) in geo_raw.iter_mut().enumerate() {
        *v = r
            .read_f64::<LittleEndian>()
            .map_err(|e| truncation(e, &format!("geo field {i}")))?;
    }
    let geo = if flags & FLAG_GEO != 0 {
        Some(GeoTransform::new(geo_raw[0], geo_raw[1], geo_raw[2])?)
    } else {
        None
    };

    let n = h
        .checked_mul(w)
        .and_then(|x| x.checked_mul(d))
        .ok_or_else(|| Error::InvalidArgument("container dimensions overflow".into()))?;
    let mut data = vec![0f32; n];
    let mut byte_buf = vec![0u8; 64 * 1024];
    let mut filled = 0usize;
    while filled < n {
        let take = (n - filled).min(byte_buf.len() / 4);
        let bytes = &mut byte_buf[..take * 4];
        read_exact(&mut r, bytes, "payload")?;
        LittleEndian::read_f32_into(bytes, &mut data[filled..filled + take]);
        filled += take;
    }
    if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(idx));
    }
    FeatureMap::new(h, w, d, data, geo)
}

/// Store a confidence map as a D=1 container.
pub fn save_confidence<P: AsRef<Path>>(conf: &ConfidenceMap, path: P) -> Result<()> {
    let fm = FeatureMap::new(conf.height(), conf.width(), 1, conf.data().to_vec(), None)?;
    save_container(&fm, path)
}

/// Load a D=1 container as a confidence map, validating the [0, 1] range.
pub fn load_confidence<P: AsRef<Path>>(path: P) -> Result<ConfidenceMap> {
    let fm = load_container(path)?;
    if fm.dim() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "confidence container must have D = 1, got {}",
            fm.dim()
        )));
    }
    ConfidenceMap::new(fm.height(), fm.width(), fm.data().to_vec())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| truncation(e, what))
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    r.read_u32::<LittleEndian>().map_err(|e| truncation(e, what))
}

fn truncation(e: std::io::Error, what: &str) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Truncated(format!("while reading {what}"))
    } else {
        Error::Io(e)
    }
}
