//! FSR1: little-endian raster container.
//!
//! ```text
//! "FSR1" | u32 width | u32 height | u32 bands | u32 dtype (0 f32, 1 u8)
//! | f64 nodata | f64 x6 geotransform (origin_x, pixel_w, 0, origin_y, 0, pixel_h)
//! | payload, band-major then row-major
//! ```

use std::fs;
use std::path::Path;

use floorspace_core::{GeoTransform, Raster, RasterData};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"FSR1";
pub const HEADER_LEN: usize = 4 + 4 * 4 + 8 + 6 * 8;

pub fn encode(r: &Raster) -> Result<Vec<u8>> {
    r.validate()?;
    let t = &r.transform;
    let mut out = Vec::with_capacity(HEADER_LEN + r.data.len() * 4);
    out.extend_from_slice(&MAGIC);
    for v in [r.width, r.height, r.bands] {
        let v = u32::try_from(v).map_err(|_| Error::Config(format!("raster dimension {v} exceeds u32")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&r.data.dtype_code().to_le_bytes());
    for v in [r.nodata, t.origin_x, t.pixel_w, 0.0, t.origin_y, 0.0, t.pixel_h] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    match &r.data {
        RasterData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        RasterData::U8(v) => out.extend_from_slice(v),
    }
    Ok(out)
}

fn u32_at(b: &[u8], o: usize) -> u32 {
    u32::from_le_bytes(b[o..o + 4].try_into().unwrap())
}

fn f64_at(b: &[u8], o: usize) -> f64 {
    f64::from_le_bytes(b[o..o + 8].try_into().unwrap())
}

/// Parses FSR1 bytes; `path` only labels errors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Raster> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        let mut found = [0u8; 4];
        let n = bytes.len().min(4);
        found[..n].copy_from_slice(&bytes[..n]);
        return Err(Error::BadMagic { path: path.into(), found, expected: MAGIC });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated { path: path.into(), what: "header", expected: HEADER_LEN, got: bytes.len() });
    }
    let (w, h, bands, code) = (u32_at(bytes, 4) as usize, u32_at(bytes, 8) as usize, u32_at(bytes, 12) as usize, u32_at(bytes, 16));
    let width = match code {
        0 => 4,
        1 => 1,
        _ => return Err(Error::UnknownDtype { path: path.into(), code }),
    };
    let nodata = f64_at(bytes, 20);
    let g: Vec<f64> = (0..6).map(|i| f64_at(bytes, 28 + 8 * i)).collect();
    if g[2] != 0.0 || g[4] != 0.0 {
        return Err(Error::format(path, "rotated geotransforms are not supported"));
    }
    let expected = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(bands))
        .and_then(|n| n.checked_mul(width))
        .ok_or_else(|| Error::format(path, "header dimensions overflow"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < expected {
        return Err(Error::Truncated { path: path.into(), what: "payload", expected, got: payload.len() });
    }
    if payload.len() > expected {
        return Err(Error::format(path, format!("{} trailing bytes after payload", payload.len() - expected)));
    }
    let data = if code == 0 {
        RasterData::F32(payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    } else {
        RasterData::U8(payload.to_vec())
    };
    let transform = GeoTransform::new(g[0], g[3], g[1], g[5])?;
    Ok(Raster::new(w, h, bands, nodata, transform, data)?)
}

pub fn read_fsr(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

pub fn write_fsr(r: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(r)?;
    crate::write_bytes(path, &bytes)
}
