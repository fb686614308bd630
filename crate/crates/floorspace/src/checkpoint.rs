//! FSM1: model checkpoint container.
//!
//! ```text
//! "FSM1" | u32 version
//! | u32 in_channels | u32 depth | u32 base_channels | u32 head
//! | u32 norm mode | f64 scale_m | f64 log_cap_m
//! | u32 stat bands (0 = none) | f64 mean x n | f64 std x n
//! | u32 parameter count
//! | per parameter: u32 name len | name | u32 ndims | u32 dims.. | f32 payload
//! ```

use std::fs;
use std::path::Path;

use floorspace_core::dataset::{HeightNormalizer, NormMode};
use floorspace_core::ingest::BandStats;
use floorspace_core::nn::{FloorspaceModel, Head, ModelConfig, Param};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"FSM1";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Config(format!("value {v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode(model: &FloorspaceModel<f32>) -> Result<Vec<u8>> {
    let c = &model.config;
    let n = &model.normalizer;
    let mut out = Vec::with_capacity(64 + model.num_parameters() * 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, c.in_channels)?;
    put_u32(&mut out, c.depth)?;
    put_u32(&mut out, c.base_channels)?;
    out.extend_from_slice(&c.head.code().to_le_bytes());
    put_u32(&mut out, usize::from(n.mode == NormMode::Log))?;
    out.extend_from_slice(&n.scale_m.to_le_bytes());
    out.extend_from_slice(&n.log_cap_m.to_le_bytes());
    match &model.band_stats {
        None => put_u32(&mut out, 0)?,
        Some(s) => {
            put_u32(&mut out, s.bands())?;
            s.mean.iter().chain(&s.std).for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        }
    }
    put_u32(&mut out, model.params().len())?;
    for p in model.params() {
        put_u32(&mut out, p.name.len())?;
        out.extend_from_slice(p.name.as_bytes());
        put_u32(&mut out, p.shape.len())?;
        for &d in &p.shape {
            put_u32(&mut out, d)?;
        }
        p.data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    }
    Ok(out)
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.b.len());
        let Some(end) = end else {
            return Err(Error::Truncated { path: self.path.into(), what, expected: n, got: self.b.len() - self.pos });
        };
        let s = &self.b[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn usize(&mut self, what: &'static str) -> Result<usize> {
        Ok(self.u32(what)? as usize)
    }

    fn f64(&mut self, what: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<FloorspaceModel<f32>> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        let mut found = [0u8; 4];
        let n = bytes.len().min(4);
        found[..n].copy_from_slice(&bytes[..n]);
        return Err(Error::BadMagic { path: path.into(), found, expected: MAGIC });
    }
    let mut r = Reader { b: bytes, pos: 4, path };
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let in_channels = r.usize("config")?;
    let depth = r.usize("config")?;
    let base_channels = r.usize("config")?;
    let head = Head::from_code(r.u32("config")?)?;
    let mode = match r.u32("config")? {
        0 => NormMode::Linear,
        1 => NormMode::Log,
        m => return Err(Error::format(path, format!("unknown normalization mode {m}"))),
    };
    let normalizer = HeightNormalizer { mode, scale_m: r.f64("config")?, log_cap_m: r.f64("config")? };
    let nb = r.usize("band stats")?;
    let band_stats = if nb == 0 {
        None
    } else {
        let mean = (0..nb).map(|_| r.f64("band stats")).collect::<Result<Vec<_>>>()?;
        let std = (0..nb).map(|_| r.f64("band stats")).collect::<Result<Vec<_>>>()?;
        Some(BandStats { mean, std })
    };
    let count = r.usize("parameter table")?;
    let mut params = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.usize("parameter name")?;
        let name = std::str::from_utf8(r.take(len, "parameter name")?)
            .map_err(|_| Error::format(path, "parameter name is not UTF-8"))?
            .to_string();
        let nd = r.usize("parameter dims")?;
        let shape = (0..nd).map(|_| r.usize("parameter dims")).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n * 4, "parameter payload")?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        params.push(Param { name, shape, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let config = ModelConfig { in_channels, depth, base_channels, head };
    Ok(FloorspaceModel::from_params(config, normalizer, band_stats, params)?)
}

pub fn read_fsm(path: impl AsRef<Path>) -> Result<FloorspaceModel<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

pub fn write_fsm(model: &FloorspaceModel<f32>, path: impl AsRef<Path>) -> Result<()> {
    crate::write_bytes(path.as_ref(), &encode(model)?)
}
