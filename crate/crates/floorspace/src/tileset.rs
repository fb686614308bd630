//! Tile set directories: `tiles/<id>.fsr` plus `tileset.json`.
//!
//! Each tile file is an f32 FSR1 raster with the input channels followed by
//! validity, footprint mask and normalized height bands.

use std::fs;
use std::path::Path;

use floorspace_core::dataset::{HeightNormalizer, NormMode, Tile, TileId, TileManifest, TileSet};
use floorspace_core::ingest::BandStats;
use floorspace_core::{Raster, RasterData};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsr::{read_fsr, write_fsr};

pub const MANIFEST_FILE: &str = "tileset.json";
pub const TILE_DIR: &str = "tiles";
/// Label bands appended after the input channels.
const LABEL_BANDS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationJson {
    pub mode: String,
    pub scale_m: f64,
    pub log_cap_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandStatsJson {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileSetJson {
    pub seed: u64,
    pub tile_size: usize,
    pub min_building_fraction: f64,
    pub val_ratio: f64,
    pub channels: usize,
    pub normalization: NormalizationJson,
    pub band_stats: BandStatsJson,
    pub train: Vec<String>,
    pub val: Vec<String>,
}

impl TileSetJson {
    pub fn from_tileset(ts: &TileSet) -> Self {
        let m = &ts.manifest;
        Self {
            seed: m.seed,
            tile_size: m.tile_size,
            min_building_fraction: m.min_building_fraction,
            val_ratio: m.val_ratio,
            channels: m.band_stats.bands(),
            normalization: NormalizationJson {
                mode: m.normalizer.mode.as_str().into(),
                scale_m: m.normalizer.scale_m,
                log_cap_m: m.normalizer.log_cap_m,
            },
            band_stats: BandStatsJson { mean: m.band_stats.mean.clone(), std: m.band_stats.std.clone() },
            train: ts.train.iter().map(|t| t.id.to_string()).collect(),
            val: ts.val.iter().map(|t| t.id.to_string()).collect(),
        }
    }

    pub fn manifest(&self) -> Result<TileManifest> {
        let normalizer = HeightNormalizer {
            mode: NormMode::parse(&self.normalization.mode)?,
            scale_m: self.normalization.scale_m,
            log_cap_m: self.normalization.log_cap_m,
        };
        normalizer.validate()?;
        let band_stats = BandStats { mean: self.band_stats.mean.clone(), std: self.band_stats.std.clone() };
        band_stats.validate()?;
        Ok(TileManifest {
            seed: self.seed,
            tile_size: self.tile_size,
            min_building_fraction: self.min_building_fraction,
            val_ratio: self.val_ratio,
            normalizer,
            band_stats,
        })
    }
}

pub fn tile_to_raster(t: &Tile) -> Result<Raster> {
    let mut data = Vec::with_capacity((t.channels + LABEL_BANDS) * t.pixels());
    data.extend_from_slice(&t.input);
    data.extend(t.validity.iter().map(|&v| f32::from(v)));
    data.extend(t.mask.iter().map(|&v| f32::from(v)));
    data.extend_from_slice(&t.height_norm);
    Ok(Raster::new(t.size, t.size, t.channels + LABEL_BANDS, f64::NAN, t.transform, RasterData::F32(data))?)
}

fn label_band(r: &Raster, band: usize, path: &Path, what: &str) -> Result<Vec<u8>> {
    r.band_f32(band)
        .into_iter()
        .map(|v| {
            if v == 0.0 || v == 1.0 {
                Ok(v as u8)
            } else {
                Err(Error::format(path, format!("{what} band holds {v}, expected 0 or 1")))
            }
        })
        .collect()
}

pub fn tile_from_raster(id: TileId, r: &Raster, channels: usize, path: &Path) -> Result<Tile> {
    if r.width != r.height || r.bands != channels + LABEL_BANDS {
        return Err(Error::format(
            path,
            format!("tile is {}x{} with {} bands, expected square with {}", r.width, r.height, r.bands, channels + LABEL_BANDS),
        ));
    }
    let vals = r.as_f32()?;
    let npx = r.pixels();
    let mut tile = Tile {
        id,
        size: r.width,
        transform: r.transform,
        input: vals[..channels * npx].to_vec(),
        channels,
        validity: label_band(r, channels, path, "validity")?,
        mask: label_band(r, channels + 1, path, "mask")?,
        height_norm: r.band_f32(channels + 2),
        building_fraction: 0.0,
    };
    tile.recompute_fraction();
    Ok(tile)
}

pub fn write_tileset(ts: &TileSet, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    for t in ts.train.iter().chain(&ts.val) {
        write_fsr(&tile_to_raster(t)?, dir.join(TILE_DIR).join(format!("{}.fsr", t.id)))?;
    }
    let json = serde_json::to_vec_pretty(&TileSetJson::from_tileset(ts)).expect("manifest serializes");
    crate::write_bytes(&dir.join(MANIFEST_FILE), &json)
}

pub fn read_tileset(dir: impl AsRef<Path>) -> Result<TileSet> {
    let dir = dir.as_ref();
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let json: TileSetJson = serde_json::from_str(&text).map_err(|e| Error::format(&mpath, e.to_string()))?;
    let manifest = json.manifest()?;
    let load = |ids: &[String]| -> Result<Vec<Tile>> {
        ids.iter()
            .map(|s| {
                let path = dir.join(TILE_DIR).join(format!("{s}.fsr"));
                let tile = tile_from_raster(TileId::parse(s)?, &read_fsr(&path)?, json.channels, &path)?;
                if tile.size != manifest.tile_size {
                    return Err(Error::format(&path, format!("tile size {} differs from manifest {}", tile.size, manifest.tile_size)));
                }
                Ok(tile)
            })
            .collect()
    };
    Ok(TileSet { train: load(&json.train)?, val: load(&json.val)?, manifest })
}
