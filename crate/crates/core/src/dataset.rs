//! Training tiles: partitioning, filtering, deterministic splitting and
//! height-target normalization.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{bail, Result};
use crate::ingest::{BandStack, BandStats};
use crate::raster::{GeoTransform, LabelGrid};

pub const DEFAULT_TILE_SIZE: usize = 256;
pub const DEFAULT_MIN_BUILDING_FRACTION: f64 = 0.10;
pub const DEFAULT_VAL_RATIO: f64 = 0.10;
/// Every building in the reference data is below this height.
pub const DEFAULT_HEIGHT_SCALE_M: f64 = 400.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    Linear,
    Log,
}

impl NormMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            NormMode::Linear => "linear",
            NormMode::Log => "log",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(NormMode::Linear),
            "log" => Ok(NormMode::Log),
            other => bail!(Validation, "unknown height normalization '{other}' (linear|log)"),
        }
    }
}

/// Maps heights in meters onto the unit-scale regression target.
///
/// Linear: `h / scale_m`. Log: `ln(1 + h) / ln(1 + log_cap_m)`, so both modes
/// send `[0, 400]` onto `[0, 1]` with the defaults.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeightNormalizer {
    pub mode: NormMode,
    pub scale_m: f64,
    pub log_cap_m: f64,
}

impl Default for HeightNormalizer {
    fn default() -> Self {
        Self { mode: NormMode::Linear, scale_m: DEFAULT_HEIGHT_SCALE_M, log_cap_m: DEFAULT_HEIGHT_SCALE_M }
    }
}

impl HeightNormalizer {
    pub fn log() -> Self {
        Self { mode: NormMode::Log, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale_m > 0.0 && self.scale_m.is_finite()) {
            bail!(Validation, "height scale must be positive, got {}", self.scale_m);
        }
        if !(self.log_cap_m > 0.0 && self.log_cap_m.is_finite()) {
            bail!(Validation, "log cap must be positive, got {}", self.log_cap_m);
        }
        Ok(())
    }

    pub fn normalize(&self, h_m: f64) -> Result<f64> {
        if !(h_m >= 0.0) {
            bail!(Validation, "height must be non-negative, got {h_m}");
        }
        Ok(match self.mode {
            NormMode::Linear => h_m / self.scale_m,
            NormMode::Log => libm::log1p(h_m) / libm::log1p(self.log_cap_m),
        })
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        match self.mode {
            NormMode::Linear => v * self.scale_m,
            NormMode::Log => libm::expm1(v * libm::log1p(self.log_cap_m)),
        }
    }

    /// Largest height representable after clamping predictions to [0, 1].
    pub fn max_height_m(&self) -> f64 {
        self.denormalize(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TileId {
    pub city: String,
    pub row: u32,
    pub col: u32,
}

impl fmt::Display for TileId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_r{:04}_c{:04}", self.city, self.row, self.col)
    }
}

impl TileId {
    pub fn parse(s: &str) -> Result<Self> {
        let err = || crate::Error::Validation(format!("malformed tile id '{s}'"));
        let (rest, col) = s.rsplit_once("_c").ok_or_else(err)?;
        let (city, row) = rest.rsplit_once("_r").ok_or_else(err)?;
        Ok(Self {
            city: city.into(),
            row: row.parse().map_err(|_| err())?,
            col: col.parse().map_err(|_| err())?,
        })
    }
}

/// One T x T training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub id: TileId,
    pub size: usize,
    pub transform: GeoTransform,
    /// Channel-major input, nodata filled with 0.
    pub input: Vec<f32>,
    pub channels: usize,
    /// 1 where every input band was valid.
    pub validity: Vec<u8>,
    pub mask: Vec<u8>,
    pub height_norm: Vec<f32>,
    pub building_fraction: f64,
}

impl Tile {
    pub fn pixels(&self) -> usize {
        self.size * self.size
    }

    pub fn recompute_fraction(&mut self) {
        let n = self.mask.iter().filter(|&&m| m == 1).count();
        self.building_fraction = n as f64 / self.pixels() as f64;
    }

    /// Applies `(v - mean) / std` to valid pixels; invalid pixels stay 0.
    pub fn standardize(&mut self, stats: &BandStats) -> Result<()> {
        stats.validate()?;
        if stats.bands() != self.channels {
            bail!(Conditioning, "stats for {} bands applied to {}-channel tile", stats.bands(), self.channels);
        }
        let npx = self.pixels();
        for c in 0..self.channels {
            for p in 0..npx {
                if self.validity[p] != 0 {
                    let v = &mut self.input[c * npx + p];
                    *v = ((f64::from(*v) - stats.mean[c]) / stats.std[c]) as f32;
                }
            }
        }
        Ok(())
    }
}

/// Partitions the mosaic into non-overlapping `size` x `size` tiles in
/// row-major order; partial tiles along the right and bottom are dropped.
pub fn tile_grid(
    city: &str,
    stack: &BandStack,
    labels: &LabelGrid,
    size: usize,
    norm: &HeightNormalizer,
) -> Result<Vec<Tile>> {
    if size < 16 {
        bail!(Validation, "tile size must be at least 16, got {size}");
    }
    norm.validate()?;
    let r = &stack.raster;
    r.require_same_grid(&labels.mask, "tiling (stack vs labels)")?;
    labels.validate()?;
    let vals = r.as_f32()?;
    let mask = labels.mask.as_u8()?;
    let heights = labels.height_m.as_f32()?;
    let npx = r.pixels();
    let mut tiles = Vec::new();
    for ty in 0..r.height / size {
        for tx in 0..r.width / size {
            let (x0, y0) = (tx * size, ty * size);
            let mut input = vec![0f32; r.bands * size * size];
            let mut validity = vec![1u8; size * size];
            let mut tmask = vec![0u8; size * size];
            let mut th = vec![0f32; size * size];
            for y in 0..size {
                for x in 0..size {
                    let src = (y0 + y) * r.width + x0 + x;
                    let dst = y * size + x;
                    for b in 0..r.bands {
                        let v = vals[b * npx + src];
                        if r.is_nodata(v) {
                            validity[dst] = 0;
                        } else {
                            input[b * size * size + dst] = v;
                        }
                    }
                    tmask[dst] = mask[src];
                    th[dst] = norm.normalize(f64::from(heights[src]))? as f32;
                }
            }
            // A pixel with any missing band carries no input at all.
            for dst in 0..size * size {
                if validity[dst] == 0 {
                    for b in 0..r.bands {
                        input[b * size * size + dst] = 0.0;
                    }
                }
            }
            let mut tile = Tile {
                id: TileId { city: city.into(), row: ty as u32, col: tx as u32 },
                size,
                transform: r.transform.shifted(x0, y0),
                input,
                channels: r.bands,
                validity,
                mask: tmask,
                height_norm: th,
                building_fraction: 0.0,
            };
            tile.recompute_fraction();
            tiles.push(tile);
        }
    }
    Ok(tiles)
}

/// Keeps tiles whose building fraction is at least `min_building_fraction`.
pub fn filter_tiles(tiles: Vec<Tile>, min_building_fraction: f64) -> Vec<Tile> {
    tiles.into_iter().filter(|t| t.building_fraction >= min_building_fraction).collect()
}

/// Number of validation tiles for `n` tiles at `val_ratio`. Keeps at least
/// one tile on each side when `n >= 2`.
pub fn val_count(n: usize, val_ratio: f64) -> usize {
    let k = libm::round(n as f64 * val_ratio) as usize;
    if n >= 2 {
        k.clamp(1, n - 1)
    } else {
        0
    }
}

/// Splits by sorting on a seeded hash of each tile id; the first
/// `val_count` tiles go to validation. Independent of input order.
pub fn split_tiles(tiles: Vec<Tile>, val_ratio: f64, seed: u64) -> Result<(Vec<Tile>, Vec<Tile>)> {
    if !(val_ratio > 0.0 && val_ratio < 1.0) {
        bail!(Validation, "validation ratio must be in (0, 1), got {val_ratio}");
    }
    if tiles.is_empty() {
        bail!(Dataset, "no tiles to split");
    }
    let mut keyed: Vec<(u64, Tile)> = tiles
        .into_iter()
        .map(|t| (crate::hash::keyed(seed, format!("{}", t.id).as_bytes()), t))
        .collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.id.cmp(&b.1.id)));
    let k = val_count(keyed.len(), val_ratio);
    let mut val: Vec<Tile> = Vec::with_capacity(k);
    let mut train: Vec<Tile> = Vec::with_capacity(keyed.len() - k);
    for (i, (_, t)) in keyed.into_iter().enumerate() {
        if i < k {
            val.push(t);
        } else {
            train.push(t);
        }
    }
    train.sort_by(|a, b| a.id.cmp(&b.id));
    val.sort_by(|a, b| a.id.cmp(&b.id));
    Ok((train, val))
}

/// Reproducibility record for a tile set.
#[derive(Debug, Clone, PartialEq)]
pub struct TileManifest {
    pub seed: u64,
    pub tile_size: usize,
    pub min_building_fraction: f64,
    pub val_ratio: f64,
    pub normalizer: HeightNormalizer,
    pub band_stats: BandStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileSet {
    pub train: Vec<Tile>,
    pub val: Vec<Tile>,
    pub manifest: TileManifest,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TilingConfig {
    pub tile_size: usize,
    pub min_building_fraction: f64,
    pub val_ratio: f64,
    pub seed: u64,
    pub normalizer: HeightNormalizer,
}

impl Default for TilingConfig {
    fn default() -> Self {
        Self {
            tile_size: DEFAULT_TILE_SIZE,
            min_building_fraction: DEFAULT_MIN_BUILDING_FRACTION,
            val_ratio: DEFAULT_VAL_RATIO,
            seed: 0,
            normalizer: HeightNormalizer::default(),
        }
    }
}

/// Tiles, filters and splits one city. When the stack is still raw, the band
/// statistics are computed on the training split only and applied to both
/// splits; an already-standardized stack keeps its own statistics.
pub fn build_tileset(city: &str, stack: &BandStack, labels: &LabelGrid, cfg: &TilingConfig) -> Result<TileSet> {
    let tiles = tile_grid(city, stack, labels, cfg.tile_size, &cfg.normalizer)?;
    let total = tiles.len();
    let tiles = filter_tiles(tiles, cfg.min_building_fraction);
    if tiles.is_empty() {
        bail!(
            Dataset,
            "none of {total} tiles reaches building fraction {}",
            cfg.min_building_fraction
        );
    }
    let (mut train, mut val) = split_tiles(tiles, cfg.val_ratio, cfg.seed)?;
    let band_stats = match &stack.stats {
        Some(s) => s.clone(),
        None => {
            let bands = stack.raster.bands;
            let stats = BandStats::from_values(bands, train.iter().map(|t| (t.input.as_slice(), Some(t.validity.as_slice()))))?;
            for t in train.iter_mut().chain(val.iter_mut()) {
                t.standardize(&stats)?;
            }
            stats
        }
    };
    Ok(TileSet {
        train,
        val,
        manifest: TileManifest {
            seed: cfg.seed,
            tile_size: cfg.tile_size,
            min_building_fraction: cfg.min_building_fraction,
            val_ratio: cfg.val_ratio,
            normalizer: cfg.normalizer,
            band_stats,
        },
    })
}
