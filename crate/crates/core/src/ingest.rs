//! Temporal compositing, band stacking and per-band standardization.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::raster::{Raster, RasterData};

/// Band order of every model-ready stack.
pub const BAND_NAMES: [&str; 6] = ["VV", "VH", "B2", "B3", "B4", "B8"];

/// Scenes with more cloudy pixels than this percentage are dropped.
pub const DEFAULT_SCENE_CLOUD_LIMIT: f64 = 60.0;
/// Pixels with a cloud probability above this percentage are masked.
pub const DEFAULT_PIXEL_CLOUD_THRESHOLD: f64 = 40.0;

/// Co-registered observations of one area over time.
#[derive(Debug, Clone)]
pub struct TimeStack {
    pub observations: Vec<Raster>,
    /// Single-band cloud probability in percent, one per observation.
    /// Absent for SAR.
    pub cloud_prob: Option<Vec<Raster>>,
}

impl TimeStack {
    pub fn new(observations: Vec<Raster>, cloud_prob: Option<Vec<Raster>>) -> Result<Self> {
        let s = Self { observations, cloud_prob };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.observations.first() else {
            bail!(Ingest, "empty time stack");
        };
        for (i, o) in self.observations.iter().enumerate() {
            o.as_f32()?;
            if !o.same_grid(first) || o.bands != first.bands {
                bail!(Alignment, "observation {i} does not share the grid or band count of observation 0");
            }
        }
        if let Some(cp) = &self.cloud_prob {
            if cp.len() != self.observations.len() {
                bail!(
                    Ingest,
                    "{} cloud rasters for {} observations",
                    cp.len(),
                    self.observations.len()
                );
            }
            for (i, c) in cp.iter().enumerate() {
                c.as_f32()?;
                if c.bands != 1 || !c.same_grid(first) {
                    bail!(Alignment, "cloud raster {i} must be single-band on the observation grid");
                }
            }
        }
        Ok(())
    }
}

/// Fraction (percent) of pixels of a cloud-probability raster above the
/// pixel threshold, over pixels that are not nodata.
pub fn cloudy_percent(cloud: &Raster, pixel_threshold: f64) -> Result<f64> {
    let v = cloud.as_f32()?;
    let (mut cloudy, mut total) = (0usize, 0usize);
    for &p in v {
        if cloud.is_nodata(p) {
            continue;
        }
        total += 1;
        if f64::from(p) > pixel_threshold {
            cloudy += 1;
        }
    }
    Ok(if total == 0 { 100.0 } else { 100.0 * cloudy as f64 / total as f64 })
}

/// Per-pixel temporal mean of cloud-free observations.
///
/// Scenes whose cloudy share exceeds `scene_cloud_limit` are skipped; in the
/// remaining scenes, pixels above `pixel_cloud_threshold` are masked. Pixels
/// left without any valid observation become nodata. Sums run in scene order.
pub fn composite(stack: &TimeStack, scene_cloud_limit: f64, pixel_cloud_threshold: f64) -> Result<Raster> {
    stack.validate()?;
    let first = &stack.observations[0];
    let npx = first.pixels();
    let nbands = first.bands;

    let mut kept = Vec::new();
    for (i, obs) in stack.observations.iter().enumerate() {
        let cloud = match &stack.cloud_prob {
            Some(cp) => {
                let c = &cp[i];
                if cloudy_percent(c, pixel_cloud_threshold)? > scene_cloud_limit {
                    continue;
                }
                Some(c)
            }
            None => None,
        };
        kept.push((obs, cloud));
    }
    if kept.is_empty() {
        bail!(
            Ingest,
            "all {} scenes exceed the {scene_cloud_limit}% cloud limit",
            stack.observations.len()
        );
    }

    let nodata = first.nodata_value();
    let mut sum = vec![0f64; npx * nbands];
    let mut count = vec![0u32; npx * nbands];
    for (obs, cloud) in &kept {
        let vals = obs.as_f32()?;
        let cloud_vals = match cloud {
            Some(c) => Some((c, c.as_f32()?)),
            None => None,
        };
        for p in 0..npx {
            if let Some((c, cv)) = cloud_vals {
                let prob = cv[p];
                if !c.is_nodata(prob) && f64::from(prob) > pixel_cloud_threshold {
                    continue;
                }
            }
            for b in 0..nbands {
                let v = vals[b * npx + p];
                if obs.is_nodata(v) {
                    continue;
                }
                sum[b * npx + p] += f64::from(v);
                count[b * npx + p] += 1;
            }
        }
    }
    let data = sum
        .iter()
        .zip(&count)
        .map(|(&s, &c)| if c == 0 { nodata } else { (s / f64::from(c)) as f32 })
        .collect();
    Raster::new(first.width, first.height, nbands, first.nodata, first.transform, RasterData::F32(data))
}

/// Per-band mean and standard deviation (population) over valid pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct BandStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl BandStats {
    pub fn identity(bands: usize) -> Self {
        Self { mean: vec![0.0; bands], std: vec![1.0; bands] }
    }

    pub fn bands(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.std.len() {
            bail!(Conditioning, "band stats have {} means and {} stds", self.mean.len(), self.std.len());
        }
        for (b, (&m, &s)) in self.mean.iter().zip(&self.std).enumerate() {
            if !m.is_finite() || !s.is_finite() || s <= 0.0 {
                bail!(Conditioning, "band {b}: mean {m}, std {s} is not a usable standardization");
            }
        }
        Ok(())
    }

    /// Statistics of band-major `values` with `pixels` entries per band.
    /// `valid` is per pixel and shared across bands when given.
    pub fn from_values<'a>(
        bands: usize,
        samples: impl Iterator<Item = (&'a [f32], Option<&'a [u8]>)>,
    ) -> Result<Self> {
        let mut sum = vec![0f64; bands];
        let mut sumsq = vec![0f64; bands];
        let mut n = vec![0usize; bands];
        // Two passes keep the variance numerically clean.
        let samples: Vec<_> = samples.collect();
        for &(vals, valid) in &samples {
            let npx = vals.len() / bands;
            for b in 0..bands {
                for p in 0..npx {
                    if valid.is_none_or(|v| v[p] != 0) {
                        sum[b] += f64::from(vals[b * npx + p]);
                        n[b] += 1;
                    }
                }
            }
        }
        let mean: Vec<f64> = (0..bands)
            .map(|b| if n[b] == 0 { f64::NAN } else { sum[b] / n[b] as f64 })
            .collect();
        for &(vals, valid) in &samples {
            let npx = vals.len() / bands;
            for b in 0..bands {
                for p in 0..npx {
                    if valid.is_none_or(|v| v[p] != 0) {
                        let d = f64::from(vals[b * npx + p]) - mean[b];
                        sumsq[b] += d * d;
                    }
                }
            }
        }
        let std = (0..bands)
            .map(|b| if n[b] == 0 { f64::NAN } else { libm::sqrt(sumsq[b] / n[b] as f64) })
            .collect();
        let stats = Self { mean, std };
        stats.validate()?;
        Ok(stats)
    }
}

/// Six-band model input, ordered [VV, VH, B2, B3, B4, B8].
#[derive(Debug, Clone, PartialEq)]
pub struct BandStack {
    pub raster: Raster,
    /// Standardization applied to `raster`; `None` while values are raw.
    pub stats: Option<BandStats>,
}

/// Concatenates SAR (VV, VH) and optical (B2, B3, B4, B8) composites.
/// Output nodata is the SAR raster's sentinel.
pub fn stack_bands(s1: &Raster, s2: &Raster) -> Result<BandStack> {
    if s1.bands != 2 {
        bail!(Validation, "SAR raster must have 2 bands (VV, VH), got {}", s1.bands);
    }
    if s2.bands != 4 {
        bail!(Validation, "optical raster must have 4 bands (B2, B3, B4, B8), got {}", s2.bands);
    }
    s1.require_same_grid(s2, "band stacking")?;
    let nodata = s1.nodata_value();
    let mut data = Vec::with_capacity(s1.pixels() * 6);
    for src in [s1, s2] {
        data.extend(src.as_f32()?.iter().map(|&v| if src.is_nodata(v) { nodata } else { v }));
    }
    let raster = Raster::new(s1.width, s1.height, 6, s1.nodata, s1.transform, RasterData::F32(data))?;
    Ok(BandStack { raster, stats: None })
}

/// Maps each band to (v - mean) / std, leaving nodata in place. Without
/// `stats`, they are computed from the stack's own valid pixels.
pub fn standardize(stack: &BandStack, stats: Option<&BandStats>) -> Result<BandStack> {
    let r = &stack.raster;
    let vals = r.as_f32()?;
    let npx = r.pixels();
    let stats = match stats {
        Some(s) => {
            s.validate()?;
            s.clone()
        }
        None => {
            let mut per_band = Vec::with_capacity(r.bands);
            for b in 0..r.bands {
                let valid: Vec<u8> = vals[b * npx..(b + 1) * npx].iter().map(|&v| u8::from(!r.is_nodata(v))).collect();
                let s = BandStats::from_values(1, core::iter::once((&vals[b * npx..(b + 1) * npx], Some(valid.as_slice()))))
                    .map_err(|_| crate::Error::Conditioning(alloc::format!("band {b} is constant or empty")))?;
                per_band.push((s.mean[0], s.std[0]));
            }
            BandStats { mean: per_band.iter().map(|p| p.0).collect(), std: per_band.iter().map(|p| p.1).collect() }
        }
    };
    if stats.bands() != r.bands {
        bail!(Conditioning, "stats for {} bands applied to a {}-band stack", stats.bands(), r.bands);
    }
    let data = vals
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if r.is_nodata(v) {
                v
            } else {
                let b = i / npx;
                ((f64::from(v) - stats.mean[b]) / stats.std[b]) as f32
            }
        })
        .collect();
    Ok(BandStack {
        raster: Raster::new(r.width, r.height, r.bands, r.nodata, r.transform, RasterData::F32(data))?,
        stats: Some(stats),
    })
}
