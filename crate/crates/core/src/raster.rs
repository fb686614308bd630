//! Georeferenced north-up rasters.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};

/// Nodata sentinel used when a float raster is created without one.
pub const DEFAULT_NODATA: f64 = -9999.0;

/// Affine pixel-to-map mapping for north-up grids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoTransform {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_w: f64,
    pub pixel_h: f64,
}

impl GeoTransform {
    pub fn new(origin_x: f64, origin_y: f64, pixel_w: f64, pixel_h: f64) -> Result<Self> {
        let t = Self { origin_x, origin_y, pixel_w, pixel_h };
        t.validate()?;
        Ok(t)
    }

    /// Square north-up pixels of `size` meters.
    pub fn north_up(origin_x: f64, origin_y: f64, size: f64) -> Result<Self> {
        Self::new(origin_x, origin_y, size, -size)
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.origin_x, self.origin_y, self.pixel_w, self.pixel_h];
        if vals.iter().any(|v| !v.is_finite()) {
            bail!(Validation, "geotransform has non-finite values");
        }
        if self.pixel_w <= 0.0 {
            bail!(Validation, "pixel width must be positive, got {}", self.pixel_w);
        }
        if self.pixel_h >= 0.0 {
            bail!(Validation, "pixel height must be negative (north-up), got {}", self.pixel_h);
        }
        Ok(())
    }

    /// Map coordinates of the center of pixel (col, row).
    pub fn pixel_center(&self, col: usize, row: usize) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.pixel_w,
            self.origin_y + (row as f64 + 0.5) * self.pixel_h,
        )
    }

    /// Fractional (col, row) of a map coordinate.
    pub fn to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.origin_x) / self.pixel_w, (y - self.origin_y) / self.pixel_h)
    }

    /// Transform of the sub-grid starting at pixel (x0, y0).
    pub fn shifted(&self, x0: usize, y0: usize) -> Self {
        Self {
            origin_x: self.origin_x + x0 as f64 * self.pixel_w,
            origin_y: self.origin_y + y0 as f64 * self.pixel_h,
            ..*self
        }
    }

    /// Transform with pixels `factor` times larger and the same origin.
    pub fn scaled(&self, factor: usize) -> Self {
        Self {
            pixel_w: self.pixel_w * factor as f64,
            pixel_h: self.pixel_h * factor as f64,
            ..*self
        }
    }

    /// Map-space bounds as (min_x, min_y, max_x, max_y).
    pub fn bounds(&self, width: usize, height: usize) -> (f64, f64, f64, f64) {
        let x1 = self.origin_x + width as f64 * self.pixel_w;
        let y1 = self.origin_y + height as f64 * self.pixel_h;
        (self.origin_x, y1, x1, self.origin_y)
    }
}

/// Pixel storage. Band-major, then row-major.
///
/// Equality is bitwise, so NaN payloads and signed zeros compare exactly.
#[derive(Debug, Clone)]
pub enum RasterData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl PartialEq for RasterData {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Self::F32(a), Self::F32(b)) => a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()),
            (Self::U8(a), Self::U8(b)) => a == b,
            _ => false,
        }
    }
}

impl RasterData {
    pub fn len(&self) -> usize {
        match self {
            RasterData::F32(v) => v.len(),
            RasterData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Numeric code used by the on-disk format.
    pub fn dtype_code(&self) -> u32 {
        match self {
            RasterData::F32(_) => 0,
            RasterData::U8(_) => 1,
        }
    }
}

/// Equality is bitwise on the nodata value and float payload.
#[derive(Debug, Clone)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    /// Only meaningful for float rasters. NaN means "NaN is nodata".
    pub nodata: f64,
    pub transform: GeoTransform,
    pub data: RasterData,
}

impl PartialEq for Raster {
    fn eq(&self, o: &Self) -> bool {
        (self.width, self.height, self.bands) == (o.width, o.height, o.bands)
            && self.nodata.to_bits() == o.nodata.to_bits()
            && self.transform == o.transform
            && self.data == o.data
    }
}

impl Raster {
    pub fn new(
        width: usize,
        height: usize,
        bands: usize,
        nodata: f64,
        transform: GeoTransform,
        data: RasterData,
    ) -> Result<Self> {
        let r = Self { width, height, bands, nodata, transform, data };
        r.validate()?;
        Ok(r)
    }

    pub fn from_f32(
        width: usize,
        height: usize,
        bands: usize,
        transform: GeoTransform,
        data: Vec<f32>,
    ) -> Result<Self> {
        Self::new(width, height, bands, DEFAULT_NODATA, transform, RasterData::F32(data))
    }

    pub fn from_u8(width: usize, height: usize, transform: GeoTransform, data: Vec<u8>) -> Result<Self> {
        Self::new(width, height, 1, f64::NAN, transform, RasterData::U8(data))
    }

    pub fn filled_f32(width: usize, height: usize, bands: usize, transform: GeoTransform, v: f32) -> Self {
        Self {
            width,
            height,
            bands,
            nodata: DEFAULT_NODATA,
            transform,
            data: RasterData::F32(vec![v; width * height * bands]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.transform.validate()?;
        let expect = self
            .width
            .checked_mul(self.height)
            .and_then(|n| n.checked_mul(self.bands))
            .ok_or_else(|| crate::Error::Validation("raster dimensions overflow".into()))?;
        if self.data.len() != expect {
            bail!(
                Validation,
                "raster data length {} != {}x{}x{}",
                self.data.len(),
                self.width,
                self.height,
                self.bands
            );
        }
        if let RasterData::F32(v) = &self.data {
            if let Some(i) = v.iter().position(|&x| !x.is_finite() && !self.is_nodata(x)) {
                bail!(Validation, "non-finite value at index {i} is not nodata");
            }
        }
        Ok(())
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn is_nodata(&self, v: f32) -> bool {
        if self.nodata.is_nan() {
            v.is_nan()
        } else {
            f64::from(v) == self.nodata
        }
    }

    /// Value written into nodata pixels.
    pub fn nodata_value(&self) -> f32 {
        self.nodata as f32
    }

    pub fn as_f32(&self) -> Result<&[f32]> {
        match &self.data {
            RasterData::F32(v) => Ok(v),
            RasterData::U8(_) => bail!(Validation, "expected a float32 raster, got uint8"),
        }
    }

    pub fn as_u8(&self) -> Result<&[u8]> {
        match &self.data {
            RasterData::U8(v) => Ok(v),
            RasterData::F32(_) => bail!(Validation, "expected a uint8 raster, got float32"),
        }
    }

    /// Values of band `b` as f32 (uint8 widened).
    pub fn band_f32(&self, b: usize) -> Vec<f32> {
        let n = self.pixels();
        match &self.data {
            RasterData::F32(v) => v[b * n..(b + 1) * n].to_vec(),
            RasterData::U8(v) => v[b * n..(b + 1) * n].iter().map(|&x| f32::from(x)).collect(),
        }
    }

    /// Per-pixel validity of band `b` (uint8 rasters are always valid).
    pub fn band_valid(&self, b: usize) -> Vec<bool> {
        let n = self.pixels();
        match &self.data {
            RasterData::F32(v) => v[b * n..(b + 1) * n].iter().map(|&x| !self.is_nodata(x)).collect(),
            RasterData::U8(_) => vec![true; n],
        }
    }

    pub fn same_grid(&self, other: &Raster) -> bool {
        self.width == other.width && self.height == other.height && self.transform == other.transform
    }

    pub fn require_same_grid(&self, other: &Raster, what: &str) -> Result<()> {
        if !self.same_grid(other) {
            bail!(
                Alignment,
                "{what}: grids differ ({}x{} {:?} vs {}x{} {:?})",
                self.width,
                self.height,
                self.transform,
                other.width,
                other.height,
                other.transform
            );
        }
        Ok(())
    }

    /// Sub-raster of `w`x`h` pixels starting at (x0, y0).
    pub fn window(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Raster> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            bail!(
                Bounds,
                "window ({x0},{y0},{w},{h}) outside {}x{} raster",
                self.width,
                self.height
            );
        }
        fn copy<T: Copy>(src: &[T], r: &Raster, x0: usize, y0: usize, w: usize, h: usize) -> Vec<T> {
            let mut out = Vec::with_capacity(w * h * r.bands);
            for b in 0..r.bands {
                for row in y0..y0 + h {
                    let start = b * r.pixels() + row * r.width + x0;
                    out.extend_from_slice(&src[start..start + w]);
                }
            }
            out
        }
        let data = match &self.data {
            RasterData::F32(v) => RasterData::F32(copy(v, self, x0, y0, w, h)),
            RasterData::U8(v) => RasterData::U8(copy(v, self, x0, y0, w, h)),
        };
        Ok(Raster {
            width: w,
            height: h,
            bands: self.bands,
            nodata: self.nodata,
            transform: self.transform.shifted(x0, y0),
            data,
        })
    }
}

/// Rasterized reference: binary footprint plus height in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelGrid {
    pub mask: Raster,
    pub height_m: Raster,
}

impl LabelGrid {
    pub fn validate(&self) -> Result<()> {
        self.mask.validate()?;
        self.height_m.validate()?;
        self.mask.require_same_grid(&self.height_m, "label grid")?;
        let m = self.mask.as_u8()?;
        let h = self.height_m.as_f32()?;
        if self.mask.bands != 1 || self.height_m.bands != 1 {
            bail!(Validation, "label rasters must be single-band");
        }
        for (i, (&mv, &hv)) in m.iter().zip(h).enumerate() {
            match mv {
                0 if hv != 0.0 => bail!(Validation, "pixel {i}: background with height {hv}"),
                1 if !(hv > 0.0) => bail!(Validation, "pixel {i}: building without positive height"),
                0 | 1 => {}
                other => bail!(Validation, "pixel {i}: mask value {other} not in {{0,1}}"),
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.mask.width
    }

    pub fn height(&self) -> usize {
        self.mask.height
    }
}
