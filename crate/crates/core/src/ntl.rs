//! Nightlight comparison: resampling onto the radiance grid, the
//! no-intercept scale fit, signed log-difference maps and color rendering.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::raster::{GeoTransform, Raster, RasterData, DEFAULT_NODATA};

pub const DEFAULT_CELL_M: f64 = 120.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NtlConfig {
    pub cell_m: f64,
    /// Residuals this small relative to the data count as an exact fit.
    pub slog_epsilon: f64,
}

impl Default for NtlConfig {
    fn default() -> Self {
        Self { cell_m: DEFAULT_CELL_M, slog_epsilon: 1e-9 }
    }
}

impl NtlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cell_m > 0.0 && self.cell_m.is_finite()) {
            bail!(Validation, "cell size {} must be positive", self.cell_m);
        }
        if !(self.slog_epsilon > 0.0) {
            bail!(Validation, "slog_epsilon must be positive");
        }
        Ok(())
    }
}

/// A `cell_m` grid anchored at the raster's top-left corner that covers it.
pub fn ntl_grid_like(r: &Raster, cell_m: f64) -> Result<(GeoTransform, usize, usize)> {
    let t = GeoTransform::north_up(r.transform.origin_x, r.transform.origin_y, cell_m)?;
    let w = libm::ceil(r.width as f64 * r.transform.pixel_w / cell_m) as usize;
    let h = libm::ceil(r.height as f64 * -r.transform.pixel_h / cell_m) as usize;
    Ok((t, w.max(1), h.max(1)))
}

/// Mean of the valid fine pixels whose centers fall in each cell of `ntl`.
/// Cells receiving no pixel are nodata.
pub fn align_to_ntl(height: &Raster, ntl: &Raster, trust: Option<&[u8]>) -> Result<Raster> {
    if height.bands != 1 {
        bail!(Validation, "expected a single-band height raster, got {} bands", height.bands);
    }
    if let Some(t) = trust {
        if t.len() != height.pixels() {
            bail!(Validation, "trust mask has {} pixels, raster has {}", t.len(), height.pixels());
        }
    }
    ntl.transform.validate()?;
    let v = height.as_f32()?;
    let n = ntl.width * ntl.height;
    let mut sum = vec![0.0f64; n];
    let mut count = vec![0u64; n];
    let mut overlap = false;
    for row in 0..height.height {
        for col in 0..height.width {
            let (x, y) = height.transform.pixel_center(col, row);
            let (c, r) = ntl.transform.to_pixel(x, y);
            let (c, r) = (libm::floor(c), libm::floor(r));
            if c < 0.0 || r < 0.0 || c >= ntl.width as f64 || r >= ntl.height as f64 {
                continue;
            }
            overlap = true;
            let i = row * height.width + col;
            if height.is_nodata(v[i]) || trust.is_some_and(|t| t[i] != 1) {
                continue;
            }
            let cell = r as usize * ntl.width + c as usize;
            sum[cell] += f64::from(v[i]);
            count[cell] += 1;
        }
    }
    if !overlap {
        bail!(Alignment, "height raster and nightlight grid do not overlap");
    }
    let nd = DEFAULT_NODATA as f32;
    let data = sum.iter().zip(&count).map(|(&s, &k)| if k == 0 { nd } else { (s / k as f64) as f32 }).collect();
    Raster::new(ntl.width, ntl.height, 1, DEFAULT_NODATA, ntl.transform, RasterData::F32(data))
}

fn paired_cells(pred: &Raster, target: &Raster) -> Result<Vec<(usize, f64, f64)>> {
    target.require_same_grid(pred, "nightlight target")?;
    if pred.bands != 1 || target.bands != 1 {
        bail!(Validation, "expected single-band rasters");
    }
    let (p, t) = (pred.as_f32()?, target.as_f32()?);
    Ok((0..p.len())
        .filter(|&i| !pred.is_nodata(p[i]) && !target.is_nodata(t[i]))
        .map(|i| (i, f64::from(p[i]), f64::from(t[i])))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleFit {
    /// `argmin_b sum (b pred - target)^2`
    pub scale_b: f64,
    pub pearson_r: Option<f64>,
    pub n_cells: usize,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

fn fit_pairs(cells: &[(usize, f64, f64)]) -> Result<ScaleFit> {
    if cells.len() < 2 {
        bail!(Undefined, "scale fit needs at least 2 cells valid in both rasters, got {}", cells.len());
    }
    let spp: f64 = cells.iter().map(|c| c.1 * c.1).sum();
    if spp == 0.0 {
        bail!(Undefined, "prediction is zero on every cell; scale is undefined");
    }
    let spt: f64 = cells.iter().map(|c| c.1 * c.2).sum();
    let (x, y): (Vec<f64>, Vec<f64>) = cells.iter().map(|c| (c.1, c.2)).unzip();
    Ok(ScaleFit { scale_b: spt / spp, pearson_r: pearson(&x, &y), n_cells: cells.len() })
}

pub fn fit_scale(pred: &Raster, target: &Raster) -> Result<ScaleFit> {
    fit_pairs(&paired_cells(pred, target)?)
}

/// Odd log transform `sign(z) ln(1 + |z|)`.
pub fn slog(z: f64) -> f64 {
    let m = libm::log1p(libm::fabs(z));
    if z < 0.0 {
        -m
    } else {
        m
    }
}

/// `slog((b pred - target) / std)` per cell, nodata where either input is.
///
/// An exact fit (every residual within `slog_epsilon` of the data scale)
/// yields an all-zero map; otherwise a zero spread is an error.
pub fn log_diff_map(pred: &Raster, target: &Raster, cfg: &NtlConfig) -> Result<(Raster, ScaleFit)> {
    cfg.validate()?;
    let cells = paired_cells(pred, target)?;
    let fit = fit_pairs(&cells)?;
    let d: Vec<f64> = cells.iter().map(|&(_, p, t)| fit.scale_b * p - t).collect();
    let scale = cells.iter().map(|&(_, p, t)| libm::fabs(fit.scale_b * p).max(libm::fabs(t))).fold(0.0, f64::max);
    let max_d = d.iter().map(|v| libm::fabs(*v)).fold(0.0, f64::max);
    let nd = DEFAULT_NODATA as f32;
    let mut out = vec![nd; pred.pixels()];
    if max_d <= cfg.slog_epsilon * scale {
        for &(i, _, _) in &cells {
            out[i] = 0.0;
        }
    } else {
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let std = libm::sqrt(d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n);
        if !(std > 0.0) {
            bail!(Degenerate, "residuals have zero spread; map would divide by 0");
        }
        for (&(i, _, _), &di) in cells.iter().zip(&d) {
            out[i] = slog(di / std) as f32;
        }
    }
    let r = Raster::new(pred.width, pred.height, 1, DEFAULT_NODATA, pred.transform, RasterData::F32(out))?;
    Ok((r, fit))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Palette {
    /// Blue, white, red; symmetric about 0.
    Diverging,
    /// Yellow, green, blue.
    Sequential,
}

impl Palette {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "diverging" => Ok(Self::Diverging),
            "sequential" => Ok(Self::Sequential),
            _ => bail!(Validation, "unknown palette '{s}' (expected diverging or sequential)"),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Diverging => "diverging",
            Self::Sequential => "sequential",
        }
    }

    pub fn stops(&self) -> [[u8; 3]; 3] {
        match self {
            Self::Diverging => [[33, 102, 172], [255, 255, 255], [178, 24, 43]],
            Self::Sequential => [[255, 255, 204], [65, 182, 196], [8, 29, 88]],
        }
    }

    /// Color at `t` in [0, 1].
    pub fn color(&self, t: f64) -> [u8; 3] {
        let s = self.stops();
        let t = t.clamp(0.0, 1.0);
        let (a, b, f) = if t <= 0.5 { (s[0], s[1], t * 2.0) } else { (s[1], s[2], (t - 0.5) * 2.0) };
        core::array::from_fn(|k| libm::round(f64::from(a[k]) + (f64::from(b[k]) - f64::from(a[k])) * f) as u8)
    }
}

pub const NODATA_COLOR: [u8; 3] = [255, 0, 255];

/// Linear-interpolated percentile of sorted values, `q` in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> Option<f64> {
    let n = sorted.len();
    if n == 0 {
        return None;
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(n - 1);
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedMap {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triples.
    pub rgb: Vec<u8>,
    pub palette: Palette,
    /// Values mapped to the first and last palette stop.
    pub lo: f64,
    pub hi: f64,
}

/// Maps a single-band raster to colors, clipped to the 2nd/98th percentile.
pub fn render(r: &Raster, palette: Palette) -> Result<RenderedMap> {
    if r.bands != 1 {
        bail!(Validation, "render expects a single-band raster, got {} bands", r.bands);
    }
    let vals: Vec<f32> = match &r.data {
        RasterData::F32(v) => v.clone(),
        RasterData::U8(v) => v.iter().map(|&x| f32::from(x)).collect(),
    };
    let valid = |v: f32| !r.is_nodata(v) && v.is_finite();
    let mut sorted: Vec<f64> = vals.iter().filter(|&&v| valid(v)).map(|&v| f64::from(v)).collect();
    sorted.sort_by(f64::total_cmp);
    let (mut lo, mut hi) = (percentile(&sorted, 0.02).unwrap_or(0.0), percentile(&sorted, 0.98).unwrap_or(0.0));
    if palette == Palette::Diverging {
        let m = libm::fabs(lo).max(libm::fabs(hi));
        (lo, hi) = (-m, m);
    }
    let mut rgb = Vec::with_capacity(vals.len() * 3);
    for &v in &vals {
        let c = if !valid(v) {
            NODATA_COLOR
        } else if hi > lo {
            palette.color((f64::from(v) - lo) / (hi - lo))
        } else {
            palette.color(0.5)
        };
        rgb.extend_from_slice(&c);
    }
    Ok(RenderedMap { width: r.width, height: r.height, rgb, palette, lo, hi })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fine(w: usize, h: usize, v: Vec<f32>) -> Raster {
        Raster::from_f32(w, h, 1, GeoTransform::north_up(0.0, 1200.0, 10.0).unwrap(), v).unwrap()
    }

    fn cells(v: Vec<f32>) -> Raster {
        Raster::from_f32(v.len(), 1, 1, GeoTransform::north_up(0.0, 0.0, 120.0).unwrap(), v).unwrap()
    }

    #[test]
    fn constant_block_aligns_to_one_cell() {
        let h = fine(12, 12, vec![30.0; 144]);
        let (t, w, hh) = ntl_grid_like(&h, 120.0).unwrap();
        assert_eq!((w, hh), (1, 1));
        let ntl = Raster::filled_f32(w, hh, 1, t, 0.0);
        assert_eq!(align_to_ntl(&h, &ntl, None).unwrap().as_f32().unwrap(), &[30.0]);
    }

    #[test]
    fn half_covered_cell_uses_covered_pixels() {
        let h = fine(18, 12, (0..216).map(|i| if i % 18 < 12 { 10.0 } else { 40.0 }).collect());
        let (t, w, hh) = ntl_grid_like(&h, 120.0).unwrap();
        assert_eq!((w, hh), (2, 1));
        let a = align_to_ntl(&h, &Raster::filled_f32(w, hh, 1, t, 0.0), None).unwrap();
        assert_eq!(a.as_f32().unwrap(), &[10.0, 40.0]);
    }

    #[test]
    fn disjoint_extents() {
        let h = fine(12, 12, vec![1.0; 144]);
        let far = Raster::filled_f32(2, 2, 1, GeoTransform::north_up(1e6, 1e6, 120.0).unwrap(), 0.0);
        assert!(matches!(align_to_ntl(&h, &far, None), Err(crate::Error::Alignment(_))));
    }

    #[test]
    fn scale_examples() {
        let f = fit_scale(&cells(vec![1.0, 2.0, 4.0]), &cells(vec![1.0, 2.0, 4.0])).unwrap();
        assert_eq!(f.scale_b, 1.0);
        assert!((f.pearson_r.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(fit_scale(&cells(vec![2.0, 4.0]), &cells(vec![1.0, 2.0])).unwrap().scale_b, 0.5);
        // b = (1*2 + 2*2) / (1 + 4)
        assert!((fit_scale(&cells(vec![1.0, 2.0]), &cells(vec![2.0, 2.0])).unwrap().scale_b - 1.2).abs() < 1e-15);
        assert!(matches!(fit_scale(&cells(vec![0.0, 0.0]), &cells(vec![1.0, 2.0])), Err(crate::Error::Undefined(_))));
    }

    #[test]
    fn proportional_inputs_give_zero_map() {
        let p = cells(vec![1.0, 3.0, 7.5, 2.0]);
        let t = cells(vec![3.0, 9.0, 22.5, 6.0]);
        let (m, fit) = log_diff_map(&p, &t, &NtlConfig::default()).unwrap();
        assert!((fit.scale_b - 3.0).abs() < 1e-12);
        assert!(m.as_f32().unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nodata_propagates() {
        let nd = DEFAULT_NODATA as f32;
        let (m, _) = log_diff_map(&cells(vec![1.0, 2.0, nd, 5.0]), &cells(vec![2.0, 1.0, 3.0, 4.0]), &NtlConfig::default()).unwrap();
        let v = m.as_f32().unwrap();
        assert!(m.is_nodata(v[2]) && !m.is_nodata(v[0]));
    }

    #[test]
    fn slog_identities() {
        let e1 = core::f64::consts::E - 1.0;
        assert!((slog(e1) - 1.0).abs() < 1e-15);
        assert_eq!(slog(-e1), -slog(e1));
        assert_eq!(slog(0.0), 0.0);
    }

    #[test]
    fn render_rules() {
        let m = render(&cells(vec![2.0; 5]), Palette::Sequential).unwrap();
        assert!(m.rgb.chunks(3).all(|c| c == m.rgb[..3].to_vec()));
        let d = render(&cells(vec![-1.0, 0.0, 1.0]), Palette::Diverging).unwrap();
        assert_eq!(&d.rgb[3..6], &[255, 255, 255]);
        assert_eq!((d.width, d.height), (3, 1));
        let nd = render(&cells(vec![DEFAULT_NODATA as f32, 1.0]), Palette::Sequential).unwrap();
        assert_eq!(&nd.rgb[..3], &NODATA_COLOR);
    }

    #[test]
    fn percentile_interpolates() {
        let s: Vec<f64> = (0..=100).map(f64::from).collect();
        assert_eq!(percentile(&s, 0.02), Some(2.0));
        assert_eq!(percentile(&s, 0.98), Some(98.0));
        assert_eq!(percentile(&[], 0.5), None);
    }
}
