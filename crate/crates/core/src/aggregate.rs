//! Block aggregation and the explained-variance-vs-cell-size curve.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::raster::{Raster, DEFAULT_NODATA};

/// What a block mean averages over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reducer {
    /// Every valid pixel, background included.
    #[default]
    AllPixels,
    /// Only valid pixels with a positive value.
    BuildingsOnly,
}

impl Reducer {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mean" | "all" => Ok(Self::AllPixels),
            "buildings" => Ok(Self::BuildingsOnly),
            _ => bail!(Validation, "unknown reducer '{s}' (expected mean or buildings)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregationSpec {
    pub side_lengths_m: Vec<f64>,
    pub min_valid_fraction: f64,
    pub reducer: Reducer,
}

impl Default for AggregationSpec {
    fn default() -> Self {
        Self {
            side_lengths_m: (1..=200).map(|i| f64::from(i) * 10.0).collect(),
            min_valid_fraction: 0.5,
            reducer: Reducer::AllPixels,
        }
    }
}

impl AggregationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.min_valid_fraction) {
            bail!(Validation, "min_valid_fraction {} outside [0, 1]", self.min_valid_fraction);
        }
        if self.side_lengths_m.is_empty() {
            bail!(Validation, "no side lengths given");
        }
        Ok(())
    }
}

/// Block side in pixels for a side length in meters.
pub fn block_factor(r: &Raster, side_m: f64) -> Result<usize> {
    let t = &r.transform;
    if libm::fabs(t.pixel_w + t.pixel_h) > 1e-9 * t.pixel_w {
        bail!(Validation, "block aggregation needs square pixels, got {} x {}", t.pixel_w, -t.pixel_h);
    }
    let k = side_m / t.pixel_w;
    let kr = libm::round(k);
    if !(side_m > 0.0) || kr < 1.0 || libm::fabs(k - kr) > 1e-9 * kr {
        bail!(Validation, "side length {side_m} m is not a positive multiple of the {} m pixel", t.pixel_w);
    }
    Ok(kr as usize)
}

fn trust_ok(trust: Option<&[u8]>, i: usize) -> bool {
    trust.is_none_or(|t| t[i] == 1)
}

fn check_trust(r: &Raster, trust: Option<&[u8]>) -> Result<()> {
    if r.bands != 1 {
        bail!(Validation, "aggregation expects a single-band raster, got {} bands", r.bands);
    }
    if let Some(t) = trust {
        if t.len() != r.pixels() {
            bail!(Validation, "trust mask has {} pixels, raster has {}", t.len(), r.pixels());
        }
    }
    Ok(())
}

/// A grid of optional block values in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrid {
    pub width: usize,
    pub height: usize,
    pub factor: usize,
    pub values: Vec<Option<f64>>,
}

fn finish_block(sum: f64, n: u64, pos_sum: f64, pos_n: u64, k: usize, min_valid: f64, reducer: Reducer) -> Option<f64> {
    if n == 0 || (n as f64) < min_valid * (k * k) as f64 {
        return None;
    }
    Some(match reducer {
        Reducer::AllPixels => sum / n as f64,
        Reducer::BuildingsOnly if pos_n == 0 => 0.0,
        Reducer::BuildingsOnly => pos_sum / pos_n as f64,
    })
}

/// Direct block means by visiting every pixel of every block.
pub fn block_means(
    r: &Raster,
    side_m: f64,
    min_valid_fraction: f64,
    trust: Option<&[u8]>,
    reducer: Reducer,
) -> Result<BlockGrid> {
    check_trust(r, trust)?;
    let k = block_factor(r, side_m)?;
    let v = r.as_f32()?;
    let (bw, bh) = (r.width / k, r.height / k);
    let mut values = Vec::with_capacity(bw * bh);
    for by in 0..bh {
        for bx in 0..bw {
            let (mut sum, mut n, mut pos_sum, mut pos_n) = (0.0, 0u64, 0.0, 0u64);
            for y in by * k..(by + 1) * k {
                for x in bx * k..(bx + 1) * k {
                    let i = y * r.width + x;
                    if r.is_nodata(v[i]) || !trust_ok(trust, i) {
                        continue;
                    }
                    let x = f64::from(v[i]);
                    sum += x;
                    n += 1;
                    if x > 0.0 {
                        pos_sum += x;
                        pos_n += 1;
                    }
                }
            }
            values.push(finish_block(sum, n, pos_sum, pos_n, k, min_valid_fraction, reducer));
        }
    }
    Ok(BlockGrid { width: bw, height: bh, factor: k, values })
}

/// Block means as a coarse raster; failed blocks become nodata and partial
/// edge blocks are dropped.
pub fn block_mean(
    r: &Raster,
    side_m: f64,
    min_valid_fraction: f64,
    trust: Option<&[u8]>,
    reducer: Reducer,
) -> Result<Raster> {
    let g = block_means(r, side_m, min_valid_fraction, trust, reducer)?;
    let nd = DEFAULT_NODATA;
    let data = g.values.iter().map(|v| v.map_or(nd as f32, |x| x as f32)).collect();
    Raster::new(g.width, g.height, 1, nd, r.transform.scaled(g.factor), crate::RasterData::F32(data))
}

/// Summed-area tables for O(1) block sums at any block size.
#[derive(Debug, Clone)]
pub struct BlockIntegrals {
    width: usize,
    height: usize,
    sum: Vec<f64>,
    count: Vec<u64>,
    pos_sum: Vec<f64>,
    pos_count: Vec<u64>,
}

impl BlockIntegrals {
    pub fn new(r: &Raster, trust: Option<&[u8]>) -> Result<Self> {
        check_trust(r, trust)?;
        let v = r.as_f32()?;
        let (w, h) = (r.width, r.height);
        let n = (w + 1) * (h + 1);
        let mut s = Self { width: w, height: h, sum: vec![0.0; n], count: vec![0; n], pos_sum: vec![0.0; n], pos_count: vec![0; n] };
        for y in 0..h {
            let (mut rs, mut rc, mut rps, mut rpc) = (0.0, 0u64, 0.0, 0u64);
            for x in 0..w {
                let i = y * w + x;
                if !r.is_nodata(v[i]) && trust_ok(trust, i) {
                    let val = f64::from(v[i]);
                    rs += val;
                    rc += 1;
                    if val > 0.0 {
                        rps += val;
                        rpc += 1;
                    }
                }
                let o = (y + 1) * (w + 1) + x + 1;
                let up = y * (w + 1) + x + 1;
                s.sum[o] = s.sum[up] + rs;
                s.count[o] = s.count[up] + rc;
                s.pos_sum[o] = s.pos_sum[up] + rps;
                s.pos_count[o] = s.pos_count[up] + rpc;
            }
        }
        Ok(s)
    }

    fn rect<T: Copy + core::ops::Add<Output = T> + core::ops::Sub<Output = T>>(
        &self,
        t: &[T],
        x0: usize,
        y0: usize,
        x1: usize,
        y1: usize,
    ) -> T {
        let w = self.width + 1;
        t[y1 * w + x1] + t[y0 * w + x0] - t[y0 * w + x1] - t[y1 * w + x0]
    }

    pub fn block_means(&self, k: usize, min_valid_fraction: f64, reducer: Reducer) -> BlockGrid {
        let (bw, bh) = (self.width / k, self.height / k);
        let mut values = Vec::with_capacity(bw * bh);
        for by in 0..bh {
            for bx in 0..bw {
                let (x0, y0, x1, y1) = (bx * k, by * k, (bx + 1) * k, (by + 1) * k);
                values.push(finish_block(
                    self.rect(&self.sum, x0, y0, x1, y1),
                    self.rect(&self.count, x0, y0, x1, y1),
                    self.rect(&self.pos_sum, x0, y0, x1, y1),
                    self.rect(&self.pos_count, x0, y0, x1, y1),
                    k,
                    min_valid_fraction,
                    reducer,
                ));
            }
        }
        BlockGrid { width: bw, height: bh, factor: k, values }
    }
}

/// Coefficient of determination of `y = a + b x` by ordinary least squares.
/// `None` with fewer than 3 points or no variance in `y`.
pub fn ols_r2(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 3 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if syy <= 0.0 {
        return None;
    }
    if sxx <= 0.0 {
        return Some(0.0);
    }
    Some((sxy * sxy / (sxx * syy)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub side_length_m: f64,
    pub r2: Option<f64>,
    pub n_cells: usize,
}

fn paired(pred: &BlockGrid, reference: &BlockGrid) -> (Vec<f64>, Vec<f64>) {
    pred.values
        .iter()
        .zip(&reference.values)
        .filter_map(|(p, r)| Some(((*p)?, (*r)?)))
        .unzip()
}

fn require_pair(pred: &Raster, reference: &Raster, trust: Option<&[u8]>) -> Result<()> {
    reference.require_same_grid(pred, "reference")?;
    check_trust(pred, trust)?;
    check_trust(reference, trust)
}

/// R² of the reference block means regressed on the prediction block means.
pub fn r2_at_scale(
    pred: &Raster,
    reference: &Raster,
    side_m: f64,
    spec: &AggregationSpec,
    trust: Option<&[u8]>,
) -> Result<CurvePoint> {
    require_pair(pred, reference, trust)?;
    let p = block_means(pred, side_m, spec.min_valid_fraction, trust, spec.reducer)?;
    let r = block_means(reference, side_m, spec.min_valid_fraction, trust, spec.reducer)?;
    let (x, y) = paired(&p, &r);
    Ok(CurvePoint { side_length_m: side_m, r2: ols_r2(&x, &y), n_cells: x.len() })
}

/// R² at every side length of `spec`, ascending.
pub fn r2_curve(pred: &Raster, reference: &Raster, spec: &AggregationSpec, trust: Option<&[u8]>) -> Result<Vec<CurvePoint>> {
    spec.validate()?;
    require_pair(pred, reference, trust)?;
    let mut sides = spec.side_lengths_m.clone();
    sides.sort_by(f64::total_cmp);
    sides.dedup();
    let ip = BlockIntegrals::new(pred, trust)?;
    let ir = BlockIntegrals::new(reference, trust)?;
    sides
        .into_iter()
        .map(|side| {
            let k = block_factor(pred, side)?;
            let p = ip.block_means(k, spec.min_valid_fraction, spec.reducer);
            let r = ir.block_means(k, spec.min_valid_fraction, spec.reducer);
            let (x, y) = paired(&p, &r);
            Ok(CurvePoint { side_length_m: side, r2: ols_r2(&x, &y), n_cells: x.len() })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterRow {
    /// Cell-center map coordinates.
    pub cell_x: f64,
    pub cell_y: f64,
    pub log_ref: f64,
    pub log_pred: f64,
}

/// `ln(mean + 1)` pairs for cells where both means are positive.
pub fn scatter_export(
    pred: &Raster,
    reference: &Raster,
    side_m: f64,
    spec: &AggregationSpec,
    trust: Option<&[u8]>,
) -> Result<Vec<ScatterRow>> {
    require_pair(pred, reference, trust)?;
    let p = block_means(pred, side_m, spec.min_valid_fraction, trust, spec.reducer)?;
    let r = block_means(reference, side_m, spec.min_valid_fraction, trust, spec.reducer)?;
    let coarse = pred.transform.scaled(p.factor);
    let mut rows = Vec::new();
    for by in 0..p.height {
        for bx in 0..p.width {
            let i = by * p.width + bx;
            if let (Some(pv), Some(rv)) = (p.values[i], r.values[i]) {
                if pv > 0.0 && rv > 0.0 {
                    let (cx, cy) = coarse.pixel_center(bx, by);
                    rows.push(ScatterRow { cell_x: cx, cell_y: cy, log_ref: libm::log1p(rv), log_pred: libm::log1p(pv) });
                }
            }
        }
    }
    Ok(rows)
}
