//! Mosaic inference: tile, run, denormalize, threshold and stitch.

use alloc::vec;
use alloc::vec::Vec;

use super::{FloorspaceModel, Tensor4};
use crate::error::{bail, Result};
use crate::ingest::{standardize, BandStack, BandStats};
use crate::raster::{Raster, RasterData};

/// Footprint probability threshold; strictly above counts as building.
pub const FOOTPRINT_THRESHOLD: f32 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probability: Raster,
    pub mask: Raster,
    pub height_m: Raster,
}

fn stats_match(a: &BandStats, b: &BandStats) -> bool {
    let close = |x: f64, y: f64| libm::fabs(x - y) <= 1e-9 * libm::fabs(x).max(libm::fabs(y)).max(1.0);
    a.bands() == b.bands()
        && a.mean.iter().zip(&b.mean).all(|(&x, &y)| close(x, y))
        && a.std.iter().zip(&b.std).all(|(&x, &y)| close(x, y))
}

/// Brings `stack` into the model's input space. A raw stack is
/// standardized with the model's statistics; an already-standardized
/// stack must carry the same statistics.
pub fn conditioned_stack(model_stats: Option<&BandStats>, stack: &BandStack) -> Result<BandStack> {
    match (model_stats, &stack.stats) {
        (Some(m), Some(s)) => {
            if !stats_match(m, s) {
                bail!(Conditioning, "stack was standardized with statistics that differ from the model's");
            }
            Ok(stack.clone())
        }
        (Some(m), None) => standardize(stack, Some(m)),
        (None, _) => Ok(stack.clone()),
    }
}

/// Runs the network over the whole mosaic in `tile` x `tile` windows.
/// Rewrites a standardized input batch before the forward pass.
pub(crate) type InputMap<'a> = dyn Fn(&Tensor4<f32>) -> Result<Tensor4<f32>> + 'a;
/// Footprint logits and raw normalized heights, when the head has them.
pub(crate) type Planes = (Option<Vec<f32>>, Option<Vec<f32>>);

/// Partial windows at the right/bottom edge are zero-padded and cropped.
/// Returns per-pixel footprint logits and raw normalized heights.
pub(crate) fn infer_planes(
    model: &FloorspaceModel<f32>,
    input: &Raster,
    tile: usize,
    batch_size: usize,
    extra: Option<&InputMap<'_>>,
) -> Result<Planes> {
    let (w, h, bands) = (input.width, input.height, input.bands);
    let vals = input.as_f32()?;
    let npx = w * h;
    let tx = w.div_ceil(tile);
    let ty = h.div_ceil(tile);
    let mut logits = model.config.head.has_footprint().then(|| vec![0f32; npx]);
    let mut heights = model.config.head.has_height().then(|| vec![0f32; npx]);
    let windows: Vec<(usize, usize)> = (0..ty).flat_map(|r| (0..tx).map(move |c| (c * tile, r * tile))).collect();
    for chunk in windows.chunks(batch_size.max(1)) {
        let mut data = vec![0f32; chunk.len() * bands * tile * tile];
        for (k, &(x0, y0)) in chunk.iter().enumerate() {
            for b in 0..bands {
                for y in 0..tile.min(h - y0) {
                    for x in 0..tile.min(w - x0) {
                        let v = vals[b * npx + (y0 + y) * w + x0 + x];
                        if !input.is_nodata(v) {
                            data[((k * bands + b) * tile + y) * tile + x] = v;
                        }
                    }
                }
            }
        }
        let mut x = Tensor4::from_vec([chunk.len(), bands, tile, tile], data)?;
        if let Some(f) = extra {
            x = f(&x)?;
        }
        let out = model.forward(&x)?;
        for (k, &(x0, y0)) in chunk.iter().enumerate() {
            for y in 0..tile.min(h - y0) {
                for xx in 0..tile.min(w - x0) {
                    let src = (k * tile + y) * tile + xx;
                    let dst = (y0 + y) * w + x0 + xx;
                    if let (Some(l), Some(o)) = (logits.as_mut(), out.fp_logits.as_ref()) {
                        l[dst] = o.data[src];
                    }
                    if let (Some(hh), Some(o)) = (heights.as_mut(), out.height.as_ref()) {
                        hh[dst] = o.data[src];
                    }
                }
            }
        }
    }
    Ok((logits, heights))
}

/// Assembles output rasters from probabilities and raw normalized heights.
pub(crate) fn assemble(
    model: &FloorspaceModel<f32>,
    like: &Raster,
    probability: Vec<f32>,
    raw_height: &[f32],
) -> Result<Prediction> {
    let norm = model.normalizer;
    let mask: Vec<u8> = probability.iter().map(|&p| u8::from(p > FOOTPRINT_THRESHOLD)).collect();
    let height: Vec<f32> = raw_height
        .iter()
        .zip(&mask)
        .map(|(&h, &m)| if m == 1 { norm.denormalize(f64::from(h).clamp(0.0, 1.0)) as f32 } else { 0.0 })
        .collect();
    let (w, h, t) = (like.width, like.height, like.transform);
    Ok(Prediction {
        probability: Raster::from_f32(w, h, 1, t, probability)?,
        mask: Raster::new(w, h, 1, f64::NAN, t, RasterData::U8(mask))?,
        height_m: Raster::from_f32(w, h, 1, t, height)?,
    })
}

pub(crate) fn sigmoid(z: f32) -> f32 {
    1.0 / (1.0 + libm::expf(-z))
}

/// Predicts footprint and height for a six-band mosaic.
pub fn predict(model: &FloorspaceModel<f32>, stack: &BandStack, tile: usize, batch_size: usize) -> Result<Prediction> {
    if !model.config.head.has_footprint() || !model.config.head.has_height() {
        bail!(Validation, "single-model prediction needs a multitask head; use the two-stage predictor");
    }
    let stack = conditioned_stack(model.band_stats.as_ref(), stack)?;
    let (logits, heights) = infer_planes(model, &stack.raster, tile, batch_size, None)?;
    let prob: Vec<f32> = logits.expect("footprint head").iter().map(|&z| sigmoid(z)).collect();
    assemble(model, &stack.raster, prob, &heights.expect("height head"))
}
