//! Two-stage composition: a footprint-only model feeds a height-only model.

use alloc::vec::Vec;

use super::predict::{assemble, conditioned_stack, infer_planes, sigmoid, Prediction, FOOTPRINT_THRESHOLD};
use super::train::{train_with, History, TrainConfig};
use super::{FloorspaceModel, Head, ModelConfig, Tensor4};
use crate::dataset::{Tile, TileSet};
use crate::error::{bail, Result};
use crate::ingest::BandStack;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TwoStageMode {
    /// Stage-1 probability stacked as a seventh channel.
    A1,
    /// Bands multiplied by the stage-1 binary footprint.
    A2,
}

impl TwoStageMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A1" => Ok(Self::A1),
            "A2" => Ok(Self::A2),
            "A3" => bail!(Unsupported, "two-stage variant A3 (parallel encoders) is not supported"),
            other => bail!(Validation, "unknown two-stage mode '{other}' (expected A1 or A2)"),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::A1 => "A1",
            Self::A2 => "A2",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStage {
    pub mode: TwoStageMode,
    pub stage1: FloorspaceModel<f32>,
    pub stage2: FloorspaceModel<f32>,
}

/// Stage-2 configuration derived from `base`: height head only, with
/// seven input channels for A1.
pub fn stage2_config(base: &ModelConfig, mode: TwoStageMode) -> ModelConfig {
    let in_channels = match mode {
        TwoStageMode::A1 => base.in_channels + 1,
        TwoStageMode::A2 => base.in_channels,
    };
    ModelConfig { in_channels, head: Head::HeightOnly, ..*base }
}

/// Wraps a trained footprint-only model with a freshly initialized
/// height-only stage-2 model.
pub fn compose_two_stage(stage1: FloorspaceModel<f32>, mode: TwoStageMode, seed: u64) -> Result<TwoStage> {
    if stage1.config.head != Head::FootprintOnly {
        bail!(Validation, "stage 1 must be a footprint-only model, got head '{}'", stage1.config.head.as_str());
    }
    let mut stage2 = FloorspaceModel::init(stage2_config(&stage1.config, mode), seed)?;
    stage2.normalizer = stage1.normalizer;
    stage2.band_stats = stage1.band_stats.clone();
    Ok(TwoStage { mode, stage1, stage2 })
}

/// Builds the stage-2 input for a batch of standardized bands.
pub fn stage2_input(stage1: &FloorspaceModel<f32>, mode: TwoStageMode, x: &Tensor4<f32>) -> Result<Tensor4<f32>> {
    let logits = stage1.forward(x)?.fp_logits.expect("footprint head");
    let [n, c, h, w] = x.dims;
    let plane = h * w;
    match mode {
        TwoStageMode::A1 => {
            let mut data = Vec::with_capacity(n * (c + 1) * plane);
            for s in 0..n {
                data.extend_from_slice(x.sample(s));
                data.extend(logits.sample(s).iter().map(|&z| sigmoid(z)));
            }
            Tensor4::from_vec([n, c + 1, h, w], data)
        }
        TwoStageMode::A2 => {
            let mut out = x.clone();
            for s in 0..n {
                let mask: Vec<bool> = logits.sample(s).iter().map(|&z| sigmoid(z) > FOOTPRINT_THRESHOLD).collect();
                for (i, v) in out.sample_mut(s).iter_mut().enumerate() {
                    if !mask[i % plane] {
                        *v = 0.0;
                    }
                }
            }
            Ok(out)
        }
    }
}

impl TwoStage {
    /// Replaces each tile's input with the stage-2 input.
    pub fn stage2_tiles(&self, tiles: &[Tile]) -> Result<Vec<Tile>> {
        tiles
            .iter()
            .map(|t| {
                let x = Tensor4::from_vec([1, t.channels, t.size, t.size], t.input.clone())?;
                let y = stage2_input(&self.stage1, self.mode, &x)?;
                let mut out = t.clone();
                out.channels = y.channels();
                out.input = y.data;
                Ok(out)
            })
            .collect()
    }

    /// Trains stage 2 with the shared loss machinery; stage 1 stays fixed.
    pub fn train(self, tiles: &TileSet, cfg: &TrainConfig) -> Result<(Self, History)> {
        let train = self.stage2_tiles(&tiles.train)?;
        let val = self.stage2_tiles(&tiles.val)?;
        let TwoStage { mode, stage1, mut stage2 } = self;
        stage2.normalizer = tiles.manifest.normalizer;
        stage2.band_stats = Some(tiles.manifest.band_stats.clone());
        let (stage2, history) = train_with(stage2, &train, &val, cfg, |_| {})?;
        Ok((TwoStage { mode, stage1, stage2 }, history))
    }

    /// Footprint from stage 1, height from stage 2.
    pub fn predict(&self, stack: &BandStack, tile: usize, batch_size: usize) -> Result<Prediction> {
        let stack = conditioned_stack(self.stage2.band_stats.as_ref(), stack)?;
        let (logits, _) = infer_planes(&self.stage1, &stack.raster, tile, batch_size, None)?;
        let compose = |x: &Tensor4<f32>| stage2_input(&self.stage1, self.mode, x);
        let (_, heights) = infer_planes(&self.stage2, &stack.raster, tile, batch_size, Some(&compose))?;
        let prob: Vec<f32> = logits.expect("footprint head").iter().map(|&z| sigmoid(z)).collect();
        assemble(&self.stage2, &stack.raster, prob, &heights.expect("height head"))
    }
}
