//! Deterministic mini-batch training with Adam and a step learning-rate
//! schedule.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{loss_sums_and_grad, LossSums, LossValue, LossWeights, Targets};
use super::{FloorspaceModel, Scalar, Tensor4};
use crate::augment::{augment, tile_rng, AugmentPolicy, AugmentRanges};
use crate::dataset::{Tile, TileSet};
use crate::error::{bail, Result};

/// Height-task coefficients explored in the task-weighting sweep.
pub const HEIGHT_TASK_COEFFICIENTS: [f64; 5] = [0.05, 0.1, 0.2, 1.0, 10.0];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr_init: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_epoch: usize,
    pub epochs: usize,
    pub footprint_weight: f64,
    pub height_weight: f64,
    pub height_task_coefficient_grid: Vec<f64>,
    pub smooth_l1_delta: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub augment: AugmentPolicy,
    pub augment_ranges: AugmentRanges,
    /// Stop after this many optimizer steps, if set.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_init: 1e-3,
            lr_decay_factor: 0.1,
            lr_decay_epoch: 50,
            epochs: 100,
            footprint_weight: 0.1,
            height_weight: 1.0,
            height_task_coefficient_grid: HEIGHT_TASK_COEFFICIENTS.to_vec(),
            smooth_l1_delta: 1.0,
            batch_size: 8,
            seed: 0,
            augment: AugmentPolicy::None,
            augment_ranges: AugmentRanges::default(),
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr_init", self.lr_init),
            ("lr_decay_factor", self.lr_decay_factor),
            ("footprint_weight", self.footprint_weight),
            ("height_weight", self.height_weight),
            ("smooth_l1_delta", self.smooth_l1_delta),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                bail!(Validation, "{name} must be positive, got {v}");
            }
        }
        if self.height_task_coefficient_grid.iter().any(|&c| !(c > 0.0)) {
            bail!(Validation, "task coefficients must be positive");
        }
        if self.epochs == 0 {
            bail!(Validation, "epochs must be positive");
        }
        if self.lr_decay_epoch >= self.epochs {
            bail!(Validation, "lr_decay_epoch {} must be below epochs {}", self.lr_decay_epoch, self.epochs);
        }
        if self.batch_size == 0 {
            bail!(Validation, "batch_size must be positive");
        }
        Ok(())
    }

    /// Learning rate for a 0-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch < self.lr_decay_epoch {
            self.lr_init
        } else {
            self.lr_init * self.lr_decay_factor
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            footprint_weight: self.footprint_weight,
            height_weight: self.height_weight,
            smooth_l1_delta: self.smooth_l1_delta,
        }
    }

    /// One configuration per height-task coefficient.
    pub fn coefficient_sweep(&self) -> Vec<TrainConfig> {
        self.height_task_coefficient_grid
            .iter()
            .map(|&c| TrainConfig { height_weight: c, ..self.clone() })
            .collect()
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<S> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(model: &FloorspaceModel<S>) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: model.zero_grads(), v: model.zero_grads() }
    }

    pub fn step(&mut self, model: &mut FloorspaceModel<S>, grads: &[Vec<S>], lr: f64) {
        self.t += 1;
        let b1 = S::from_f64(self.beta1);
        let b2 = S::from_f64(self.beta2);
        let c1 = S::one() - b1;
        let c2 = S::one() - b2;
        let bias1 = 1.0 - libm::pow(self.beta1, f64::from(self.t));
        let bias2 = 1.0 - libm::pow(self.beta2, f64::from(self.t));
        let step = S::from_f64(lr / bias1);
        let inv_bias2 = S::from_f64(1.0 / bias2);
        let eps = S::from_f64(self.eps);
        for (pi, p) in model.params_mut().iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[pi], &mut self.v[pi], &grads[pi]);
            for i in 0..p.data.len() {
                m[i] = b1 * m[i] + c1 * g[i];
                v[i] = b2 * v[i] + c2 * g[i] * g[i];
                p.data[i] -= step * m[i] / ((v[i] * inv_bias2).sqrt() + eps);
            }
        }
    }
}

/// A stacked mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<S> {
    pub input: Tensor4<S>,
    pub mask: Vec<u8>,
    pub target: Vec<S>,
    pub validity: Vec<u8>,
}

impl<S: Scalar> Batch<S> {
    pub fn from_tiles(tiles: &[&Tile]) -> Result<Self> {
        let Some(first) = tiles.first() else { bail!(Dataset, "empty batch") };
        let (t, c) = (first.size, first.channels);
        let mut input = Vec::with_capacity(tiles.len() * c * t * t);
        let mut mask = Vec::with_capacity(tiles.len() * t * t);
        let mut target = Vec::with_capacity(tiles.len() * t * t);
        let mut validity = Vec::with_capacity(tiles.len() * t * t);
        for tile in tiles {
            if tile.size != t || tile.channels != c {
                bail!(Shape, "tile {} is {}x{}x{}, batch expects {c}x{t}x{t}", tile.id, tile.channels, tile.size, tile.size);
            }
            input.extend(tile.input.iter().map(|&v| S::from_f64(f64::from(v))));
            mask.extend_from_slice(&tile.mask);
            target.extend(tile.height_norm.iter().map(|&v| S::from_f64(f64::from(v))));
            validity.extend_from_slice(&tile.validity);
        }
        Ok(Self { input: Tensor4::from_vec([tiles.len(), c, t, t], input)?, mask, target, validity })
    }

    pub fn targets(&self) -> Targets<'_, S> {
        Targets { mask: &self.mask, height: &self.target, validity: &self.validity }
    }
}

/// Loss and gradients for one batch.
pub fn batch_gradients<S: Scalar>(
    model: &FloorspaceModel<S>,
    batch: &Batch<S>,
    w: &LossWeights,
) -> Result<(LossValue, Vec<Vec<S>>)> {
    let (out, trace) = model.forward_trace(&batch.input)?;
    let (sums, dfp, dh) = loss_sums_and_grad(out.fp_logits.as_ref(), out.height.as_ref(), &batch.targets(), w, true)?;
    let value = sums.value(w, out.fp_logits.is_some(), out.height.is_some());
    let grads = model.backward(&trace, dfp.as_ref(), dh.as_ref())?;
    Ok((value, grads))
}

/// Pixel counts of thresholded footprint vs reference over valid pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn dice(&self) -> Option<f64> {
        let d = 2 * self.tp + self.fp + self.fn_;
        (d > 0).then(|| 2.0 * self.tp as f64 / d as f64)
    }
}

/// Pooled loss, Dice and height MAE over a tile list.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalSummary {
    pub loss: LossValue,
    pub confusion: Confusion,
    /// MAE in meters over valid reference-building pixels, after zeroing
    /// heights where the predicted footprint is background.
    pub mae_m: Option<f64>,
}

pub fn evaluate(model: &FloorspaceModel<f32>, tiles: &[Tile], w: &LossWeights, batch_size: usize) -> Result<EvalSummary> {
    let mut sums = LossSums::default();
    let mut conf = Confusion::default();
    let (mut abs_err, mut n_h) = (0f64, 0u64);
    let norm = model.normalizer;
    for chunk in tiles.chunks(batch_size.max(1)) {
        let refs: Vec<&Tile> = chunk.iter().collect();
        let batch = Batch::<f32>::from_tiles(&refs)?;
        let out = model.forward(&batch.input)?;
        let (s, _, _) = loss_sums_and_grad(out.fp_logits.as_ref(), out.height.as_ref(), &batch.targets(), w, false)?;
        sums.add(&s);
        for i in 0..batch.mask.len() {
            if batch.validity[i] != 1 {
                continue;
            }
            let r = batch.mask[i] == 1;
            let p = out.fp_logits.as_ref().is_none_or(|z| z.data[i] > 0.0);
            match (p, r) {
                (true, true) => conf.tp += 1,
                (true, false) => conf.fp += 1,
                (false, true) => conf.fn_ += 1,
                (false, false) => conf.tn += 1,
            }
            if r {
                if let Some(h) = out.height.as_ref() {
                    let pred_m = if p { norm.denormalize(f64::from(h.data[i]).clamp(0.0, 1.0)) } else { 0.0 };
                    let ref_m = norm.denormalize(f64::from(batch.target[i]));
                    abs_err += libm::fabs(pred_m - ref_m);
                    n_h += 1;
                }
            }
        }
    }
    let has_fp = model.config.head.has_footprint();
    let has_h = model.config.head.has_height();
    Ok(EvalSummary {
        loss: sums.value(w, has_fp, has_h),
        confusion: conf,
        mae_m: (n_h > 0).then(|| abs_err / n_h as f64),
    })
}

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train: LossValue,
    pub val: Option<LossValue>,
    pub val_dice: Option<f64>,
    pub steps: usize,
}

pub type History = Vec<EpochRecord>;

fn check_tiles(model: &FloorspaceModel<f32>, tiles: &[Tile]) -> Result<()> {
    for t in tiles {
        model.check_input([1, t.channels, t.size, t.size])?;
    }
    Ok(())
}

/// Trains on `train`, validating on `val` after every epoch.
pub fn train_with(
    mut model: FloorspaceModel<f32>,
    train: &[Tile],
    val: &[Tile],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(FloorspaceModel<f32>, History)> {
    cfg.validate()?;
    if train.is_empty() {
        bail!(Dataset, "training set is empty");
    }
    check_tiles(&model, train)?;
    check_tiles(&model, val)?;
    let w = cfg.weights();
    let mut opt = Adam::new(&model);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..train.len()).collect();
    'epochs: for epoch in 0..cfg.epochs {
        if cfg.max_steps.is_some_and(|m| step >= m) {
            break;
        }
        let lr = cfg.lr_at(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(crate::hash::combine(&[cfg.seed, 0x5348_5546, epoch as u64]));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut acc = LossValue::default();
        let mut nb = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break;
            }
            let augmented: Vec<Tile> = chunk
                .iter()
                .map(|&i| {
                    let t = &train[i];
                    if cfg.augment == AugmentPolicy::None {
                        t.clone()
                    } else {
                        let mut r = tile_rng(cfg.seed, &format!("{}", t.id), epoch);
                        augment(t, cfg.augment, &cfg.augment_ranges, &mut r)
                    }
                })
                .collect();
            let refs: Vec<&Tile> = augmented.iter().collect();
            let batch = Batch::<f32>::from_tiles(&refs)?;
            let (value, grads) = batch_gradients(&model, &batch, &w)?;
            if !value.total.is_finite() || grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(crate::Error::Divergence {
                    epoch,
                    step,
                    detail: format!("non-finite loss or gradient (loss {})", value.total),
                });
            }
            opt.step(&mut model, &grads, lr);
            step += 1;
            acc.total += value.total;
            acc.footprint += value.footprint;
            acc.height += value.height;
            nb += 1;
        }
        if nb == 0 {
            break 'epochs;
        }
        let train_loss = LossValue {
            total: acc.total / nb as f64,
            footprint: acc.footprint / nb as f64,
            height: acc.height / nb as f64,
        };
        let (val_loss, val_dice) = if val.is_empty() {
            (None, None)
        } else {
            let s = evaluate(&model, val, &w, cfg.batch_size)?;
            (Some(s.loss), s.confusion.dice())
        };
        let rec = EpochRecord { epoch, lr, train: train_loss, val: val_loss, val_dice, steps: step };
        on_epoch(&rec);
        history.push(rec);
    }
    Ok((model, history))
}

/// Trains on a tile set; the model inherits its normalization and band
/// statistics.
pub fn train(model: FloorspaceModel<f32>, tiles: &TileSet, cfg: &TrainConfig) -> Result<(FloorspaceModel<f32>, History)> {
    let mut model = model;
    model.normalizer = tiles.manifest.normalizer;
    model.band_stats = Some(tiles.manifest.band_stats.clone());
    train_with(model, &tiles.train, &tiles.val, cfg, |_| {})
}
