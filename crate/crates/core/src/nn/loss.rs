//! Combined footprint (binary cross-entropy) and masked smooth-L1 height loss.

use alloc::vec::Vec;

use super::{Scalar, Tensor4};
use crate::error::{bail, Result};

/// Relative task weights and the smooth-L1 transition point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub footprint_weight: f64,
    pub height_weight: f64,
    pub smooth_l1_delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { footprint_weight: 0.1, height_weight: 1.0, smooth_l1_delta: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossValue {
    pub total: f64,
    pub footprint: f64,
    pub height: f64,
}

/// Per-pixel targets for a batch, laid out like the head outputs.
#[derive(Debug, Clone, Copy)]
pub struct Targets<'a, S> {
    pub mask: &'a [u8],
    pub height: &'a [S],
    pub validity: &'a [u8],
}

/// Smooth-L1 of residual `e`: `0.5 e^2 / delta` inside `|e| < delta`,
/// `|e| - 0.5 delta` outside.
pub fn smooth_l1(e: f64, delta: f64) -> f64 {
    let a = e.abs();
    if a < delta {
        0.5 * e * e / delta
    } else {
        a - 0.5 * delta
    }
}

fn smooth_l1_grad<S: Scalar>(e: S, delta: S) -> S {
    if e.abs() < delta {
        e / delta
    } else {
        e.signum()
    }
}

/// Numerically stable BCE of a logit `z` against label `y`.
fn bce<S: Scalar>(z: S, y: S) -> S {
    z.max(S::zero()) - z * y + (-z.abs()).exp().ln_1p()
}

fn sigmoid<S: Scalar>(z: S) -> S {
    S::one() / (S::one() + (-z).exp())
}

/// Pooled running sums, so several batches can be combined exactly.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossSums {
    pub bce_sum: f64,
    pub valid: usize,
    pub huber_sum: f64,
    pub building: usize,
}

impl LossSums {
    pub fn add(&mut self, o: &LossSums) {
        self.bce_sum += o.bce_sum;
        self.valid += o.valid;
        self.huber_sum += o.huber_sum;
        self.building += o.building;
    }

    pub fn value(&self, w: &LossWeights, has_fp: bool, has_h: bool) -> LossValue {
        let footprint = if has_fp && self.valid > 0 { self.bce_sum / self.valid as f64 } else { 0.0 };
        let height = if has_h && self.building > 0 { self.huber_sum / self.building as f64 } else { 0.0 };
        LossValue { total: w.footprint_weight * footprint + w.height_weight * height, footprint, height }
    }
}

fn check<S: Scalar>(out: Option<&Tensor4<S>>, t: &Targets<'_, S>) -> Result<usize> {
    let n = t.mask.len();
    if t.height.len() != n || t.validity.len() != n {
        bail!(Validation, "target arrays differ in length");
    }
    if let Some(o) = out {
        if o.data.len() != n || o.channels() != 1 {
            bail!(Shape, "head output {:?} does not match {n} target pixels", o.dims);
        }
    }
    if let Some(v) = t.mask.iter().find(|&&m| m > 1) {
        bail!(Validation, "mask value {v} is not binary");
    }
    if let Some(v) = t.validity.iter().find(|&&m| m > 1) {
        bail!(Validation, "validity value {v} is not binary");
    }
    Ok(n)
}

/// Loss sums with gradients for the footprint and height head outputs.
pub type SumsAndGrads<S> = (LossSums, Option<Tensor4<S>>, Option<Tensor4<S>>);

/// Loss sums plus gradients with respect to the head outputs.
#[allow(clippy::needless_range_loop)]
pub fn loss_sums_and_grad<S: Scalar>(
    fp_logits: Option<&Tensor4<S>>,
    h_pred: Option<&Tensor4<S>>,
    t: &Targets<'_, S>,
    w: &LossWeights,
    need_grad: bool,
) -> Result<SumsAndGrads<S>> {
    check(fp_logits, t)?;
    check(h_pred, t)?;
    let mut sums = LossSums {
        valid: t.validity.iter().filter(|&&v| v == 1).count(),
        building: t.mask.iter().zip(t.validity).filter(|(&m, &v)| m == 1 && v == 1).count(),
        ..LossSums::default()
    };

    let mut d_fp = None;
    if let Some(z) = fp_logits {
        let scale = if sums.valid > 0 { S::from_f64(w.footprint_weight / sums.valid as f64) } else { S::zero() };
        let mut g: Vec<S> = if need_grad { alloc::vec![S::zero(); z.data.len()] } else { Vec::new() };
        for i in 0..z.data.len() {
            if t.validity[i] != 1 {
                continue;
            }
            let y = if t.mask[i] == 1 { S::one() } else { S::zero() };
            sums.bce_sum += bce(z.data[i], y).as_f64();
            if need_grad {
                g[i] = (sigmoid(z.data[i]) - y) * scale;
            }
        }
        if need_grad {
            d_fp = Some(Tensor4 { dims: z.dims, data: g });
        }
    }

    let mut d_h = None;
    if let Some(h) = h_pred {
        let delta = S::from_f64(w.smooth_l1_delta);
        let scale = if sums.building > 0 { S::from_f64(w.height_weight / sums.building as f64) } else { S::zero() };
        let mut g: Vec<S> = if need_grad { alloc::vec![S::zero(); h.data.len()] } else { Vec::new() };
        for i in 0..h.data.len() {
            if t.mask[i] != 1 || t.validity[i] != 1 {
                continue;
            }
            let e = h.data[i] - t.height[i];
            sums.huber_sum += smooth_l1(e.as_f64(), w.smooth_l1_delta);
            if need_grad {
                g[i] = smooth_l1_grad(e, delta) * scale;
            }
        }
        if need_grad {
            d_h = Some(Tensor4 { dims: h.dims, data: g });
        }
    }
    Ok((sums, d_fp, d_h))
}

/// Weighted loss: `footprint_weight * L_fp + height_weight * L_h`.
///
/// `L_fp` averages BCE over valid pixels; `L_h` averages smooth-L1 over
/// valid building pixels and is 0 when there are none.
pub fn loss<S: Scalar>(
    fp_logits: Option<&Tensor4<S>>,
    h_pred: Option<&Tensor4<S>>,
    t: &Targets<'_, S>,
    w: &LossWeights,
) -> Result<LossValue> {
    let (sums, _, _) = loss_sums_and_grad(fp_logits, h_pred, t, w, false)?;
    Ok(sums.value(w, fp_logits.is_some(), h_pred.is_some()))
}
