//! Central finite-difference verification of the analytic backward pass.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{loss, LossWeights};
use super::train::{batch_gradients, Batch};
use super::{FloorspaceModel, Gates};
use crate::error::Result;

pub const DEFAULT_FD_STEP: f64 = 1e-3;
pub const DEFAULT_SAMPLES_PER_GROUP: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupError {
    pub name: String,
    pub sampled: usize,
    /// Worst error against differences taken on the linear piece at `p`,
    /// i.e. with ReLU states and pooling winners held fixed.
    pub max_rel_error: f64,
    /// Analytic and pinned numeric gradient at the worst entry.
    pub worst: (f64, f64),
    /// Entries whose plain stencil stayed on one linear piece.
    pub plain_sampled: usize,
    /// Worst error against plain differences over those entries.
    pub plain_max_rel_error: f64,
}

impl GroupError {
    pub fn skipped_kinks(&self) -> usize {
        self.sampled - self.plain_sampled
    }

    pub fn worst_error(&self) -> f64 {
        self.max_rel_error.max(self.plain_max_rel_error)
    }
}

/// `|a - b| / max(|a|, |b|, 1e-8)`; infinite when either is not finite.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    if !analytic.is_finite() || !numeric.is_finite() {
        return f64::INFINITY;
    }
    let d = libm::fabs(analytic - numeric);
    d / libm::fabs(analytic).max(libm::fabs(numeric)).max(1e-8)
}

fn total(model: &FloorspaceModel<f64>, batch: &Batch<f64>, w: &LossWeights, gates: Option<&Gates>) -> Result<(f64, Gates)> {
    let (out, gates) = match gates {
        Some(g) => (model.forward_gated(&batch.input, g)?, g.clone()),
        None => {
            let (out, trace) = model.forward_trace(&batch.input)?;
            let heads = usize::from(out.fp_logits.is_some()) + usize::from(out.height.is_some());
            (out, trace.gates(model.layers().len() - heads))
        }
    };
    let l = loss(out.fp_logits.as_ref(), out.height.as_ref(), &batch.targets(), w)?;
    Ok((l.total, gates))
}

/// Compares analytic gradients with `(L(p + h) - L(p - h)) / 2h` on up to
/// `samples` randomly chosen entries of every parameter array.
///
/// The network is piecewise smooth. A plain stencil that moves a ReLU or a
/// pooling winner across its switch measures a secant, not the derivative
/// at `p`, so every entry is also differenced with the gates pinned to
/// their state at `p`. Plain differences are scored only on entries whose
/// stencil stays on one piece.
pub fn gradient_check(
    model: &FloorspaceModel<f64>,
    batch: &Batch<f64>,
    w: &LossWeights,
    step: f64,
    samples: usize,
    seed: u64,
) -> Result<Vec<GroupError>> {
    let (_, grads) = batch_gradients(model, batch, w)?;
    let (_, base) = total(model, batch, w, None)?;
    let mut probe = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = Vec::with_capacity(grads.len());
    for (pi, g) in grads.iter().enumerate() {
        let n = g.len();
        let picks: Vec<usize> = if n <= samples { (0..n).collect() } else { sample(&mut rng, n, samples).into_vec() };
        let mut e = GroupError {
            name: model.params()[pi].name.clone(),
            sampled: picks.len(),
            max_rel_error: 0.0,
            worst: (0.0, 0.0),
            plain_sampled: 0,
            plain_max_rel_error: 0.0,
        };
        for &i in &picks {
            let orig = probe.params()[pi].data[i];
            let mut eval = |v: f64, gates: Option<&Gates>| {
                probe.params_mut()[pi].data[i] = v;
                total(&probe, batch, w, gates)
            };
            let (up, gu) = eval(orig + step, None)?;
            let (down, gd) = eval(orig - step, None)?;
            let (up_pinned, _) = eval(orig + step, Some(&base))?;
            let (down_pinned, _) = eval(orig - step, Some(&base))?;
            probe.params_mut()[pi].data[i] = orig;

            let pinned = (up_pinned - down_pinned) / (2.0 * step);
            let rel = relative_error(g[i], pinned);
            if rel >= e.max_rel_error {
                e.max_rel_error = rel;
                e.worst = (g[i], pinned);
            }
            if gu == base && gd == base {
                e.plain_sampled += 1;
                e.plain_max_rel_error = e.plain_max_rel_error.max(relative_error(g[i], (up - down) / (2.0 * step)));
            }
        }
        report.push(e);
    }
    Ok(report)
}
