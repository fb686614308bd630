//! Pixel-level footprint and height metrics, per storey class, and histograms.
//!
//! All counts are pooled over every valid pixel handed in; nothing is
//! averaged per tile. Undefined ratios are `None`, never 0.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};

/// Published class shares of building pixels (low, multi, mid, high).
pub const REFERENCE_CLASS_SHARES: [f64; 4] = [0.519, 0.310, 0.125, 0.045];
/// Published per-class MRE (low, multi, mid, high).
pub const REFERENCE_CLASS_MRE: [f64; 4] = [1.3159, 0.9405, 0.8842, 0.8511];

pub const CLASS_NAMES: [&str; 4] = ["low", "multi", "mid", "high"];

fn check_len(n: usize, others: &[(usize, &str)]) -> Result<()> {
    for &(m, what) in others {
        if m != n {
            bail!(Validation, "{what} has {m} pixels, expected {n}");
        }
    }
    Ok(())
}

fn check_binary(v: &[u8], what: &str) -> Result<()> {
    if let Some(x) = v.iter().find(|&&x| x > 1) {
        bail!(Validation, "{what} value {x} is not binary");
    }
    Ok(())
}

fn valid_at(validity: Option<&[u8]>, i: usize) -> bool {
    validity.is_none_or(|v| v[i] == 1)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FootprintMetrics {
    pub counts: Counts,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub dice: Option<f64>,
}

impl FootprintMetrics {
    pub fn from_counts(c: Counts) -> Self {
        Self {
            counts: c,
            precision: ratio(c.tp, c.tp + c.fp),
            recall: ratio(c.tp, c.tp + c.fn_),
            dice: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        }
    }
}

/// Confusion counts of `pred` against `reference` over valid pixels.
pub fn footprint_metrics(pred: &[u8], reference: &[u8], validity: Option<&[u8]>) -> Result<FootprintMetrics> {
    check_len(pred.len(), &[(reference.len(), "reference mask"), (validity.map_or(pred.len(), <[u8]>::len), "validity")])?;
    check_binary(pred, "predicted mask")?;
    check_binary(reference, "reference mask")?;
    let mut c = Counts::default();
    for i in 0..pred.len() {
        if !valid_at(validity, i) {
            continue;
        }
        match (pred[i], reference[i]) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(FootprintMetrics::from_counts(c))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HeightMetrics {
    pub n: u64,
    pub mae_m: Option<f64>,
    pub rmse_m: Option<f64>,
    pub mre: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
struct ErrorSums {
    n: u64,
    abs: f64,
    sq: f64,
    rel: f64,
}

impl ErrorSums {
    fn push(&mut self, pred: f64, reference: f64) {
        let e = pred - reference;
        self.n += 1;
        self.abs += libm::fabs(e);
        self.sq += e * e;
        self.rel += libm::fabs(e) / reference;
    }

    fn finish(&self) -> HeightMetrics {
        if self.n == 0 {
            return HeightMetrics::default();
        }
        let n = self.n as f64;
        HeightMetrics {
            n: self.n,
            mae_m: Some(self.abs / n),
            rmse_m: Some(libm::sqrt(self.sq / n)),
            mre: Some(self.rel / n),
        }
    }
}

/// Walks reference building pixels, checking the positive-height precondition.
fn building_pixels<'a>(
    pred_h: &'a [f32],
    ref_h: &'a [f32],
    ref_mask: &'a [u8],
    validity: Option<&'a [u8]>,
) -> Result<impl Iterator<Item = (f64, f64)> + 'a> {
    check_len(pred_h.len(), &[(ref_h.len(), "reference height"), (ref_mask.len(), "reference mask"), (validity.map_or(pred_h.len(), <[u8]>::len), "validity")])?;
    check_binary(ref_mask, "reference mask")?;
    if let Some(i) = (0..ref_h.len()).find(|&i| ref_mask[i] == 1 && !(ref_h[i] > 0.0 && ref_h[i].is_finite())) {
        bail!(Validation, "reference height {} at pixel {i} is not positive inside the mask", ref_h[i]);
    }
    if let Some(i) = (0..pred_h.len()).find(|&i| ref_mask[i] == 1 && valid_at(validity, i) && !pred_h[i].is_finite()) {
        bail!(Validation, "predicted height at pixel {i} is not finite");
    }
    Ok((0..pred_h.len())
        .filter(move |&i| ref_mask[i] == 1 && valid_at(validity, i))
        .map(move |i| (f64::from(pred_h[i]), f64::from(ref_h[i]))))
}

/// MAE, RMSE and MRE over valid reference building pixels.
pub fn height_metrics(pred_h: &[f32], ref_h: &[f32], ref_mask: &[u8], validity: Option<&[u8]>) -> Result<HeightMetrics> {
    let mut s = ErrorSums::default();
    for (p, r) in building_pixels(pred_h, ref_h, ref_mask, validity)? {
        s.push(p, r);
    }
    Ok(s.finish())
}

/// Storey bands realized in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoreyClasses {
    pub metres_per_storey: f64,
    /// Highest storey count of the low, multi and mid classes.
    pub upper_storeys: [u32; 3],
}

impl Default for StoreyClasses {
    fn default() -> Self {
        Self { metres_per_storey: 3.0, upper_storeys: [3, 6, 9] }
    }
}

impl StoreyClasses {
    pub fn validate(&self) -> Result<()> {
        if !(self.metres_per_storey > 0.0 && self.metres_per_storey.is_finite()) {
            bail!(Validation, "metres_per_storey must be positive, got {}", self.metres_per_storey);
        }
        let u = self.upper_storeys;
        if u[0] == 0 || u[0] >= u[1] || u[1] >= u[2] {
            bail!(Validation, "storey boundaries {u:?} must be strictly increasing and positive");
        }
        Ok(())
    }

    /// Upper bounds in meters of the first three classes.
    pub fn limits_m(&self) -> [f64; 3] {
        self.upper_storeys.map(|s| f64::from(s) * self.metres_per_storey)
    }

    /// 0 low, 1 multi, 2 mid, 3 high.
    pub fn classify(&self, h_m: f64) -> usize {
        self.limits_m().iter().position(|&lim| h_m <= lim).unwrap_or(3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClassMre {
    pub mre: [Option<f64>; 4],
    pub counts: [u64; 4],
    pub shares: [Option<f64>; 4],
}

/// MRE per storey class, classes assigned from the reference height.
pub fn per_class_mre(
    pred_h: &[f32],
    ref_h: &[f32],
    ref_mask: &[u8],
    validity: Option<&[u8]>,
    classes: &StoreyClasses,
) -> Result<ClassMre> {
    classes.validate()?;
    let mut sums = [ErrorSums::default(); 4];
    for (p, r) in building_pixels(pred_h, ref_h, ref_mask, validity)? {
        sums[classes.classify(r)].push(p, r);
    }
    let total: u64 = sums.iter().map(|s| s.n).sum();
    Ok(ClassMre {
        mre: sums.map(|s| s.finish().mre),
        counts: sums.map(|s| s.n),
        shares: sums.map(|s| ratio(s.n, total)),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bin_width_m: f64,
    pub cap_m: f64,
    /// Left edges of the bins covering `[0, cap]`.
    pub bin_start_m: Vec<f64>,
    pub counts: Vec<u64>,
    /// Masked values above the cap.
    pub overflow: u64,
}

/// Counts masked heights in `bin_width_m` bins over `[0, cap_m]`; the cap
/// itself falls in the last bin.
pub fn height_histogram(heights: &[f32], mask: &[u8], bin_width_m: f64, cap_m: f64) -> Result<Histogram> {
    if !(bin_width_m > 0.0 && cap_m > 0.0 && bin_width_m.is_finite() && cap_m.is_finite()) {
        bail!(Validation, "bin width {bin_width_m} and cap {cap_m} must be positive");
    }
    check_len(heights.len(), &[(mask.len(), "mask")])?;
    let nbins = (libm::ceil(cap_m / bin_width_m) as usize).max(1);
    let mut counts = vec![0u64; nbins];
    let mut overflow = 0;
    for (&h, &m) in heights.iter().zip(mask) {
        if m != 1 || !h.is_finite() {
            continue;
        }
        let h = f64::from(h).max(0.0);
        if h > cap_m {
            overflow += 1;
        } else {
            counts[((h / bin_width_m) as usize).min(nbins - 1)] += 1;
        }
    }
    Ok(Histogram {
        bin_width_m,
        cap_m,
        bin_start_m: (0..nbins).map(|i| i as f64 * bin_width_m).collect(),
        counts,
        overflow,
    })
}

/// The complete evaluation schema for one prediction/reference pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub footprint: FootprintMetrics,
    pub height: HeightMetrics,
    pub classes: ClassMre,
    pub storeys: StoreyClasses,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportConfig {
    pub storeys: StoreyClasses,
    pub hist_bin_m: f64,
    pub hist_cap_m: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self { storeys: StoreyClasses::default(), hist_bin_m: 5.0, hist_cap_m: 100.0 }
    }
}

pub struct EvalInputs<'a> {
    pub pred_mask: &'a [u8],
    pub pred_h: &'a [f32],
    pub ref_mask: &'a [u8],
    pub ref_h: &'a [f32],
    pub validity: Option<&'a [u8]>,
}

/// Footprint and height metrics; the histogram covers predicted heights
/// inside the predicted footprint.
pub fn metrics_report(x: &EvalInputs<'_>, cfg: &ReportConfig) -> Result<MetricsReport> {
    let footprint = footprint_metrics(x.pred_mask, x.ref_mask, x.validity)?;
    let height = height_metrics(x.pred_h, x.ref_h, x.ref_mask, x.validity)?;
    let classes = per_class_mre(x.pred_h, x.ref_h, x.ref_mask, x.validity, &cfg.storeys)?;
    let valid_pred: Vec<u8> =
        x.pred_mask.iter().enumerate().map(|(i, &m)| u8::from(m == 1 && valid_at(x.validity, i))).collect();
    let histogram = height_histogram(x.pred_h, &valid_pred, cfg.hist_bin_m, cfg.hist_cap_m)?;
    Ok(MetricsReport { footprint, height, classes, storeys: cfg.storeys, histogram })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_masks() {
        let m = [0, 1, 1, 0];
        let f = footprint_metrics(&m, &m, None).unwrap();
        assert_eq!((f.precision, f.recall, f.dice), (Some(1.0), Some(1.0), Some(1.0)));
    }

    #[test]
    fn disjoint_masks() {
        let f = footprint_metrics(&[1, 0], &[0, 1], None).unwrap();
        assert_eq!(f.dice, Some(0.0));
    }

    #[test]
    fn small_counts() {
        let f = footprint_metrics(&[1, 0, 0], &[1, 1, 0], None).unwrap();
        assert_eq!(f.precision, Some(1.0));
        assert_eq!(f.recall, Some(0.5));
        assert!((f.dice.unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_denominators_are_undefined() {
        let f = footprint_metrics(&[0, 0], &[0, 0], None).unwrap();
        assert_eq!((f.precision, f.recall, f.dice), (None, None, None));
        assert_eq!(f.counts.tn, 2);
    }

    #[test]
    fn invalid_pixels_are_skipped() {
        let f = footprint_metrics(&[1, 1], &[1, 0], Some(&[1, 0])).unwrap();
        assert_eq!(f.counts, Counts { tp: 1, fp: 0, fn_: 0, tn: 0 });
    }

    #[test]
    fn shape_mismatch() {
        assert!(matches!(footprint_metrics(&[1], &[1, 0], None), Err(crate::Error::Validation(_))));
        assert!(height_metrics(&[1.0], &[1.0, 2.0], &[1, 1], None).is_err());
    }

    #[test]
    fn height_examples() {
        let h = height_metrics(&[10.0, 20.0], &[12.0, 18.0], &[1, 1], None).unwrap();
        assert_eq!((h.mae_m, h.rmse_m), (Some(2.0), Some(2.0)));
        let h = height_metrics(&[13.0], &[10.0], &[1], None).unwrap();
        assert!((h.mre.unwrap() - 0.3).abs() < 1e-12);
        let h = height_metrics(&[7.0, 9.0], &[7.0, 9.0], &[1, 1], None).unwrap();
        assert_eq!((h.mae_m, h.rmse_m, h.mre), (Some(0.0), Some(0.0), Some(0.0)));
    }

    #[test]
    fn no_building_pixels_is_undefined() {
        let h = height_metrics(&[1.0], &[0.0], &[0], None).unwrap();
        assert_eq!((h.n, h.mae_m, h.mre), (0, None, None));
    }

    #[test]
    fn doubling_gives_unit_mre() {
        let r = [3.0f32, 7.5, 40.0, 12.25];
        let p = r.map(|v| 2.0 * v);
        assert_eq!(height_metrics(&p, &r, &[1; 4], None).unwrap().mre, Some(1.0));
    }

    #[test]
    fn storey_classes() {
        let c = StoreyClasses::default();
        assert_eq!(c.classify(6.0), 0);
        assert_eq!(c.classify(9.0), 0);
        assert_eq!(c.classify(9.5), 1);
        assert_eq!(c.classify(18.0), 1);
        assert_eq!(c.classify(27.0), 2);
        assert_eq!(c.classify(27.1), 3);
    }

    #[test]
    fn single_class_leaves_others_undefined() {
        let m = per_class_mre(&[5.0, 8.0], &[4.0, 8.0], &[1, 1], None, &StoreyClasses::default()).unwrap();
        assert_eq!(m.counts, [2, 0, 0, 0]);
        assert_eq!(m.shares[0], Some(1.0));
        assert_eq!(m.mre[1..], [None, None, None]);
    }

    #[test]
    fn histogram_examples() {
        let h = height_histogram(&[5.0, 5.0, 15.0, 250.0], &[1, 1, 1, 1], 10.0, 100.0).unwrap();
        assert_eq!(h.counts.len(), 10);
        assert_eq!(&h.counts[..2], &[2, 1]);
        assert_eq!(h.overflow, 1);
        let e = height_histogram(&[5.0], &[0], 10.0, 100.0).unwrap();
        assert!(e.counts.iter().all(|&c| c == 0) && e.overflow == 0);
        assert!(height_histogram(&[], &[], 0.0, 100.0).is_err());
    }
}
