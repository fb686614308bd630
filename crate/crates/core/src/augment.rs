//! Training-time geometric augmentation and SAR dropout.

use alloc::vec;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::Tile;
use crate::error::{bail, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentPolicy {
    None,
    Rotate,
    Affine,
    MaskS1,
}

impl AugmentPolicy {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => Self::None,
            "rotate" => Self::Rotate,
            "affine" => Self::Affine,
            "mask_s1" => Self::MaskS1,
            other => bail!(Validation, "unknown augmentation '{other}' (none|rotate|affine|mask_s1)"),
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Rotate => "rotate",
            Self::Affine => "affine",
            Self::MaskS1 => "mask_s1",
        }
    }
}

/// Sampling ranges. Angles in degrees, translation as a fraction of the
/// tile side, masked area as a fraction of the tile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentRanges {
    pub rotate_deg: f64,
    pub shear_deg: f64,
    pub translate_frac: f64,
    pub mask_area_min: f64,
    pub mask_area_max: f64,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        Self { rotate_deg: 10.0, shear_deg: 8.0, translate_frac: 0.05, mask_area_min: 0.05, mask_area_max: 0.25 }
    }
}

/// Forward transform about the tile center: rotation composed with shear,
/// followed by a translation in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AffineParams {
    pub angle_deg: f64,
    pub shear_x_deg: f64,
    pub shear_y_deg: f64,
    pub shift_x: f64,
    pub shift_y: f64,
}

/// SAR bands zeroed by [`AugmentPolicy::MaskS1`].
pub const SAR_BANDS: core::ops::Range<usize> = 0..2;

/// Random stream for one tile in one epoch.
pub fn tile_rng(seed: u64, tile_key: &str, epoch: usize) -> ChaCha8Rng {
    let key = crate::hash::fnv1a64(tile_key.as_bytes());
    ChaCha8Rng::seed_from_u64(crate::hash::combine(&[seed, key, epoch as u64]))
}

fn rad(d: f64) -> f64 {
    d * core::f64::consts::PI / 180.0
}

/// Resamples a tile through `p`: bilinear for inputs, nearest for labels
/// and validity. Samples landing outside the tile become input 0, label 0
/// and invalid.
pub fn warp(tile: &Tile, p: &AffineParams) -> Tile {
    let t = tile.size;
    let npx = tile.pixels();
    let (c, s) = (libm::cos(rad(p.angle_deg)), libm::sin(rad(p.angle_deg)));
    let (kx, ky) = (libm::tan(rad(p.shear_x_deg)), libm::tan(rad(p.shear_y_deg)));
    // M = R * Shear
    let m = [[c - s * ky, c * kx - s], [s + c * ky, s * kx + c]];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let inv = [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]];
    let center = (t as f64 - 1.0) / 2.0;
    let last = (t - 1) as f64;

    let mut out = Tile {
        input: vec![0.0; tile.input.len()],
        validity: vec![0; npx],
        mask: vec![0; npx],
        height_norm: vec![0.0; npx],
        ..tile.clone()
    };
    for y in 0..t {
        for x in 0..t {
            let dx = x as f64 - center - p.shift_x;
            let dy = y as f64 - center - p.shift_y;
            let u = center + inv[0][0] * dx + inv[0][1] * dy;
            let v = center + inv[1][0] * dx + inv[1][1] * dy;
            if !(u >= 0.0 && u <= last && v >= 0.0 && v <= last) {
                continue;
            }
            let dst = y * t + x;
            let near = (libm::round(v) as usize) * t + libm::round(u) as usize;
            out.mask[dst] = tile.mask[near];
            out.height_norm[dst] = tile.height_norm[near];

            let (x0, y0) = (libm::floor(u) as usize, libm::floor(v) as usize);
            let (fx, fy) = (u - x0 as f64, v - y0 as f64);
            let (x1, y1) = ((x0 + 1).min(t - 1), (y0 + 1).min(t - 1));
            let taps = [
                (y0 * t + x0, (1.0 - fx) * (1.0 - fy)),
                (y0 * t + x1, fx * (1.0 - fy)),
                (y1 * t + x0, (1.0 - fx) * fy),
                (y1 * t + x1, fx * fy),
            ];
            let valid = taps.iter().all(|&(i, w)| w == 0.0 || tile.validity[i] != 0) && tile.validity[near] != 0;
            out.validity[dst] = u8::from(valid);
            for ch in 0..tile.channels {
                let base = ch * npx;
                let val: f64 = taps.iter().map(|&(i, w)| w * f64::from(tile.input[base + i])).sum();
                out.input[base + dst] = val as f32;
            }
        }
    }
    out.recompute_fraction();
    out
}

/// Sets SAR bands to the standardized fill value (0) inside a rectangle.
pub fn mask_sar_rect(tile: &Tile, x0: usize, y0: usize, w: usize, h: usize) -> Tile {
    let mut out = tile.clone();
    let npx = tile.pixels();
    for b in SAR_BANDS {
        for y in y0..(y0 + h).min(tile.size) {
            for x in x0..(x0 + w).min(tile.size) {
                out.input[b * npx + y * tile.size + x] = 0.0;
            }
        }
    }
    out
}

/// Applies one randomly parameterized augmentation.
pub fn augment<R: Rng>(tile: &Tile, policy: AugmentPolicy, ranges: &AugmentRanges, rng: &mut R) -> Tile {
    match policy {
        AugmentPolicy::None => tile.clone(),
        AugmentPolicy::Rotate => {
            let angle_deg = rng.gen_range(-ranges.rotate_deg..=ranges.rotate_deg);
            warp(tile, &AffineParams { angle_deg, ..AffineParams::default() })
        }
        AugmentPolicy::Affine => {
            let t = tile.size as f64;
            let p = AffineParams {
                angle_deg: rng.gen_range(-ranges.rotate_deg..=ranges.rotate_deg),
                shear_x_deg: rng.gen_range(-ranges.shear_deg..=ranges.shear_deg),
                shear_y_deg: rng.gen_range(-ranges.shear_deg..=ranges.shear_deg),
                shift_x: rng.gen_range(-ranges.translate_frac..=ranges.translate_frac) * t,
                shift_y: rng.gen_range(-ranges.translate_frac..=ranges.translate_frac) * t,
            };
            warp(tile, &p)
        }
        AugmentPolicy::MaskS1 => {
            let side = tile.size;
            let area = rng.gen_range(ranges.mask_area_min..=ranges.mask_area_max) * (side * side) as f64;
            let aspect = rng.gen_range(0.5..=2.0);
            let w = (libm::round(libm::sqrt(area * aspect)) as usize).clamp(1, side);
            let h = (libm::round(area / w as f64) as usize).clamp(1, side);
            let x0 = rng.gen_range(0..=side - w);
            let y0 = rng.gen_range(0..=side - h);
            mask_sar_rect(tile, x0, y0, w, h)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::TileId;
    use crate::raster::GeoTransform;
    use alloc::vec::Vec;

    fn tile() -> Tile {
        let t = 32;
        let mut mask = vec![0u8; t * t];
        let mut h = vec![0f32; t * t];
        for y in 8..20 {
            for x in 5..25 {
                mask[y * t + x] = 1;
                h[y * t + x] = if x < 15 { 0.05 } else { 0.1 };
            }
        }
        let mut tile = Tile {
            id: TileId { city: "c".into(), row: 0, col: 0 },
            size: t,
            transform: GeoTransform::north_up(0.0, 0.0, 10.0).unwrap(),
            input: (0..6 * t * t).map(|i| libm::sinf(i as f32 * 0.37)).collect(),
            channels: 6,
            validity: vec![1; t * t],
            mask,
            height_norm: h,
            building_fraction: 0.0,
        };
        tile.recompute_fraction();
        tile
    }

    #[test]
    fn identity_warp_is_exact() {
        let t = tile();
        assert_eq!(warp(&t, &AffineParams::default()), t);
    }

    #[test]
    fn mask_s1_leaves_optical_bands() {
        let t = tile();
        let mut rng = tile_rng(1, "x", 0);
        for _ in 0..20 {
            let a = augment(&t, AugmentPolicy::MaskS1, &AugmentRanges::default(), &mut rng);
            let npx = t.pixels();
            assert_eq!(a.input[2 * npx..], t.input[2 * npx..]);
            assert_ne!(a.input[..2 * npx], t.input[..2 * npx]);
            let zeroed = (0..npx).filter(|&p| a.input[p] == 0.0 && a.input[npx + p] == 0.0).count();
            let frac = zeroed as f64 / npx as f64;
            assert!((0.04..=0.27).contains(&frac), "masked fraction {frac}");
            assert_eq!(a.mask, t.mask);
        }
    }

    #[test]
    fn rotation_keeps_label_values_and_consistency() {
        let t = tile();
        let mut rng = tile_rng(5, "x", 3);
        let before: Vec<u32> = {
            let mut v: Vec<u32> = t.height_norm.iter().map(|h| h.to_bits()).collect();
            v.sort();
            v.dedup();
            v
        };
        for policy in [AugmentPolicy::Rotate, AugmentPolicy::Affine] {
            for _ in 0..10 {
                let a = augment(&t, policy, &AugmentRanges::default(), &mut rng);
                for p in 0..a.pixels() {
                    assert!(a.mask[p] <= 1);
                    assert_eq!(a.mask[p] == 1, a.height_norm[p] > 0.0);
                    assert!(before.contains(&a.height_norm[p].to_bits()));
                }
            }
        }
    }

    #[test]
    fn rotation_out_of_frame_is_invalid_background() {
        let t = tile();
        let a = warp(&t, &AffineParams { angle_deg: 10.0, ..AffineParams::default() });
        // Corner pixels rotate in from outside the tile.
        assert_eq!(a.validity[0], 0);
        assert_eq!(a.mask[0], 0);
        assert_eq!(a.input[0], 0.0);
    }

    #[test]
    fn per_tile_streams_are_reproducible() {
        let mut a = tile_rng(1, "c_r0000_c0001", 4);
        let mut b = tile_rng(1, "c_r0000_c0001", 4);
        let mut c = tile_rng(1, "c_r0000_c0001", 5);
        let (x, y, z): (u64, u64, u64) = (a.gen(), b.gen(), c.gen());
        assert_eq!(x, y);
        assert_ne!(x, z);
    }
}
