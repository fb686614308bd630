//! Building polygons and center-point rasterization.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::raster::{GeoTransform, LabelGrid, Raster, RasterData};

pub type Point = (f64, f64);

/// A building outline in projected meters. Rings are closed (first vertex
/// repeated at the end).
#[derive(Debug, Clone, PartialEq)]
pub struct BuildingPolygon {
    pub exterior: Vec<Point>,
    pub holes: Vec<Vec<Point>>,
    pub height_m: f64,
}

fn validate_ring(ring: &[Point], what: &str) -> Result<()> {
    if ring.len() < 4 {
        bail!(Validation, "{what} needs at least 3 distinct vertices plus closure, got {} points", ring.len());
    }
    if ring.first() != ring.last() {
        bail!(Validation, "{what} is not closed");
    }
    if ring.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        bail!(Validation, "{what} has non-finite coordinates");
    }
    Ok(())
}

impl BuildingPolygon {
    pub fn new(exterior: Vec<Point>, holes: Vec<Vec<Point>>, height_m: f64) -> Result<Self> {
        let p = Self { exterior, holes, height_m };
        p.validate()?;
        Ok(p)
    }

    /// Axis-aligned rectangle, handy for synthetic scenes.
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64, height_m: f64) -> Result<Self> {
        Self::new(vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)], vec![], height_m)
    }

    pub fn validate(&self) -> Result<()> {
        validate_ring(&self.exterior, "exterior ring")?;
        for h in &self.holes {
            validate_ring(h, "hole ring")?;
        }
        if !(self.height_m > 0.0) || !self.height_m.is_finite() {
            bail!(Validation, "building height must be positive and finite, got {}", self.height_m);
        }
        Ok(())
    }

    fn rings(&self) -> impl Iterator<Item = &[Point]> {
        core::iter::once(self.exterior.as_slice()).chain(self.holes.iter().map(|h| h.as_slice()))
    }

    /// (min_x, min_y, max_x, max_y) of the exterior ring.
    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        self.exterior.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), &(x, y)| (a.min(x), b.min(y), c.max(x), d.max(y)),
        )
    }
}

fn on_segment(p: Point, a: Point, b: Point) -> bool {
    let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
    cross == 0.0
        && p.0 >= a.0.min(b.0)
        && p.0 <= a.0.max(b.0)
        && p.1 >= a.1.min(b.1)
        && p.1 <= a.1.max(b.1)
}

fn ring_crossings(p: Point, ring: &[Point]) -> bool {
    let mut inside = false;
    for w in ring.windows(2) {
        let (a, b) = (w[0], w[1]);
        if (a.1 > p.1) != (b.1 > p.1) {
            let x = a.0 + (p.1 - a.1) * (b.0 - a.0) / (b.1 - a.1);
            if p.0 < x {
                inside = !inside;
            }
        }
    }
    inside
}

fn contains_unchecked(poly: &BuildingPolygon, p: Point) -> bool {
    if poly.rings().any(|r| r.windows(2).any(|w| on_segment(p, w[0], w[1]))) {
        return true;
    }
    ring_crossings(p, &poly.exterior) && !poly.holes.iter().any(|h| ring_crossings(p, h))
}

/// Even-odd membership of `p` in the exterior minus holes. Points lying
/// exactly on any ring edge count as inside.
pub fn point_in_polygon(p: Point, poly: &BuildingPolygon) -> Result<bool> {
    poly.validate()?;
    Ok(contains_unchecked(poly, p))
}

/// Burns polygons onto a grid. A cell is a building when its center lies in
/// at least one polygon; overlapping polygons keep the tallest height.
pub fn rasterize(
    polys: &[BuildingPolygon],
    transform: GeoTransform,
    width: usize,
    height: usize,
) -> Result<LabelGrid> {
    transform.validate()?;
    for p in polys {
        p.validate()?;
    }
    let n = width * height;
    let mut mask = vec![0u8; n];
    let mut heights = vec![0f32; n];
    let t = &transform;
    for poly in polys {
        let (min_x, min_y, max_x, max_y) = poly.bbox();
        let c0 = libm::ceil((min_x - t.origin_x) / t.pixel_w - 0.5).max(0.0);
        let c1 = libm::floor((max_x - t.origin_x) / t.pixel_w - 0.5);
        let r0 = libm::ceil((max_y - t.origin_y) / t.pixel_h - 0.5).max(0.0);
        let r1 = libm::floor((min_y - t.origin_y) / t.pixel_h - 0.5);
        if c1 < 0.0 || r1 < 0.0 || c0 >= width as f64 || r0 >= height as f64 {
            continue;
        }
        let c1 = (c1 as usize).min(width - 1);
        let r1 = (r1 as usize).min(height - 1);
        let h = poly.height_m as f32;
        for row in r0 as usize..=r1 {
            for col in c0 as usize..=c1 {
                if contains_unchecked(poly, t.pixel_center(col, row)) {
                    let i = row * width + col;
                    mask[i] = 1;
                    if h > heights[i] {
                        heights[i] = h;
                    }
                }
            }
        }
    }
    Ok(LabelGrid {
        mask: Raster::new(width, height, 1, f64::NAN, transform, RasterData::U8(mask))?,
        height_m: Raster::new(width, height, 1, crate::raster::DEFAULT_NODATA, transform, RasterData::F32(heights))?,
    })
}
