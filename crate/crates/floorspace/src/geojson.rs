//! GeoJSON FeatureCollection subset: `Polygon` features in projected meters
//! with a numeric `height` property.

use std::fs;
use std::path::Path;

use floorspace_core::polygon::{BuildingPolygon, Point};
use serde_json::Value;

use crate::error::{Error, Result};

pub const HEIGHT_PROPERTY: &str = "height";

fn ring(v: &Value, path: &Path, feature: usize) -> Result<Vec<Point>> {
    let pts = v.as_array().ok_or_else(|| Error::format(path, format!("feature {feature}: ring is not an array")))?;
    pts.iter()
        .map(|p| match p.as_array().map(Vec::as_slice) {
            Some([x, y, ..]) => match (x.as_f64(), y.as_f64()) {
                (Some(x), Some(y)) => Ok((x, y)),
                _ => Err(Error::format(path, format!("feature {feature}: non-numeric coordinate"))),
            },
            _ => Err(Error::format(path, format!("feature {feature}: coordinate is not a pair"))),
        })
        .collect()
}

/// Parses building polygons; features that are not `Polygon` or lack a
/// numeric height are rejected.
pub fn parse_buildings(text: &str, path: &Path) -> Result<Vec<BuildingPolygon>> {
    let root: Value = serde_json::from_str(text).map_err(|e| Error::format(path, format!("invalid JSON: {e}")))?;
    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(Error::format(path, "expected a FeatureCollection"));
    }
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::format(path, "FeatureCollection has no features array"))?;
    let mut out = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        let geom = f.get("geometry").ok_or_else(|| Error::format(path, format!("feature {i}: no geometry")))?;
        let kind = geom.get("type").and_then(Value::as_str).unwrap_or("<missing>");
        if kind != "Polygon" {
            return Err(floorspace_core::Error::Validation(format!("feature {i}: geometry type {kind} is not Polygon")).into());
        }
        let rings = geom
            .get("coordinates")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::format(path, format!("feature {i}: no coordinates")))?;
        let (first, rest) = rings.split_first().ok_or_else(|| Error::format(path, format!("feature {i}: empty polygon")))?;
        let height = f
            .get("properties")
            .and_then(|p| p.get(HEIGHT_PROPERTY))
            .and_then(Value::as_f64)
            .ok_or_else(|| floorspace_core::Error::Validation(format!("feature {i}: missing numeric '{HEIGHT_PROPERTY}' property")))?;
        let holes = rest.iter().map(|r| ring(r, path, i)).collect::<Result<Vec<_>>>()?;
        let poly = BuildingPolygon { exterior: ring(first, path, i)?, holes, height_m: height };
        poly.validate().map_err(|e| match e {
            floorspace_core::Error::Validation(m) => floorspace_core::Error::Validation(format!("feature {i}: {m}")),
            other => other,
        })?;
        out.push(poly);
    }
    Ok(out)
}

pub fn read_buildings(path: impl AsRef<Path>) -> Result<Vec<BuildingPolygon>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_buildings(&text, path)
}
