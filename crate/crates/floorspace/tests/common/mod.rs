#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use floorspace::fsr::write_fsr;
use floorspace_core::polygon::{rasterize, BuildingPolygon};
use floorspace_core::{GeoTransform, Raster};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const PIXEL_M: f64 = 10.0;
pub const ORIGIN: (f64, f64) = (500_000.0, 2_500_000.0);

pub struct Scene {
    pub s1: PathBuf,
    pub s2: PathBuf,
    pub buildings: PathBuf,
    pub size: usize,
}

pub fn transform() -> GeoTransform {
    GeoTransform::north_up(ORIGIN.0, ORIGIN.1, PIXEL_M).unwrap()
}

/// Axis-aligned buildings in map coordinates.
pub fn random_buildings(rng: &mut ChaCha8Rng, size: usize, count: usize) -> Vec<BuildingPolygon> {
    (0..count)
        .map(|_| {
            let w = rng.gen_range(3..10) as f64 * PIXEL_M;
            let h = rng.gen_range(3..10) as f64 * PIXEL_M;
            let x0 = ORIGIN.0 + rng.gen_range(0..size - 10) as f64 * PIXEL_M;
            let y1 = ORIGIN.1 - rng.gen_range(0..size - 10) as f64 * PIXEL_M;
            BuildingPolygon::rect(x0, y1 - h, x0 + w, y1, rng.gen_range(6.0..60.0)).unwrap()
        })
        .collect()
}

pub fn geojson(polys: &[BuildingPolygon]) -> String {
    let features: Vec<String> = polys
        .iter()
        .map(|p| {
            let ring: Vec<String> = p.exterior.iter().map(|(x, y)| format!("[{x},{y}]")).collect();
            format!(
                r#"{{"type":"Feature","properties":{{"height":{}}},"geometry":{{"type":"Polygon","coordinates":[[{}]]}}}}"#,
                p.height_m,
                ring.join(",")
            )
        })
        .collect();
    format!(r#"{{"type":"FeatureCollection","features":[{}]}}"#, features.join(","))
}

/// SAR and optical composites whose bands carry a noisy building signal.
pub fn write_scene(dir: &Path, seed: u64, size: usize) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let polys = random_buildings(&mut rng, size, size * size / 150);
    let labels = rasterize(&polys, transform(), size, size).unwrap();
    let mask = labels.mask.as_u8().unwrap();
    let hm = labels.height_m.as_f32().unwrap();
    let n = size * size;
    let mut s1 = Vec::with_capacity(2 * n);
    s1.extend((0..n).map(|i| -15.0 + 8.0 * f32::from(mask[i]) + rng.gen_range(-1.0..1.0)));
    s1.extend((0..n).map(|i| -22.0 + hm[i] / 6.0 + rng.gen_range(-1.0..1.0)));
    let mut s2 = Vec::with_capacity(4 * n);
    for b in 0..4 {
        s2.extend((0..n).map(|i| 0.05 + 0.02 * b as f32 + 0.1 * f32::from(mask[i]) + rng.gen_range(-0.02..0.02)));
    }
    fs::create_dir_all(dir).unwrap();
    let scene = Scene { s1: dir.join("s1.fsr"), s2: dir.join("s2.fsr"), buildings: dir.join("buildings.geojson"), size };
    write_fsr(&Raster::from_f32(size, size, 2, transform(), s1).unwrap(), &scene.s1).unwrap();
    write_fsr(&Raster::from_f32(size, size, 4, transform(), s2).unwrap(), &scene.s2).unwrap();
    fs::write(&scene.buildings, geojson(&polys)).unwrap();
    scene
}

/// Runs the command line in-process; returns the exit code.
pub fn run(args: &[&str]) -> i32 {
    let mut all = vec!["floorspace"];
    all.extend_from_slice(args);
    floorspace::cli::main_with_args(all)
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}
