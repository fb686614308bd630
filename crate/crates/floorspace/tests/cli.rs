mod common;

use std::fs;
use std::path::Path;

use common::{p, run, transform, write_scene};
use floorspace::fsr::{read_fsr, write_fsr};
use floorspace_core::{GeoTransform, Raster};

const SMALL: &[&str] = &[
    "--set", "tile_size=32",
    "--set", "min_building_fraction=0.05",
    "--set", "depth=1",
    "--set", "base_channels=4",
    "--set", "epochs=2",
    "--set", "lr_decay_epoch=1",
    "--set", "batch_size=2",
    "--set", "predict_tile=32",
    "--set", "seed=4",
];

fn with(args: &[&str]) -> Vec<String> {
    args.iter().chain(SMALL).map(|s| s.to_string()).collect()
}

fn run_small(args: &[&str]) -> i32 {
    let a = with(args);
    run(&a.iter().map(String::as_str).collect::<Vec<_>>())
}

fn has_manifest(dir: &Path) -> bool {
    dir.join("manifest.json").is_file()
}

#[test]
fn full_pipeline_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let scene = write_scene(&d.join("scene"), 1, 64);
    let (labels, tiles, model, pred, eval, ident, agg, ntl, map, grad) = (
        d.join("labels"),
        d.join("tiles"),
        d.join("model"),
        d.join("pred"),
        d.join("eval"),
        d.join("ident"),
        d.join("agg"),
        d.join("ntl"),
        d.join("map"),
        d.join("grad"),
    );

    assert_eq!(run_small(&["rasterize", "--buildings", p(&scene.buildings), "--like", p(&scene.s1), "--out", p(&labels)]), 0);
    assert_eq!(run_small(&["tile", "--s1", p(&scene.s1), "--s2", p(&scene.s2), "--labels", p(&labels), "--city", "demo", "--out", p(&tiles)]), 0);
    let ts: serde_json::Value = serde_json::from_slice(&fs::read(tiles.join("tileset.json")).unwrap()).unwrap();
    let listed = ts["train"].as_array().unwrap().len() + ts["val"].as_array().unwrap().len();
    assert!((2..=4).contains(&listed), "{listed}");

    assert_eq!(run_small(&["train", "--tiles", p(&tiles), "--out", p(&model)]), 0);
    let history = fs::read_to_string(model.join("history.csv")).unwrap();
    assert!(history.starts_with("epoch,lr,train_total,train_fp,train_h,val_total,val_fp,val_h,val_dice\n"));
    assert_eq!(history.lines().count(), 3);

    assert_eq!(run_small(&["predict", "--model", p(&model.join("model.fsm")), "--s1", p(&scene.s1), "--s2", p(&scene.s2), "--out", p(&pred)]), 0);
    let h = read_fsr(pred.join("height.fsr")).unwrap();
    assert_eq!((h.width, h.height), (64, 64));

    assert_eq!(run_small(&["eval", "--pred", p(&pred), "--reference", p(&labels), "--out", p(&eval)]), 0);
    assert_eq!(run_small(&["eval", "--pred", p(&labels), "--reference", p(&labels), "--out", p(&ident)]), 0);
    let m: serde_json::Value = serde_json::from_slice(&fs::read(ident.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(m["dice"], 1.0);
    assert_eq!(m["mae_m"], 0.0);

    assert_eq!(
        run_small(&[
            "aggregate", "--pred", p(&pred.join("height.fsr")), "--reference", p(&labels.join("height.fsr")), "--out", p(&agg),
            "--set", "agg_side_min_m=20", "--set", "agg_side_max_m=320", "--set", "agg_side_step_m=20", "--set", "scatter_side_m=80",
        ]),
        0
    );
    let curve = fs::read_to_string(agg.join("curve.csv")).unwrap();
    assert!(curve.starts_with("side_length_m,r2,n_cells\n20,"));

    let ntl_path = d.join("ntl_in.fsr");
    let t = GeoTransform::north_up(common::ORIGIN.0, common::ORIGIN.1, 120.0).unwrap();
    write_fsr(&Raster::from_f32(5, 5, 1, t, (0..25).map(|i| 1.0 + (i % 7) as f32).collect()).unwrap(), &ntl_path).unwrap();
    assert_eq!(run_small(&["ntl", "--height", p(&labels.join("height.fsr")), "--ntl", p(&ntl_path), "--out", p(&ntl)]), 0);
    let j: serde_json::Value = serde_json::from_slice(&fs::read(ntl.join("ntl.json")).unwrap()).unwrap();
    assert_eq!(j["n_cells"], 25);

    assert_eq!(run_small(&["render", "--raster", p(&ntl.join("log_diff.fsr")), "--out", p(&map)]), 0);
    assert!(fs::read(map.join("map.ppm")).unwrap().starts_with(b"P6\n5 5\n255\n"));
    assert!(map.join("map.txt").is_file());

    assert_eq!(run_small(&["gradcheck", "--out", p(&grad), "--set", "gradcheck_depth=1", "--set", "gradcheck_base=4", "--set", "gradcheck_samples=4"]), 0);

    for dir in [&labels, &tiles, &model, &pred, &eval, &agg, &ntl, &map, &grad] {
        assert!(has_manifest(dir), "{}", dir.display());
    }
}

#[test]
fn composite_mean_of_two_scenes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    for (name, v) in [("a.fsr", 2.0f32), ("b.fsr", 4.0)] {
        write_fsr(&Raster::filled_f32(8, 8, 4, transform(), v), d.join(name)).unwrap();
        write_fsr(&Raster::filled_f32(8, 8, 1, transform(), 0.0), d.join(format!("cloud_{name}"))).unwrap();
    }
    fs::write(d.join("scenes.txt"), "a.fsr cloud_a.fsr\nb.fsr cloud_b.fsr\n").unwrap();
    assert_eq!(run(&["composite", "--scenes", p(&d.join("scenes.txt")), "--out", p(&d.join("out"))]), 0);
    let r = read_fsr(d.join("out/composite.fsr")).unwrap();
    assert!(r.as_f32().unwrap().iter().all(|&v| v == 3.0));
    assert!(has_manifest(&d.join("out")));
}

#[test]
fn failures_map_to_distinct_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = d.join("out");
    assert_eq!(run(&["render", "--raster", p(&d.join("nope.fsr")), "--out", p(&out)]), 21);
    assert_eq!(run(&["gradcheck", "--out", p(&out), "--set", "bogus=1"]), 20);
    fs::write(d.join("short.fsr"), b"FSR1\x01\x00").unwrap();
    assert_eq!(run(&["render", "--raster", p(&d.join("short.fsr")), "--out", p(&out)]), 12);
    fs::write(d.join("magic.fsr"), [0u8; 100]).unwrap();
    assert_eq!(run(&["render", "--raster", p(&d.join("magic.fsr")), "--out", p(&out)]), 11);
    assert_eq!(run(&["gradcheck", "--out", p(&out), "--set", "two_stage=A3"]), 20);
    assert_eq!(run(&["gradcheck", "--out", p(&out), "--threads", "0"]), 20);
    assert_eq!(run(&["frobnicate"]), 2);
}

#[test]
fn gradcheck_fails_above_tolerance() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("g");
    let args = ["gradcheck", "--out", p(&out), "--set", "gradcheck_depth=1", "--set", "gradcheck_base=2", "--set", "gradcheck_samples=2", "--set", "gradcheck_tolerance=1e-30"];
    assert_eq!(run(&args), 50);
}
