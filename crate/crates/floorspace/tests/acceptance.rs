//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

mod common;

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use common::{p, run, write_scene};
use floorspace::checkpoint;
use floorspace::cli::gradcheck_batch;
use floorspace::fsr;
use floorspace::report::{read_metrics_csv, NULL};
use floorspace_core::aggregate::{r2_curve, AggregationSpec, Reducer};
use floorspace_core::dataset::{HeightNormalizer, NormMode, Tile, TileId};
use floorspace_core::ingest::BandStats;
use floorspace_core::metrics::{footprint_metrics, height_metrics, CLASS_NAMES, REFERENCE_CLASS_SHARES};
use floorspace_core::nn::train::{batch_gradients, evaluate};
use floorspace_core::nn::{
    gradient_check, loss, train_with, Batch, FloorspaceModel, Head, LossWeights, ModelConfig, Targets, Tensor4,
    TrainConfig,
};
use floorspace_core::ntl::{fit_scale, log_diff_map, slog, NtlConfig};
use floorspace_core::polygon::{rasterize, BuildingPolygon, Point};
use floorspace_core::{GeoTransform, Raster, RasterData};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn timed(limit: Duration, start: Instant) -> Result<f64, String> {
    let s = start.elapsed().as_secs_f64();
    ensure(start.elapsed() < limit, || format!("took {s:.1} s, limit {} s", limit.as_secs()))?;
    Ok(s)
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig { depth: 2, base_channels: 8, ..ModelConfig::default() };
    let model = FloorspaceModel::<f64>::init(cfg, 11).map_err(|e| e.to_string())?;
    let batch = gradcheck_batch(5, 16).map_err(|e| e.to_string())?;
    let groups = gradient_check(&model, &batch, &LossWeights::default(), 1e-3, 32, 3).map_err(|e| e.to_string())?;
    let (mut worst, mut plain_worst, mut skipped) = (0.0f64, 0.0f64, 0usize);
    for g in &groups {
        ensure(g.sampled > 0, || format!("{} has no samples", g.name))?;
        ensure(g.max_rel_error < 1e-3, || format!("{}: rel error {:e}", g.name, g.max_rel_error))?;
        ensure(g.plain_max_rel_error < 1e-3, || format!("{}: plain rel error {:e}", g.name, g.plain_max_rel_error))?;
        worst = worst.max(g.max_rel_error);
        plain_worst = plain_worst.max(g.plain_max_rel_error);
        skipped += g.skipped_kinks();
    }
    let s = timed(Duration::from_secs(60), start)?;
    Ok(format!(
        "{} groups, max rel error {worst:.2e} (plain differences {plain_worst:.2e}, {skipped} kink-crossing stencils scored pinned only), {s:.1} s",
        groups.len()
    ))
}

fn rect_tile(idx: usize, t: usize, rng: &mut ChaCha8Rng, norm: &HeightNormalizer) -> Tile {
    let mut height = vec![0f32; t * t];
    for _ in 0..rng.gen_range(2..=4) {
        let (w, h) = (rng.gen_range(4..=12), rng.gen_range(4..=12));
        let (x0, y0) = (rng.gen_range(0..t - w), rng.gen_range(0..t - h));
        let hm: f32 = rng.gen_range(6.0..60.0);
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                height[y * t + x] = height[y * t + x].max(hm);
            }
        }
    }
    let mask: Vec<u8> = height.iter().map(|&h| u8::from(h > 0.0)).collect();
    let mut input = vec![0f32; 6 * t * t];
    for px in 0..t * t {
        input[px] = if mask[px] == 1 { 1.0 } else { -1.0 };
        input[t * t + px] = height[px] / 10.0;
        for c in 2..6 {
            input[c * t * t + px] = rng.gen_range(-0.5..0.5);
        }
    }
    let mut tile = Tile {
        id: TileId { city: "synth".into(), row: 0, col: idx as u32 },
        size: t,
        transform: GeoTransform::north_up(idx as f64 * 320.0, 0.0, 10.0).unwrap(),
        input,
        channels: 6,
        validity: vec![1; t * t],
        height_norm: height.iter().map(|&h| norm.normalize(f64::from(h)).unwrap() as f32).collect(),
        mask,
        building_fraction: 0.0,
    };
    tile.recompute_fraction();
    tile
}

fn overfit_smoke() -> Outcome {
    let start = Instant::now();
    let norm = HeightNormalizer { scale_m: 60.0, ..HeightNormalizer::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let tiles: Vec<Tile> = (0..8).map(|i| rect_tile(i, 32, &mut rng, &norm)).collect();
    let mut model = FloorspaceModel::init(ModelConfig { depth: 2, base_channels: 16, ..ModelConfig::default() }, 5)
        .map_err(|e| e.to_string())?;
    model.normalizer = norm;
    let cfg = TrainConfig { epochs: 301, max_steps: Some(300), lr_decay_epoch: 300, seed: 3, ..TrainConfig::default() };
    let (model, hist) = train_with(model, &tiles, &[], &cfg, |_| {}).map_err(|e| e.to_string())?;
    let steps = hist.last().map_or(0, |r| r.steps);
    let s = evaluate(&model, &tiles, &cfg.weights(), 8).map_err(|e| e.to_string())?;
    let (dice, mae) = (s.confusion.dice().unwrap_or(0.0), s.mae_m.unwrap_or(f64::INFINITY));
    ensure(steps <= 300, || format!("{steps} steps"))?;
    ensure(dice >= 0.95, || format!("dice {dice:.4} after {steps} steps"))?;
    ensure(mae <= 2.0, || format!("MAE {mae:.3} m after {steps} steps"))?;
    let secs = timed(Duration::from_secs(300), start)?;
    Ok(format!("{steps} steps, dice {dice:.4}, MAE {mae:.3} m, {secs:.1} s"))
}

fn loss_identities() -> Outcome {
    let n = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mask: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.5))).collect();
    let target: Vec<f64> = mask.iter().map(|&m| if m == 1 { rng.gen_range(0.01..0.3) } else { 0.0 }).collect();
    let validity = vec![1u8; n];
    let t = Targets { mask: &mask, height: &target, validity: &validity };
    let zeros = Tensor4::from_vec([1, 1, 8, 8], vec![0.0f64; n]).unwrap();
    let w = LossWeights::default();
    let l = loss(Some(&zeros), None, &t, &w).map_err(|e| e.to_string())?;
    let ln2 = std::f64::consts::LN_2;
    ensure((l.footprint - ln2).abs() <= 1e-6, || format!("zero-logit loss {}", l.footprint))?;
    let perfect = Tensor4::from_vec([1, 1, 8, 8], target.clone()).unwrap();
    let lh = loss(None, Some(&perfect), &t, &w).map_err(|e| e.to_string())?;
    ensure(lh.height == 0.0, || format!("perfect height loss {}", lh.height))?;
    ensure(w.footprint_weight == 0.1 && w.height_weight == 1.0, || format!("default weights {w:?}"))?;

    let model = FloorspaceModel::<f64>::init(ModelConfig { depth: 2, base_channels: 4, ..ModelConfig::default() }, 2).unwrap();
    let batch: Batch<f64> = gradcheck_batch(8, 16).unwrap();
    let (_, g1) = batch_gradients(&model, &batch, &w).map_err(|e| e.to_string())?;
    let w2 = LossWeights { height_weight: 2.0 * w.height_weight, ..w };
    let (_, g2) = batch_gradients(&model, &batch, &w2).map_err(|e| e.to_string())?;
    let mut checked = 0;
    for (i, prm) in model.params().iter().enumerate().filter(|(_, p)| p.name.starts_with("head_h")) {
        for (a, b) in g1[i].iter().zip(&g2[i]) {
            ensure(*b == 2.0 * a, || format!("{}: {b} != 2 x {a}", prm.name))?;
            checked += 1;
        }
    }
    ensure(checked > 0, || "no height-head parameters".into())?;
    Ok(format!("ln 2 within {:.1e}, L_h = 0, {checked} height-head gradients doubled exactly, weights 0.1/1.0", (l.footprint - ln2).abs()))
}

fn lr_schedule() -> Outcome {
    let cfg = TrainConfig { max_steps: None, batch_size: 1, ..TrainConfig::default() };
    ensure(cfg.epochs == 100, || format!("default epochs {}", cfg.epochs))?;
    let norm = HeightNormalizer::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let tile = rect_tile(0, 16, &mut rng, &norm);
    let model = FloorspaceModel::init(ModelConfig { depth: 1, base_channels: 1, ..ModelConfig::default() }, 1).unwrap();
    let (_, hist) = train_with(model, &[tile], &[], &cfg, |_| {}).map_err(|e| e.to_string())?;
    ensure(hist.len() == 100, || format!("{} epochs recorded", hist.len()))?;
    for r in &hist {
        let want = if r.epoch < 50 { 1e-3 } else { 1e-4 };
        ensure((r.lr - want).abs() <= 1e-12 * want, || format!("epoch {}: lr {}", r.epoch, r.lr))?;
    }
    Ok("100 epochs: 1e-3 for 0-49, 1e-4 for 50-99".into())
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut max_dev = 0.0f64;
    for case in 0..1000 {
        let n = 256;
        let pm: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.4))).collect();
        let rm: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.4))).collect();
        let valid: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.9))).collect();
        let rh: Vec<f32> = rm.iter().map(|&m| if m == 1 { rng.gen_range(1.0..80.0) } else { 0.0 }).collect();
        let ph: Vec<f32> = (0..n).map(|_| rng.gen_range(0.0..90.0)).collect();
        let vopt = if case % 2 == 0 { Some(valid.as_slice()) } else { None };
        let ok = |i: usize| vopt.is_none_or(|v| v[i] == 1);
        let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
        for i in (0..n).filter(|&i| ok(i)) {
            match (pm[i], rm[i]) {
                (1, 1) => tp += 1,
                (1, 0) => fp += 1,
                (0, 1) => fn_ += 1,
                _ => tn += 1,
            }
        }
        let f = footprint_metrics(&pm, &rm, vopt).map_err(|e| e.to_string())?;
        let c = f.counts;
        ensure((c.tp, c.fp, c.fn_, c.tn) == (tp, fp, fn_, tn), || format!("case {case}: counts {c:?}"))?;
        let ratio = |a: u64, b: u64| (b > 0).then(|| a as f64 / b as f64);
        ensure(
            f.precision == ratio(tp, tp + fp) && f.recall == ratio(tp, tp + fn_) && f.dice == ratio(2 * tp, 2 * tp + fp + fn_),
            || format!("case {case}: ratios {f:?}"),
        )?;
        let errs: Vec<(f64, f64)> = (0..n)
            .filter(|&i| ok(i) && rm[i] == 1)
            .map(|i| (f64::from(ph[i]), f64::from(rh[i])))
            .collect();
        let k = errs.len() as f64;
        let mae = errs.iter().map(|(p, r)| (p - r).abs()).sum::<f64>() / k;
        let rmse = (errs.iter().map(|(p, r)| (p - r).powi(2)).sum::<f64>() / k).sqrt();
        let mre = errs.iter().map(|(p, r)| (p - r).abs() / r).sum::<f64>() / k;
        let h = height_metrics(&ph, &rh, &rm, vopt).map_err(|e| e.to_string())?;
        for (got, want) in [(h.mae_m, mae), (h.rmse_m, rmse), (h.mre, mre)] {
            let got = got.ok_or_else(|| format!("case {case}: undefined height metric"))?;
            let dev = (got - want).abs();
            max_dev = max_dev.max(dev);
            ensure(dev <= 1e-6, || format!("case {case}: {got} vs {want}"))?;
        }
    }
    Ok(format!("1000 pairs: counts exact, height metrics within {max_dev:.1e}"))
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

fn segment_distance(q: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let t = (((q.0 - a.0) * dx + (q.1 - a.1) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    ((q.0 - a.0 - t * dx).powi(2) + (q.1 - a.1 - t * dy).powi(2)).sqrt()
}

fn rasterization_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let t = GeoTransform::north_up(1000.0, 2000.0, 2.0).unwrap();
    let extent = 128.0;
    let (mut polys, mut checked, mut skipped) = (0, 0usize, 0usize);
    while polys < 200 {
        let k = rng.gen_range(3..12);
        let (cx, cy) = (1000.0 + rng.gen_range(0.0..extent), 2000.0 - rng.gen_range(0.0..extent));
        let (rx, ry) = (rng.gen_range(3.0..50.0), rng.gen_range(3.0..50.0));
        let mut angles: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
        angles.sort_by(f64::total_cmp);
        let mut ring: Vec<Point> = angles.iter().map(|a| (cx + rx * a.cos(), cy + ry * a.sin())).collect();
        ring.push(ring[0]);
        let area: f64 = ring.windows(2).map(|e| e[0].0 * e[1].1 - e[1].0 * e[0].1).sum();
        if area.abs() < 1e-6 {
            continue;
        }
        polys += 1;
        let poly = BuildingPolygon::new(ring.clone(), vec![], 20.0).map_err(|e| e.to_string())?;
        let grid = rasterize(&[poly], t, 64, 64).map_err(|e| e.to_string())?;
        let mask = grid.mask.as_u8().unwrap();
        for row in 0..64 {
            for col in 0..64 {
                let c = t.pixel_center(col, row);
                if ring.windows(2).any(|e| segment_distance(c, e[0], e[1]) <= 1e-9) {
                    skipped += 1;
                    continue;
                }
                let inside = ring.windows(2).all(|e| cross(e[0], e[1], c) > 0.0);
                ensure((mask[row * 64 + col] == 1) == inside, || format!("polygon {polys}, cell ({col}, {row})"))?;
                checked += 1;
            }
        }
    }
    Ok(format!("200 convex polygons, {checked} cells agree, {skipped} edge cells excluded"))
}

fn aggregation_law() -> Outcome {
    let start = Instant::now();
    let (n, patch, px) = (2000usize, 20usize, 10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let sig_sd = 10.0;
    let signal = Normal::new(30.0, sig_sd).unwrap();
    let patches: Vec<f64> = (0..(n / patch) * (n / patch)).map(|_| signal.sample(&mut rng)).collect();
    let mut reference = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            reference.push(patches[(y / patch) * (n / patch) + x / patch] as f32);
        }
    }
    let mean = patches.iter().sum::<f64>() / patches.len() as f64;
    let var_s = patches.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / patches.len() as f64;
    let noise = Normal::new(0.0, var_s.sqrt()).unwrap();
    let pred: Vec<f32> = reference.iter().map(|&v| (f64::from(v) + noise.sample(&mut rng)) as f32).collect();
    let t = GeoTransform::north_up(0.0, 0.0, px).unwrap();
    let rr = Raster::from_f32(n, n, 1, t, reference).unwrap();
    let pr = Raster::from_f32(n, n, 1, t, pred).unwrap();
    let spec = AggregationSpec { side_lengths_m: (1..=50).map(|i| f64::from(i) * 10.0).collect(), min_valid_fraction: 0.5, reducer: Reducer::AllPixels };
    let curve = r2_curve(&pr, &rr, &spec, None).map_err(|e| e.to_string())?;
    let mut prev = 0.0f64;
    for c in &curve {
        let r2 = c.r2.ok_or_else(|| format!("R2 undefined at {} m", c.side_length_m))?;
        ensure(r2 >= prev - 0.02, || format!("R2 drops from {prev:.4} to {r2:.4} at {} m", c.side_length_m))?;
        prev = prev.max(r2);
    }
    let mut worst = 0.0f64;
    for l in [10.0, 50.0, 100.0, 200.0] {
        let got = curve.iter().find(|c| c.side_length_m == l).and_then(|c| c.r2).ok_or(format!("no point at {l} m"))?;
        let cells = (l / px) * (l / px);
        let want = var_s / (var_s + var_s / cells);
        worst = worst.max((got - want).abs());
        ensure((got - want).abs() <= 0.05, || format!("{l} m: R2 {got:.4}, expected {want:.4}"))?;
    }
    let s = timed(Duration::from_secs(120), start)?;
    Ok(format!("non-decreasing over 10-500 m, analytic deviation {worst:.4}, {s:.1} s"))
}

fn ntl_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10_000 {
        let z: f64 = rng.gen_range(-1e4..1e4);
        ensure(slog(-z) == -slog(z), || format!("slog not odd at {z}"))?;
    }
    let t = GeoTransform::north_up(0.0, 0.0, 120.0).unwrap();
    let vals: Vec<f32> = (0..400).map(|_| rng.gen_range(0.5..40.0)).collect();
    let pred = Raster::from_f32(20, 20, 1, t, vals.clone()).unwrap();
    let double = Raster::from_f32(20, 20, 1, t, vals.iter().map(|v| 2.0 * v).collect()).unwrap();
    let fit = fit_scale(&pred, &double).map_err(|e| e.to_string())?;
    ensure((fit.scale_b - 2.0).abs() <= 1e-9, || format!("scale {}", fit.scale_b))?;
    let (map, _) = log_diff_map(&pred, &double, &NtlConfig::default()).map_err(|e| e.to_string())?;
    ensure(map.as_f32().unwrap().iter().all(|&v| v == 0.0), || "log-difference map of proportional inputs is not 0".into())?;
    Ok(format!("slog odd on 10^4 values, scale {} (|d| {:.1e}), proportional map identically 0", fit.scale_b, (fit.scale_b - 2.0).abs()))
}

fn random_raster(rng: &mut ChaCha8Rng) -> Raster {
    let (w, h, b) = (rng.gen_range(1..20), rng.gen_range(1..20), rng.gen_range(1..5));
    let t = GeoTransform::new(rng.gen_range(-1e6..1e6), rng.gen_range(-1e6..1e6), rng.gen_range(0.1..100.0), -rng.gen_range(0.1..100.0)).unwrap();
    let n = w * h * b;
    let nodata = [f64::NAN, -9999.0, 0.0, rng.gen_range(-1e3..1e3)][rng.gen_range(0..4)];
    let data = if rng.gen_bool(0.3) && b == 1 {
        RasterData::U8((0..n).map(|_| rng.gen()).collect())
    } else {
        RasterData::F32((0..n).map(|_| f32::from_bits(rng.gen::<u32>() & 0xbfff_ffff)).collect())
    };
    Raster::new(w, h, b, nodata, t, data).unwrap()
}

fn format_fidelity() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..100 {
        let r = random_raster(&mut rng);
        let path = dir.path().join(format!("r{i}.fsr"));
        fsr::write_fsr(&r, &path).map_err(|e| e.to_string())?;
        let back = fsr::read_fsr(&path).map_err(|e| e.to_string())?;
        ensure(back == r, || format!("raster {i} differs after round trip"))?;
        ensure(fsr::encode(&back).unwrap() == fs::read(&path).unwrap(), || format!("raster {i} re-encodes differently"))?;
    }
    for i in 0..100 {
        let head = Head::from_code(rng.gen_range(0..3)).unwrap();
        let cfg = ModelConfig { in_channels: rng.gen_range(1..8), depth: rng.gen_range(1..4), base_channels: rng.gen_range(1..6), head };
        let mut m = FloorspaceModel::<f32>::init(cfg, rng.gen()).map_err(|e| e.to_string())?;
        m.normalizer = HeightNormalizer {
            mode: if rng.gen_bool(0.5) { NormMode::Log } else { NormMode::Linear },
            scale_m: rng.gen_range(1.0..1000.0),
            log_cap_m: rng.gen_range(1.0..1000.0),
        };
        if rng.gen_bool(0.7) {
            let b = cfg.in_channels;
            m.band_stats = Some(BandStats { mean: (0..b).map(|_| rng.gen_range(-1e3..1e3)).collect(), std: (0..b).map(|_| rng.gen_range(1e-3..1e3)).collect() });
        }
        for prm in m.params_mut() {
            prm.data.iter_mut().for_each(|v| *v += rng.gen_range(-1e-3..1e-3));
        }
        let path = dir.path().join(format!("m{i}.fsm"));
        checkpoint::write_fsm(&m, &path).map_err(|e| e.to_string())?;
        let back = checkpoint::read_fsm(&path).map_err(|e| e.to_string())?;
        let same_bits = back.params().iter().zip(m.params()).all(|(a, b)| {
            a.name == b.name && a.shape == b.shape && a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits())
        });
        ensure(same_bits && back == m, || format!("model {i} differs after round trip"))?;
        ensure(checkpoint::encode(&back).unwrap() == fs::read(&path).unwrap(), || format!("model {i} re-encodes differently"))?;
    }
    Ok("100 FSR1 and 100 FSM1 files round-trip bit-identically".into())
}

const PIPELINE: &[&str] = &[
    "--set", "tile_size=32",
    "--set", "min_building_fraction=0.05",
    "--set", "depth=2",
    "--set", "base_channels=4",
    "--set", "epochs=5",
    "--set", "lr_decay_epoch=3",
    "--set", "batch_size=2",
    "--set", "predict_tile=32",
    "--set", "augment=affine",
    "--set", "seed=21",
];

fn step(args: &[&str]) -> Result<(), String> {
    let mut all = args.to_vec();
    all.extend_from_slice(PIPELINE);
    match run(&all) {
        0 => Ok(()),
        code => Err(format!("`{}` exited with {code}", args[0])),
    }
}

fn pipeline(root: &Path) -> Result<Vec<u8>, String> {
    let scene = write_scene(&root.join("scene"), 3, 96);
    let (labels, tiles, model, pred, eval) = (root.join("labels"), root.join("tiles"), root.join("model"), root.join("pred"), root.join("eval"));
    step(&["rasterize", "--buildings", p(&scene.buildings), "--like", p(&scene.s1), "--out", p(&labels)])?;
    step(&["tile", "--s1", p(&scene.s1), "--s2", p(&scene.s2), "--labels", p(&labels), "--city", "demo", "--out", p(&tiles)])?;
    step(&["train", "--tiles", p(&tiles), "--out", p(&model)])?;
    step(&["predict", "--model", p(&model.join("model.fsm")), "--s1", p(&scene.s1), "--s2", p(&scene.s2), "--out", p(&pred)])?;
    step(&["eval", "--pred", p(&pred), "--reference", p(&labels), "--out", p(&eval)])?;
    fs::read(eval.join("metrics.csv")).map_err(|e| e.to_string())
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = pipeline(a.path())?;
    let second = pipeline(b.path())?;
    ensure(first == second, || "metrics CSVs differ between identical runs".into())?;
    let hist = fs::read_to_string(a.path().join("model/history.csv")).unwrap();
    ensure(hist.lines().count() == 6, || format!("expected 5 epochs in history, got {}", hist.lines().count() - 1))?;
    Ok(format!("tile -> train 5 epochs -> eval twice: identical {}-byte metrics CSVs", first.len()))
}

fn schema_columns() -> Vec<String> {
    let mut cols: Vec<String> = ["precision", "recall", "dice", "mae_m", "rmse_m", "mre"].map(String::from).to_vec();
    for name in CLASS_NAMES {
        cols.push(format!("mre_{name}"));
        cols.push(format!("share_{name}"));
        cols.push(format!("reference_share_{name}"));
    }
    cols
}

fn check_schema(dir: &Path, expect_null: &[&str]) -> Result<(), String> {
    let path = dir.join("metrics.csv");
    let bytes = fs::read(&path).map_err(|e| e.to_string())?;
    let row = read_metrics_csv(&bytes, &path).map_err(|e| e.to_string())?;
    let text = String::from_utf8(bytes).unwrap();
    let json: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("metrics.json")).unwrap()).unwrap();
    for col in schema_columns() {
        let v = row.iter().find(|(c, _)| *c == col).ok_or(format!("missing column {col}"))?.1;
        if expect_null.contains(&col.as_str()) {
            ensure(v.is_none(), || format!("{col} should be null, got {v:?}"))?;
        }
    }
    for (k, share) in REFERENCE_CLASS_SHARES.iter().enumerate() {
        let col = format!("reference_share_{}", CLASS_NAMES[k]);
        ensure(row.iter().any(|(c, v)| *c == col && *v == Some(*share)), || format!("{col} is not {share}"))?;
        ensure(json["classes"][k]["reference_share"] == *share, || format!("JSON reference share {k}"))?;
    }
    for key in expect_null.iter().filter(|k| ["precision", "recall", "dice", "mae_m", "rmse_m", "mre"].contains(k)) {
        ensure(json[*key].is_null(), || format!("JSON {key} should be null"))?;
    }
    ensure(expect_null.is_empty() || text.contains(NULL), || "no literal null in CSV".into())?;
    Ok(())
}

fn write_labels(dir: &Path, mask: Vec<u8>, height: Vec<f32>) {
    let t = common::transform();
    fsr::write_fsr(&Raster::from_u8(8, 8, t, mask).unwrap(), dir.join("mask.fsr")).unwrap();
    fsr::write_fsr(&Raster::from_f32(8, 8, 1, t, height).unwrap(), dir.join("height.fsr")).unwrap();
}

fn schema_conformance() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let low: Vec<u8> = (0..64).map(|i| u8::from(i < 20)).collect();
    let low_h: Vec<f32> = low.iter().map(|&m| if m == 1 { 6.0 } else { 0.0 }).collect();
    write_labels(&d.join("ref_low"), low.clone(), low_h.clone());
    write_labels(&d.join("pred_low"), low.clone(), low_h.iter().map(|h| h * 1.5).collect());
    write_labels(&d.join("empty"), vec![0; 64], vec![0.0; 64]);
    let cases: [(&str, &str, &[&str]); 3] = [
        ("pred_low", "ref_low", &["mre_multi", "mre_mid", "mre_high"]),
        ("empty", "empty", &["precision", "recall", "dice", "mae_m", "rmse_m", "mre", "mre_low", "mre_multi", "mre_mid", "mre_high", "share_low", "share_multi", "share_mid", "share_high"]),
        ("pred_low", "empty", &["recall", "mae_m", "rmse_m", "mre", "share_low"]),
    ];
    for (i, (pred, reference, nulls)) in cases.iter().enumerate() {
        let out = d.join(format!("eval{i}"));
        let code = run(&["eval", "--pred", p(&d.join(pred)), "--reference", p(&d.join(reference)), "--out", p(&out)]);
        ensure(code == 0, || format!("eval {pred} vs {reference} exited with {code}"))?;
        check_schema(&out, nulls)?;
    }
    let m: serde_json::Value = serde_json::from_slice(&fs::read(d.join("eval0/metrics.json")).unwrap()).unwrap();
    ensure(m["classes"][0]["mre"] == 0.5 && m["classes"][0]["share"] == 1.0, || format!("low-rise class {}", m["classes"][0]))?;
    Ok("3 pairs: all 18 schema columns present, undefined entries are explicit nulls".into())
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("gradient correctness", gradient_correctness),
        ("overfit smoke test", overfit_smoke),
        ("loss identities", loss_identities),
        ("lr schedule", lr_schedule),
        ("metric oracle equivalence", metric_oracle),
        ("rasterization oracle", rasterization_oracle),
        ("aggregation law", aggregation_law),
        ("ntl identities", ntl_identities),
        ("format fidelity", format_fidelity),
        ("determinism", determinism),
        ("schema conformance", schema_conformance),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|s| name.contains(s.as_str())) {
            continue;
        }
        match f() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
