//! Stage-granular commands. Each reads its inputs from files, writes its
//! artifacts and a provenance manifest into `--out`, and returns a one-line
//! summary.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use floorspace_core::aggregate::{r2_curve, scatter_export};
use floorspace_core::dataset::build_tileset;
use floorspace_core::ingest::{composite, stack_bands, BandStack};
use floorspace_core::metrics::{metrics_report, EvalInputs};
use floorspace_core::nn::{
    compose_two_stage, gradient_check, predict, train, Batch, FloorspaceModel, Head, ModelConfig, Tensor4, TwoStage,
};
use floorspace_core::ntl::{align_to_ntl, log_diff_map, render};
use floorspace_core::polygon::rasterize;
use floorspace_core::{LabelGrid, Raster};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{read_fsm, write_fsm};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::fsr::{read_fsr, write_fsr};
use crate::geojson::read_buildings;
use crate::ppm::write_map;
use crate::provenance::{version_stamp, write_manifest};
use crate::report::{curve_csv, gradcheck_csv, history_csv, scatter_csv, write_metrics, write_ntl_json};
use crate::scenes::{load_time_stack, read_scene_list};
use crate::tileset::{read_tileset, write_tileset, MANIFEST_FILE as TILESET_FILE};

pub const MASK_FILE: &str = "mask.fsr";
pub const HEIGHT_FILE: &str = "height.fsr";
pub const PROBABILITY_FILE: &str = "probability.fsr";
pub const MODEL_FILE: &str = "model.fsm";
pub const STAGE1_FILE: &str = "stage1.fsm";

#[derive(Debug, Parser)]
#[command(name = "floorspace", version, about = "Building footprint and height estimation pipeline")]
pub struct Cli {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Configuration override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Worker cap; defaults to the available cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mean-composite a scene list into one raster.
    Composite {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "composite.fsr")]
        name: String,
    },
    /// Burn GeoJSON building polygons onto the grid of a raster.
    Rasterize {
        #[arg(long)]
        buildings: PathBuf,
        #[arg(long)]
        like: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cut SAR and optical composites plus labels into a tile set.
    Tile {
        #[arg(long)]
        s1: PathBuf,
        #[arg(long)]
        s2: PathBuf,
        /// Directory holding mask.fsr and height.fsr.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value = "city")]
        city: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a tile set.
    Train {
        #[arg(long)]
        tiles: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Resume from a checkpoint instead of a fresh initialization.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Footprint-only model feeding a two-stage height model.
        #[arg(long)]
        stage1: Option<PathBuf>,
    },
    /// Predict footprint probability, mask and height for a scene.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        stage1: Option<PathBuf>,
        #[arg(long)]
        s1: PathBuf,
        #[arg(long)]
        s2: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pixel metrics of a prediction against a reference.
    Eval {
        /// Directory holding the predicted mask.fsr and height.fsr.
        #[arg(long)]
        pred: PathBuf,
        /// Directory holding the reference mask.fsr and height.fsr.
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        validity: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// R-squared curve over block sizes and a scatter export.
    Aggregate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        trust: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare block heights with nightlight radiance.
    Ntl {
        #[arg(long)]
        height: PathBuf,
        #[arg(long)]
        ntl: PathBuf,
        #[arg(long)]
        trust: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a single-band raster to a PPM image.
    Render {
        #[arg(long)]
        raster: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "map")]
        name: String,
    },
    /// Compare analytic and finite-difference gradients.
    Gradcheck {
        #[arg(long)]
        out: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Composite { .. } => "composite",
            Command::Rasterize { .. } => "rasterize",
            Command::Tile { .. } => "tile",
            Command::Train { .. } => "train",
            Command::Predict { .. } => "predict",
            Command::Eval { .. } => "eval",
            Command::Aggregate { .. } => "aggregate",
            Command::Ntl { .. } => "ntl",
            Command::Render { .. } => "render",
            Command::Gradcheck { .. } => "gradcheck",
        }
    }
}

fn require(path: &Path) -> Result<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingInput(path.display().to_string()))
    }
}

fn read_input(path: &Path) -> Result<Raster> {
    read_fsr(require(path)?)
}

fn read_labels(dir: &Path) -> Result<LabelGrid> {
    let labels = LabelGrid { mask: read_input(&dir.join(MASK_FILE))?, height_m: read_input(&dir.join(HEIGHT_FILE))? };
    labels.validate()?;
    Ok(labels)
}

fn read_u8(path: &Path) -> Result<Vec<u8>> {
    Ok(read_input(path)?.as_u8()?.to_vec())
}

fn read_stack(s1: &Path, s2: &Path) -> Result<BandStack> {
    Ok(stack_bands(&read_input(s1)?, &read_input(s2)?)?)
}

fn finish(command: &str, cfg: &PipelineConfig, out: &Path, inputs: &[&Path], outputs: &[&str]) -> Result<()> {
    write_manifest(out, &version_stamp(command, cfg, inputs, outputs))
}

fn opt(p: &Option<PathBuf>) -> Option<&Path> {
    p.as_deref()
}

/// Deterministic random batch for the gradient check.
pub fn gradcheck_batch(seed: u64, side: usize) -> Result<Batch<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, c) = (2, 6);
    let input = (0..n * c * side * side).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mask: Vec<u8> = (0..n * side * side).map(|_| u8::from(rng.gen_bool(0.4))).collect();
    let target = mask.iter().map(|&m| if m == 1 { rng.gen_range(0.02..0.5) } else { 0.0 }).collect();
    let validity = (0..n * side * side).map(|_| u8::from(rng.gen_bool(0.95))).collect();
    Ok(Batch { input: Tensor4::from_vec([n, c, side, side], input)?, mask, target, validity })
}

/// Runs one command and returns its summary line.
pub fn run(cli: &Cli) -> Result<String> {
    if cli.threads == Some(0) {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    if let Some(path) = &cli.config {
        require(path)?;
    }
    let cfg = PipelineConfig::load(cli.config.as_deref(), &cli.overrides)?;
    let name = cli.command.name();
    match &cli.command {
        Command::Composite { scenes, out, name: file } => {
            let entries = read_scene_list(require(scenes)?)?;
            let stack = load_time_stack(&entries, scenes)?;
            let r = composite(&stack, cfg.scene_cloud_limit(), cfg.pixel_cloud_threshold())?;
            write_fsr(&r, out.join(file))?;
            finish(name, &cfg, out, &[scenes], &[file])?;
            Ok(format!("composite: {} scenes -> {}x{}x{} {}", entries.len(), r.width, r.height, r.bands, out.join(file).display()))
        }
        Command::Rasterize { buildings, like, out } => {
            let polys = read_buildings(require(buildings)?)?;
            let grid = read_input(like)?;
            let labels = rasterize(&polys, grid.transform, grid.width, grid.height)?;
            write_fsr(&labels.mask, out.join(MASK_FILE))?;
            write_fsr(&labels.height_m, out.join(HEIGHT_FILE))?;
            finish(name, &cfg, out, &[buildings, like], &[MASK_FILE, HEIGHT_FILE])?;
            let n = labels.mask.as_u8()?.iter().filter(|&&m| m == 1).count();
            Ok(format!("rasterize: {} polygons -> {n} building pixels of {}", polys.len(), labels.mask.pixels()))
        }
        Command::Tile { s1, s2, labels, city, out } => {
            let stack = read_stack(s1, s2)?;
            let labels_grid = read_labels(labels)?;
            let ts = build_tileset(city, &stack, &labels_grid, &cfg.tiling()?)?;
            write_tileset(&ts, out)?;
            finish(name, &cfg, out, &[s1, s2, labels], &[TILESET_FILE, crate::tileset::TILE_DIR])?;
            Ok(format!("tile: {} train + {} val tiles of {} px -> {}", ts.train.len(), ts.val.len(), ts.manifest.tile_size, out.display()))
        }
        Command::Train { tiles, out, init, stage1 } => {
            let ts = read_tileset(require(tiles)?)?;
            let tcfg = cfg.train()?;
            let channels = ts.manifest.band_stats.bands();
            let (history, params) = match (cfg.two_stage()?, stage1) {
                (Some(mode), Some(s1)) => {
                    let stage1 = read_fsm(require(s1)?)?;
                    let two = compose_two_stage(stage1, mode, cfg.seed())?;
                    let (two, history) = two.train(&ts, &tcfg)?;
                    write_fsm(&two.stage2, out.join(MODEL_FILE))?;
                    write_fsm(&two.stage1, out.join(STAGE1_FILE))?;
                    (history, two.stage2.num_parameters())
                }
                (Some(_), None) => return Err(Error::Config("two_stage is set but --stage1 was not given".into())),
                (None, Some(_)) => return Err(Error::Config("--stage1 needs two_stage = A1 or A2".into())),
                (None, None) => {
                    let model = match init {
                        Some(p) => read_fsm(require(p)?)?,
                        None => FloorspaceModel::init(cfg.model(channels)?, cfg.seed())?,
                    };
                    let (model, history) = train(model, &ts, &tcfg)?;
                    write_fsm(&model, out.join(MODEL_FILE))?;
                    (history, model.num_parameters())
                }
            };
            crate::write_bytes(&out.join("history.csv"), &history_csv(&history))?;
            let mut outputs = vec![MODEL_FILE, "history.csv"];
            if stage1.is_some() {
                outputs.push(STAGE1_FILE);
            }
            let inputs: Vec<&Path> = [Some(tiles.as_path()), opt(init), opt(stage1)].into_iter().flatten().collect();
            finish(name, &cfg, out, &inputs, &outputs)?;
            let last = history.last().expect("at least one epoch");
            Ok(format!(
                "train: {} epochs, {params} parameters, final train loss {:.6}, val dice {}",
                history.len(),
                last.train.total,
                last.val_dice.map_or("null".into(), |d| format!("{d:.4}"))
            ))
        }
        Command::Predict { model, stage1, s1, s2, out } => {
            let stack = read_stack(s1, s2)?;
            let m = read_fsm(require(model)?)?;
            let (tile, batch) = (cfg.predict_tile(), cfg.predict_batch());
            let p = match (stage1, cfg.two_stage()?) {
                (Some(s), Some(mode)) => {
                    let two = TwoStage { mode, stage1: read_fsm(require(s)?)?, stage2: m };
                    if two.stage1.config.head != Head::FootprintOnly || two.stage2.config.head != Head::HeightOnly {
                        return Err(Error::Config("two-stage prediction needs footprint-only and height-only models".into()));
                    }
                    two.predict(&stack, tile, batch)?
                }
                (Some(_), None) => return Err(Error::Config("--stage1 needs two_stage = A1 or A2".into())),
                (None, _) => predict(&m, &stack, tile, batch)?,
            };
            write_fsr(&p.probability, out.join(PROBABILITY_FILE))?;
            write_fsr(&p.mask, out.join(MASK_FILE))?;
            write_fsr(&p.height_m, out.join(HEIGHT_FILE))?;
            let inputs: Vec<&Path> = [Some(model.as_path()), opt(stage1), Some(s1), Some(s2)].into_iter().flatten().collect();
            finish(name, &cfg, out, &inputs, &[PROBABILITY_FILE, MASK_FILE, HEIGHT_FILE])?;
            let n = p.mask.as_u8()?.iter().filter(|&&m| m == 1).count();
            Ok(format!("predict: {}x{} pixels, {n} predicted building pixels", p.mask.width, p.mask.height))
        }
        Command::Eval { pred, reference, validity, out } => {
            let pm = read_input(&pred.join(MASK_FILE))?;
            let ph = read_input(&pred.join(HEIGHT_FILE))?;
            let labels = read_labels(reference)?;
            for (r, what) in [(&pm, "predicted mask"), (&ph, "predicted height")] {
                labels.mask.require_same_grid(r, what)?;
            }
            let v = validity.as_deref().map(read_u8).transpose()?;
            let x = EvalInputs {
                pred_mask: pm.as_u8()?,
                pred_h: ph.as_f32()?,
                ref_mask: labels.mask.as_u8()?,
                ref_h: labels.height_m.as_f32()?,
                validity: v.as_deref(),
            };
            let report = metrics_report(&x, &cfg.report()?)?;
            write_metrics(&report, out)?;
            let inputs: Vec<&Path> = [Some(pred.as_path()), Some(reference.as_path()), opt(validity)].into_iter().flatten().collect();
            finish(name, &cfg, out, &inputs, &["metrics.json", "metrics.csv", "histogram.csv"])?;
            let f = |v: Option<f64>| v.map_or("null".into(), |x| format!("{x:.4}"));
            Ok(format!(
                "eval: precision {} recall {} dice {} mae_m {} rmse_m {} mre {}",
                f(report.footprint.precision),
                f(report.footprint.recall),
                f(report.footprint.dice),
                f(report.height.mae_m),
                f(report.height.rmse_m),
                f(report.height.mre)
            ))
        }
        Command::Aggregate { pred, reference, trust, out } => {
            let p = read_input(pred)?;
            let r = read_input(reference)?;
            let t = trust.as_deref().map(read_u8).transpose()?;
            let spec = cfg.aggregation()?;
            let curve = r2_curve(&p, &r, &spec, t.as_deref())?;
            let scatter = scatter_export(&p, &r, cfg.scatter_side_m(), &spec, t.as_deref())?;
            crate::write_bytes(&out.join("curve.csv"), &curve_csv(&curve))?;
            crate::write_bytes(&out.join("scatter.csv"), &scatter_csv(&scatter))?;
            let inputs: Vec<&Path> = [Some(pred.as_path()), Some(reference.as_path()), opt(trust)].into_iter().flatten().collect();
            finish(name, &cfg, out, &inputs, &["curve.csv", "scatter.csv"])?;
            let defined = curve.iter().filter(|c| c.r2.is_some()).count();
            Ok(format!("aggregate: {} scales ({defined} defined), {} scatter cells", curve.len(), scatter.len()))
        }
        Command::Ntl { height, ntl, trust, out } => {
            let h = read_input(height)?;
            let n = read_input(ntl)?;
            let ncfg = cfg.ntl()?;
            let t = &n.transform;
            if (t.pixel_w - ncfg.cell_m).abs() > 1e-9 * ncfg.cell_m || (t.pixel_h + ncfg.cell_m).abs() > 1e-9 * ncfg.cell_m {
                return Err(floorspace_core::Error::Alignment(format!(
                    "nightlight grid has {} x {} m cells, configured ntl_cell_m is {}",
                    t.pixel_w, -t.pixel_h, ncfg.cell_m
                ))
                .into());
            }
            let tv = trust.as_deref().map(read_u8).transpose()?;
            let aligned = align_to_ntl(&h, &n, tv.as_deref())?;
            let (map, fit) = log_diff_map(&aligned, &n, &ncfg)?;
            write_fsr(&aligned, out.join("aligned_height.fsr"))?;
            write_fsr(&map, out.join("log_diff.fsr"))?;
            write_ntl_json(&fit, &out.join("ntl.json"))?;
            let inputs: Vec<&Path> = [Some(height.as_path()), Some(ntl.as_path()), opt(trust)].into_iter().flatten().collect();
            finish(name, &cfg, out, &inputs, &["aligned_height.fsr", "log_diff.fsr", "ntl.json"])?;
            Ok(format!(
                "ntl: {} cells, scale_b {}, pearson_r {}",
                fit.n_cells,
                fit.scale_b,
                fit.pearson_r.map_or("null".into(), |r| format!("{r:.4}"))
            ))
        }
        Command::Render { raster, out, name: stem } => {
            let r = read_input(raster)?;
            let m = render(&r, cfg.palette()?)?;
            let ppm = format!("{stem}.ppm");
            let txt = format!("{stem}.txt");
            write_map(&m, &out.join(&ppm))?;
            finish(name, &cfg, out, &[raster], &[&ppm, &txt])?;
            Ok(format!("render: {}x{} {} map, range [{}, {}]", m.width, m.height, m.palette.as_str(), m.lo, m.hi))
        }
        Command::Gradcheck { out } => {
            let g = cfg.gradcheck();
            let mcfg = ModelConfig { depth: g.depth, base_channels: g.base_channels, ..ModelConfig::default() };
            let model = FloorspaceModel::<f64>::init(mcfg, cfg.seed())?;
            let side = mcfg.side_multiple().max(16);
            let batch = gradcheck_batch(cfg.seed(), side)?;
            let w = cfg.train()?.weights();
            let groups = gradient_check(&model, &batch, &w, g.step, g.samples, cfg.seed())?;
            crate::write_bytes(&out.join("gradcheck.csv"), &gradcheck_csv(&groups))?;
            finish(name, &cfg, out, &[], &["gradcheck.csv"])?;
            let worst = groups
                .iter()
                .map(|e| {
                    let err = e.max_rel_error.max(if e.plain_sampled > 0 { e.plain_max_rel_error } else { 0.0 });
                    (if err.is_nan() { f64::INFINITY } else { err }, e.name.as_str())
                })
                .fold((0.0, ""), |a, b| if b.0 > a.0 { b } else { a });
            let line = format!("gradcheck: {} groups, max relative error {:e} ({})", groups.len(), worst.0, worst.1);
            if worst.0 >= g.tolerance {
                return Err(Error::CheckFailed(format!("{line} is not below {:e}", g.tolerance)));
            }
            Ok(line)
        }
    }
}

/// Machine-readable failure line.
pub fn error_line(e: &Error) -> String {
    let msg = e.to_string().replace(['\n', '\r'], " ");
    format!("error kind={} code={} msg={msg}", e.kind(), e.exit_code())
}

/// Parses `args`, runs the command, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            eprint!("{e}");
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("error kind=usage code=2 msg={first}");
            return 2;
        }
    };
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("{}", error_line(&e));
            e.exit_code()
        }
    }
}

/// Sorted file names in an output directory.
pub fn list_outputs(dir: &Path) -> Result<Vec<String>> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect();
    names.sort();
    Ok(names)
}
