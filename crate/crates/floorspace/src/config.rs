//! Flat `key = value` pipeline configuration with a closed schema.
//!
//! Every key has a default; a file and `--set key=value` overrides are
//! layered on top in that order. Unknown keys, duplicate keys in one file,
//! section headers and unparsable values are config errors.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use floorspace_core::aggregate::{AggregationSpec, Reducer};
use floorspace_core::augment::{AugmentPolicy, AugmentRanges};
use floorspace_core::dataset::{HeightNormalizer, NormMode, TilingConfig};
use floorspace_core::metrics::{ReportConfig, StoreyClasses};
use floorspace_core::nn::train::HEIGHT_TASK_COEFFICIENTS;
use floorspace_core::nn::{Head, ModelConfig, TrainConfig, TwoStageMode};
use floorspace_core::ntl::{NtlConfig, Palette};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Uint,
    Float,
    OptUint,
    UintList,
    Choice(&'static [&'static str]),
}

/// `(key, default, kind)` for every accepted key.
const SCHEMA: &[(&str, &str, Kind)] = &[
    ("seed", "0", Kind::Uint),
    ("scene_cloud_limit", "60", Kind::Float),
    ("pixel_cloud_threshold", "40", Kind::Float),
    ("tile_size", "256", Kind::Uint),
    ("min_building_fraction", "0.1", Kind::Float),
    ("val_ratio", "0.1", Kind::Float),
    ("norm_mode", "linear", Kind::Choice(&["linear", "log"])),
    ("height_scale_m", "400", Kind::Float),
    ("log_cap_m", "400", Kind::Float),
    ("depth", "3", Kind::Uint),
    ("base_channels", "16", Kind::Uint),
    ("head", "multitask", Kind::Choice(&["multitask", "footprint_only", "height_only"])),
    ("two_stage", "none", Kind::Choice(&["none", "A1", "A2"])),
    ("lr_init", "0.001", Kind::Float),
    ("lr_decay_factor", "0.1", Kind::Float),
    ("lr_decay_epoch", "50", Kind::Uint),
    ("epochs", "100", Kind::Uint),
    ("footprint_weight", "0.1", Kind::Float),
    ("height_weight", "1", Kind::Float),
    ("smooth_l1_delta", "1", Kind::Float),
    ("batch_size", "8", Kind::Uint),
    ("max_steps", "none", Kind::OptUint),
    ("augment", "none", Kind::Choice(&["none", "rotate", "affine", "mask_s1"])),
    ("rotate_deg", "10", Kind::Float),
    ("shear_deg", "8", Kind::Float),
    ("translate_frac", "0.05", Kind::Float),
    ("mask_area_min", "0.05", Kind::Float),
    ("mask_area_max", "0.25", Kind::Float),
    ("predict_tile", "256", Kind::Uint),
    ("predict_batch", "4", Kind::Uint),
    ("metres_per_storey", "3", Kind::Float),
    ("storey_bounds", "3,6,9", Kind::UintList),
    ("hist_bin_m", "5", Kind::Float),
    ("hist_cap_m", "100", Kind::Float),
    ("agg_side_min_m", "10", Kind::Uint),
    ("agg_side_max_m", "2000", Kind::Uint),
    ("agg_side_step_m", "10", Kind::Uint),
    ("agg_min_valid_fraction", "0.5", Kind::Float),
    ("agg_reducer", "mean", Kind::Choice(&["mean", "buildings"])),
    ("scatter_side_m", "200", Kind::Float),
    ("ntl_cell_m", "120", Kind::Float),
    ("slog_epsilon", "1e-9", Kind::Float),
    ("palette", "diverging", Kind::Choice(&["diverging", "sequential"])),
    ("gradcheck_depth", "2", Kind::Uint),
    ("gradcheck_base", "8", Kind::Uint),
    ("gradcheck_step", "0.001", Kind::Float),
    ("gradcheck_samples", "32", Kind::Uint),
    ("gradcheck_tolerance", "0.001", Kind::Float),
];

fn kind_of(key: &str) -> Result<Kind> {
    SCHEMA
        .iter()
        .find(|(k, _, _)| *k == key)
        .map(|&(_, _, kind)| kind)
        .ok_or_else(|| Error::Config(format!("unknown key '{key}'")))
}

fn check_value(key: &str, value: &str) -> Result<()> {
    let bad = |what: &str| Error::Config(format!("{key} = '{value}': {what}"));
    match kind_of(key)? {
        Kind::Uint => value.parse::<u64>().map(drop).map_err(|_| bad("expected a non-negative integer")),
        Kind::Float => match value.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(()),
            _ => Err(bad("expected a finite number")),
        },
        Kind::OptUint => match value {
            "none" => Ok(()),
            v => v.parse::<u64>().map(drop).map_err(|_| bad("expected an integer or 'none'")),
        },
        Kind::UintList => value
            .split(',')
            .try_for_each(|v| v.trim().parse::<u32>().map(drop))
            .map_err(|_| bad("expected comma-separated integers")),
        Kind::Choice(options) => {
            if options.contains(&value) {
                Ok(())
            } else {
                Err(bad(&format!("expected one of {}", options.join("|"))))
            }
        }
    }
}

/// Parses `key = value` lines; `#` and `;` start comments.
pub fn parse_ini(text: &str, origin: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split(['#', ';']).next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            return Err(Error::Config(format!("{origin}:{}: sections are not supported in the flat format", n + 1)));
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{origin}:{}: expected 'key = value'", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        check_value(k, v).map_err(|e| Error::Config(format!("{origin}:{}: {}", n + 1, strip(&e))))?;
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("{origin}:{}: duplicate key '{k}'", n + 1)));
        }
    }
    Ok(out)
}

fn strip(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

/// Effective configuration: schema defaults with file and flag overrides.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineConfig {
    values: BTreeMap<String, String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { values: SCHEMA.iter().map(|&(k, v, _)| (k.to_string(), v.to_string())).collect() }
    }
}

impl PipelineConfig {
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            cfg.values.extend(parse_ini(&text, &path.display().to_string())?);
        }
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| Error::Config(format!("override '{o}' is not key=value")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        check_value(key, value)?;
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("schema key {key}"))
    }

    /// Sorted `key=value` lines.
    pub fn canonical(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Hex SHA-256 of the canonical form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    fn uint(&self, key: &str) -> usize {
        self.get(key).parse().expect("validated on insert")
    }

    fn float(&self, key: &str) -> f64 {
        self.get(key).parse().expect("validated on insert")
    }

    pub fn seed(&self) -> u64 {
        self.get("seed").parse().expect("validated on insert")
    }

    pub fn scene_cloud_limit(&self) -> f64 {
        self.float("scene_cloud_limit")
    }

    pub fn pixel_cloud_threshold(&self) -> f64 {
        self.float("pixel_cloud_threshold")
    }

    pub fn normalizer(&self) -> Result<HeightNormalizer> {
        let n = HeightNormalizer {
            mode: NormMode::parse(self.get("norm_mode"))?,
            scale_m: self.float("height_scale_m"),
            log_cap_m: self.float("log_cap_m"),
        };
        n.validate()?;
        Ok(n)
    }

    pub fn tiling(&self) -> Result<TilingConfig> {
        Ok(TilingConfig {
            tile_size: self.uint("tile_size"),
            min_building_fraction: self.float("min_building_fraction"),
            val_ratio: self.float("val_ratio"),
            seed: self.seed(),
            normalizer: self.normalizer()?,
        })
    }

    pub fn model(&self, in_channels: usize) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            in_channels,
            depth: self.uint("depth"),
            base_channels: self.uint("base_channels"),
            head: Head::parse(self.get("head"))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn two_stage(&self) -> Result<Option<TwoStageMode>> {
        match self.get("two_stage") {
            "none" => Ok(None),
            m => TwoStageMode::parse(m).map(Some).map_err(Into::into),
        }
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let max_steps = match self.get("max_steps") {
            "none" => None,
            v => Some(v.parse().expect("validated on insert")),
        };
        let cfg = TrainConfig {
            lr_init: self.float("lr_init"),
            lr_decay_factor: self.float("lr_decay_factor"),
            lr_decay_epoch: self.uint("lr_decay_epoch"),
            epochs: self.uint("epochs"),
            footprint_weight: self.float("footprint_weight"),
            height_weight: self.float("height_weight"),
            height_task_coefficient_grid: HEIGHT_TASK_COEFFICIENTS.to_vec(),
            smooth_l1_delta: self.float("smooth_l1_delta"),
            batch_size: self.uint("batch_size"),
            seed: self.seed(),
            augment: AugmentPolicy::parse(self.get("augment"))?,
            augment_ranges: AugmentRanges {
                rotate_deg: self.float("rotate_deg"),
                shear_deg: self.float("shear_deg"),
                translate_frac: self.float("translate_frac"),
                mask_area_min: self.float("mask_area_min"),
                mask_area_max: self.float("mask_area_max"),
            },
            max_steps,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn predict_tile(&self) -> usize {
        self.uint("predict_tile")
    }

    pub fn predict_batch(&self) -> usize {
        self.uint("predict_batch")
    }

    pub fn report(&self) -> Result<ReportConfig> {
        let b: Vec<u32> = self.get("storey_bounds").split(',').map(|v| v.trim().parse().expect("validated on insert")).collect();
        let upper_storeys: [u32; 3] =
            b.try_into().map_err(|b: Vec<u32>| Error::Config(format!("storey_bounds needs 3 values, got {}", b.len())))?;
        let storeys = StoreyClasses { metres_per_storey: self.float("metres_per_storey"), upper_storeys };
        storeys.validate()?;
        Ok(ReportConfig { storeys, hist_bin_m: self.float("hist_bin_m"), hist_cap_m: self.float("hist_cap_m") })
    }

    pub fn aggregation(&self) -> Result<AggregationSpec> {
        let (lo, hi, step) = (self.uint("agg_side_min_m"), self.uint("agg_side_max_m"), self.uint("agg_side_step_m"));
        if lo == 0 || step == 0 || hi < lo {
            return Err(Error::Config(format!("aggregation sides {lo}..={hi} step {step} are empty or non-positive")));
        }
        let spec = AggregationSpec {
            side_lengths_m: (lo..=hi).step_by(step).map(|s| s as f64).collect(),
            min_valid_fraction: self.float("agg_min_valid_fraction"),
            reducer: Reducer::parse(self.get("agg_reducer"))?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn scatter_side_m(&self) -> f64 {
        self.float("scatter_side_m")
    }

    pub fn ntl(&self) -> Result<NtlConfig> {
        let cfg = NtlConfig { cell_m: self.float("ntl_cell_m"), slog_epsilon: self.float("slog_epsilon") };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn palette(&self) -> Result<Palette> {
        Ok(Palette::parse(self.get("palette"))?)
    }

    pub fn gradcheck(&self) -> GradcheckSettings {
        GradcheckSettings {
            depth: self.uint("gradcheck_depth"),
            base_channels: self.uint("gradcheck_base"),
            step: self.float("gradcheck_step"),
            samples: self.uint("gradcheck_samples"),
            tolerance: self.float("gradcheck_tolerance"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckSettings {
    pub depth: usize,
    pub base_channels: usize,
    pub step: f64,
    pub samples: usize,
    pub tolerance: f64,
}
