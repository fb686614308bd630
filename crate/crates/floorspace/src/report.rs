//! JSON and CSV report writers. Undefined values are written as `null` in
//! both formats.

use std::path::Path;

use floorspace_core::aggregate::{CurvePoint, ScatterRow};
use floorspace_core::metrics::{MetricsReport, CLASS_NAMES, REFERENCE_CLASS_MRE, REFERENCE_CLASS_SHARES};
use floorspace_core::nn::gradcheck::GroupError;
use floorspace_core::nn::History;
use floorspace_core::ntl::ScaleFit;
use serde_json::{json, Value};

use crate::error::{Error, Result};

pub const NULL: &str = "null";

fn num(v: Option<f64>) -> String {
    v.map_or_else(|| NULL.into(), |x| x.to_string())
}

fn csv_bytes(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("write to memory");
    for r in rows {
        w.write_record(&r).expect("write to memory");
    }
    w.into_inner().expect("flush to memory")
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(v).expect("value serializes");
    bytes.push(b'\n');
    crate::write_bytes(path, &bytes)
}

pub fn metrics_json(r: &MetricsReport) -> Value {
    let f = &r.footprint;
    let limits = r.storeys.limits_m();
    let classes: Vec<Value> = (0..4)
        .map(|k| {
            json!({
                "name": CLASS_NAMES[k],
                "lower_m": if k == 0 { 0.0 } else { limits[k - 1] },
                "upper_m": limits.get(k).copied(),
                "mre": r.classes.mre[k],
                "share": r.classes.shares[k],
                "count": r.classes.counts[k],
                "reference_share": REFERENCE_CLASS_SHARES[k],
                "reference_mre": REFERENCE_CLASS_MRE[k],
            })
        })
        .collect();
    json!({
        "precision": f.precision,
        "recall": f.recall,
        "dice": f.dice,
        "mae_m": r.height.mae_m,
        "rmse_m": r.height.rmse_m,
        "mre": r.height.mre,
        "n_height_pixels": r.height.n,
        "counts": { "tp": f.counts.tp, "fp": f.counts.fp, "fn": f.counts.fn_, "tn": f.counts.tn },
        "classes": classes,
        "metres_per_storey": r.storeys.metres_per_storey,
        "histogram": {
            "bin_width_m": r.histogram.bin_width_m,
            "cap_m": r.histogram.cap_m,
            "overflow": r.histogram.overflow,
        },
    })
}

/// Flat one-row CSV of the complete schema.
pub fn metrics_csv(r: &MetricsReport) -> Vec<u8> {
    let f = &r.footprint;
    let mut header: Vec<String> =
        ["precision", "recall", "dice", "mae_m", "rmse_m", "mre", "n_height_pixels", "tp", "fp", "fn", "tn"].map(String::from).to_vec();
    let mut row = vec![
        num(f.precision),
        num(f.recall),
        num(f.dice),
        num(r.height.mae_m),
        num(r.height.rmse_m),
        num(r.height.mre),
        r.height.n.to_string(),
        f.counts.tp.to_string(),
        f.counts.fp.to_string(),
        f.counts.fn_.to_string(),
        f.counts.tn.to_string(),
    ];
    for (k, name) in CLASS_NAMES.iter().enumerate() {
        header.extend([
            format!("mre_{name}"),
            format!("share_{name}"),
            format!("count_{name}"),
            format!("reference_share_{name}"),
            format!("reference_mre_{name}"),
        ]);
        row.extend([
            num(r.classes.mre[k]),
            num(r.classes.shares[k]),
            r.classes.counts[k].to_string(),
            REFERENCE_CLASS_SHARES[k].to_string(),
            REFERENCE_CLASS_MRE[k].to_string(),
        ]);
    }
    csv_bytes(&header, [row])
}

pub fn histogram_csv(r: &MetricsReport) -> Vec<u8> {
    let h = &r.histogram;
    let rows = h.bin_start_m.iter().zip(&h.counts).map(|(s, c)| vec![s.to_string(), c.to_string()]);
    csv_bytes(&["bin_start_m".into(), "count".into()], rows)
}

/// Writes `metrics.json`, `metrics.csv` and `histogram.csv` into `dir`.
pub fn write_metrics(r: &MetricsReport, dir: &Path) -> Result<()> {
    write_json(&dir.join("metrics.json"), &metrics_json(r))?;
    crate::write_bytes(&dir.join("metrics.csv"), &metrics_csv(r))?;
    crate::write_bytes(&dir.join("histogram.csv"), &histogram_csv(r))
}

pub fn curve_csv(points: &[CurvePoint]) -> Vec<u8> {
    let rows = points.iter().map(|p| vec![p.side_length_m.to_string(), num(p.r2), p.n_cells.to_string()]);
    csv_bytes(&["side_length_m".into(), "r2".into(), "n_cells".into()], rows)
}

pub fn scatter_csv(rows: &[ScatterRow]) -> Vec<u8> {
    let rows = rows.iter().map(|r| vec![r.cell_x.to_string(), r.cell_y.to_string(), r.log_ref.to_string(), r.log_pred.to_string()]);
    csv_bytes(&["cell_x", "cell_y", "log_ref", "log_pred"].map(String::from), rows)
}

pub fn history_csv(h: &History) -> Vec<u8> {
    let header = ["epoch", "lr", "train_total", "train_fp", "train_h", "val_total", "val_fp", "val_h", "val_dice"].map(String::from);
    let rows = h.iter().map(|e| {
        vec![
            e.epoch.to_string(),
            e.lr.to_string(),
            e.train.total.to_string(),
            e.train.footprint.to_string(),
            e.train.height.to_string(),
            num(e.val.map(|v| v.total)),
            num(e.val.map(|v| v.footprint)),
            num(e.val.map(|v| v.height)),
            num(e.val_dice),
        ]
    });
    csv_bytes(&header, rows)
}

pub fn gradcheck_csv(groups: &[GroupError]) -> Vec<u8> {
    let header = ["group", "sampled", "max_rel_error", "plain_sampled", "plain_max_rel_error"].map(String::from);
    let rows = groups.iter().map(|g| {
        vec![
            g.name.clone(),
            g.sampled.to_string(),
            g.max_rel_error.to_string(),
            g.plain_sampled.to_string(),
            if g.plain_sampled == 0 { NULL.into() } else { g.plain_max_rel_error.to_string() },
        ]
    });
    csv_bytes(&header, rows)
}

pub fn ntl_json(fit: &ScaleFit) -> Value {
    json!({ "pearson_r": fit.pearson_r, "scale_b": fit.scale_b, "n_cells": fit.n_cells })
}

pub fn write_ntl_json(fit: &ScaleFit, path: &Path) -> Result<()> {
    write_json(path, &ntl_json(fit))
}

pub(crate) fn write_json_file(path: &Path, v: &Value) -> Result<()> {
    write_json(path, v)
}

/// Parses a flat one-row metrics CSV back into `(column, value)` pairs.
pub fn read_metrics_csv(bytes: &[u8], path: &Path) -> Result<Vec<(String, Option<f64>)>> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers().map_err(|e| Error::format(path, e.to_string()))?.clone();
    let row = r
        .records()
        .next()
        .ok_or_else(|| Error::format(path, "metrics CSV has no data row"))?
        .map_err(|e| Error::format(path, e.to_string()))?;
    header
        .iter()
        .zip(row.iter())
        .map(|(k, v)| {
            let v = if v == NULL { None } else { Some(v.parse::<f64>().map_err(|e| Error::format(path, format!("{k}: {e}")))?) };
            Ok((k.to_string(), v))
        })
        .collect()
}
