//! `manifest.json` written into every command's output directory.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde_json::{json, Value};

use crate::config::PipelineConfig;
use crate::error::Result;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Provenance block. Only `created_unix` differs between identical runs.
pub fn version_stamp(command: &str, cfg: &PipelineConfig, inputs: &[&Path], outputs: &[&str]) -> Value {
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    json!({
        "tool": "floorspace",
        "artifact_version": ARTIFACT_VERSION,
        "command": command,
        "config_sha256": cfg.hash(),
        "seed": cfg.seed(),
        "config": cfg.canonical().lines().collect::<Vec<_>>(),
        "inputs": inputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "outputs": outputs,
        "created_unix": created,
    })
}

pub fn write_manifest(dir: &Path, stamp: &Value) -> Result<()> {
    crate::report::write_json_file(&dir.join(MANIFEST_FILE), stamp)
}
