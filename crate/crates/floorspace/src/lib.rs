//! File formats, configuration, provenance and the command line for the
//! floorspace pipeline. Algorithms live in `floorspace-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod fsr;
pub mod geojson;
pub mod ppm;
pub mod provenance;
pub mod report;
pub mod scenes;
pub mod tileset;

use std::fs;
use std::path::Path;

pub use error::{Error, Result};

/// Writes `bytes` to `path`, creating parent directories.
pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
