//! Scene list files: one FSR1 path per line, optionally followed by a cloud
//! probability raster path. Blank lines and `#` comments are ignored.
//! Relative paths resolve against the list's directory.

use std::fs;
use std::path::{Path, PathBuf};

use floorspace_core::ingest::TimeStack;

use crate::error::{Error, Result};
use crate::fsr::read_fsr;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneEntry {
    pub raster: PathBuf,
    pub cloud: Option<PathBuf>,
}

pub fn parse_scene_list(text: &str, path: &Path) -> Result<Vec<SceneEntry>> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() > 2 {
            return Err(Error::format(path, format!("line {}: expected 'raster [cloud]', got {} fields", n + 1, fields.len())));
        }
        out.push(SceneEntry { raster: base.join(fields[0]), cloud: fields.get(1).map(|c| base.join(c)) });
    }
    if out.is_empty() {
        return Err(Error::format(path, "scene list is empty"));
    }
    Ok(out)
}

pub fn read_scene_list(path: impl AsRef<Path>) -> Result<Vec<SceneEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scene_list(&text, path)
}

/// Loads every listed raster. Cloud rasters must be given for all scenes or
/// for none.
pub fn load_time_stack(entries: &[SceneEntry], list_path: &Path) -> Result<TimeStack> {
    let with_cloud = entries.iter().filter(|e| e.cloud.is_some()).count();
    if with_cloud != 0 && with_cloud != entries.len() {
        return Err(Error::format(
            list_path,
            format!("{with_cloud} of {} scenes name a cloud raster; give one for every scene or none", entries.len()),
        ));
    }
    let observations = entries.iter().map(|e| read_fsr(&e.raster)).collect::<Result<Vec<_>>>()?;
    let cloud = if with_cloud == 0 {
        None
    } else {
        Some(entries.iter().map(|e| read_fsr(e.cloud.as_ref().unwrap())).collect::<Result<Vec<_>>>()?)
    };
    Ok(TimeStack::new(observations, cloud)?)
}
