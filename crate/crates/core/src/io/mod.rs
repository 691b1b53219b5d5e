//! File formats: SPFV feature files, scenario manifests, model checkpoints
//! and run logs. Binary data is little-endian throughout.

pub mod checkpoint;
pub mod manifest;
pub mod runlog;
pub mod spfv;

pub use manifest::{read_manifest, write_manifest, Manifest};
pub use spfv::{read_spfv, scenario_from_spfv, write_spfv};

use std::fs;
use std::path::Path;

use crate::error::Result;

/// Writes `bytes` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
