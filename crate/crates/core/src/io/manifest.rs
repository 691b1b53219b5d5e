//! JSON manifests that regenerate a scenario bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::ScenarioSpec;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub scenario: ScenarioSpec,
}

impl Manifest {
    pub fn new(scenario: ScenarioSpec) -> Self {
        Manifest { format_version: MANIFEST_VERSION, scenario }
    }
}

/// Parses JSON into `T`, reporting the dotted path of the offending field.
pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Config { path, message: e.into_inner().to_string() }
    })
}

pub fn write_manifest(manifest: &Manifest) -> Result<String> {
    serde_json::to_string_pretty(manifest).map_err(|e| Error::invalid(e.to_string()))
}

pub fn read_manifest(text: &str) -> Result<Manifest> {
    let m: Manifest = parse_json(text)?;
    if m.format_version != MANIFEST_VERSION {
        return Err(Error::config("format_version", format!("unsupported version {}", m.format_version)));
    }
    m.scenario.validate()?;
    Ok(m)
}

pub fn read_manifest_file(path: &Path) -> Result<Manifest> {
    read_manifest(&std::fs::read_to_string(path)?)
}
