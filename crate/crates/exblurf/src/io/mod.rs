//! On-disk formats: dataset manifests, checkpoints, float images, command
//! configs, and evaluation reports.

pub mod checkpoint;
pub mod config;
pub mod lock;
pub mod manifest;
pub mod pfm;
pub mod png;
pub mod report;

use std::path::Path;

use crate::error::{Error, Result};

/// Deterministic pretty JSON with a trailing newline.
pub fn to_json_pretty<T: serde::Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Format(format!("json encode: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_json_pretty(value)?)?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| {
        Error::Config(format!("{}: {e}", path.display()))
    })
}
