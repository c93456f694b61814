//! File formats: MKIO bundles and heatmaps, binary graymap label maps, and
//! the TOML documents (query sets, run configs, reports) that tie runs
//! together.

mod bundle;
mod config;
mod pgm;
mod report;
mod sidecar;

pub use bundle::{
    decode_bundle, decode_heatmap, encode_bundle, encode_heatmap, read_bundle, read_heatmap,
    write_bundle, write_heatmap, BUNDLE_MAGIC, BUNDLE_VERSION, HEADER_LEN,
};
pub use config::{Paths, RunConfig, RUN_CONFIG_SCHEMA};
pub use pgm::{decode_labelmap, encode_labelmap, read_labelmap, write_labelmap};
pub use report::{
    read_report, write_curve_csv, write_report, write_sweep_csv, MiningReport, MiningRow, Report,
    ReportRow, MINING_SCHEMA, REPORT_SCHEMA,
};
pub use sidecar::{AnomalousEntry, QuerySetFile, QUERY_SET_SCHEMA};

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Writes `bytes` to a temporary file beside `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file()
        .sync_all()
        .map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Serializes `value` as TOML and writes it atomically.
pub fn write_toml<T: serde::Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| Error::Config {
        path: path.as_ref().to_path_buf(),
        message: e.to_string(),
    })?;
    write_atomic(path.as_ref(), text.as_bytes())
}

pub fn read_toml<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    toml::from_str(&read_text(path)?).map_err(|e| Error::Config {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
