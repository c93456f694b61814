//! The query-set file written by mining and read by scoring.
//!
//! ```toml
//! schema = "maskomaly.queries/1"
//! preset_inliers = [4, 17]
//!
//! [[anomalous]]
//! index = 12
//! iou = 0.61
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_text, write_atomic};
use crate::error::{Error, Result};
use crate::mining::QueryIoUReport;
use crate::model::QueryIndexSet;

pub const QUERY_SET_SCHEMA: &str = "maskomaly.queries/1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalousEntry {
    pub index: usize,
    pub iou: f64,
}

/// Mined anomalous queries (best first) and preset inlier queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuerySetFile {
    pub schema: String,
    #[serde(default)]
    pub preset_inliers: Vec<usize>,
    #[serde(default)]
    pub anomalous: Vec<AnomalousEntry>,
}

impl QuerySetFile {
    pub fn new(anomalous: &QueryIndexSet, report: &QueryIoUReport, preset: &QueryIndexSet) -> Self {
        Self {
            schema: QUERY_SET_SCHEMA.to_string(),
            preset_inliers: preset.as_slice().to_vec(),
            anomalous: anomalous
                .iter()
                .map(|index| AnomalousEntry {
                    index,
                    iou: report.ious[index],
                })
                .collect(),
        }
    }

    /// Anomalous queries in file order.
    pub fn anomalous_set(&self) -> Result<QueryIndexSet> {
        QueryIndexSet::new(self.anomalous.iter().map(|e| e.index).collect())
    }

    pub fn preset_set(&self) -> Result<QueryIndexSet> {
        QueryIndexSet::new(self.preset_inliers.clone())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("query sets serialize")
    }

    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let file: Self = toml::from_str(text).map_err(|e| Error::Config {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        if file.schema != QUERY_SET_SCHEMA {
            return Err(Error::Config {
                path: origin.to_path_buf(),
                message: format!("schema \"{}\" is not \"{QUERY_SET_SCHEMA}\"", file.schema),
            });
        }
        file.anomalous_set()?;
        file.preset_set()?;
        Ok(file)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml(&read_text(path)?, path)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_toml().as_bytes())
    }
}
