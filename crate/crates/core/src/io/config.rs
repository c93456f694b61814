//! Run configuration files.
//!
//! ```toml
//! schema = "maskomaly.run/1"
//!
//! [hyper]
//! lambda = 0.6
//!
//! [toggles]
//! borders = false
//!
//! [eval]
//! mode = { binned = 4096 }
//!
//! [paths]
//! bundles = "val/bundles"
//! truth = "val/labels"
//! query_set = "queries.toml"
//! ```
//!
//! Omitted tables and keys take their defaults. Relative paths are resolved
//! against the directory holding the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::read_text;
use crate::error::{Error, Result};
use crate::heatmap::Toggles;
use crate::metrics::EvalOptions;
use crate::model::HyperParams;

pub const RUN_CONFIG_SCHEMA: &str = "maskomaly.run/1";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory of `.mkio` bundles.
    pub bundles: Option<PathBuf>,
    /// Directory of `.pgm` ground-truth label maps, matched to bundles by file stem.
    pub truth: Option<PathBuf>,
    /// Directory of `.pgm` road-region maps for ground-query initialization.
    pub road: Option<PathBuf>,
    /// Directory of precomputed `.mkio` heatmaps.
    pub heatmaps: Option<PathBuf>,
    pub query_set: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl Paths {
    fn inputs(&self) -> impl Iterator<Item = (&'static str, &PathBuf)> {
        [
            ("bundles", &self.bundles),
            ("truth", &self.truth),
            ("road", &self.road),
            ("heatmaps", &self.heatmaps),
            ("query_set", &self.query_set),
        ]
        .into_iter()
        .filter_map(|(k, p)| p.as_ref().map(|p| (k, p)))
    }

    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.bundles,
            &mut self.truth,
            &mut self.road,
            &mut self.heatmaps,
            &mut self.query_set,
            &mut self.output,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema: String,
    pub hyper: HyperParams,
    pub toggles: Toggles,
    pub eval: EvalOptions,
    pub paths: Paths,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema: RUN_CONFIG_SCHEMA.to_string(),
            hyper: HyperParams::default(),
            toggles: Toggles::default(),
            eval: EvalOptions::default(),
            paths: Paths::default(),
            seed: None,
            threads: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let config_err = |message: String| Error::Config {
            path: origin.to_path_buf(),
            message,
        };
        let mut cfg: Self = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        if cfg.schema != RUN_CONFIG_SCHEMA {
            return Err(config_err(format!(
                "schema \"{}\" is not \"{RUN_CONFIG_SCHEMA}\"",
                cfg.schema
            )));
        }
        let base = origin.parent().unwrap_or(Path::new(""));
        cfg.paths.resolve(base);
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_toml(&read_text(path)?, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs serialize")
    }

    /// Checks hyperparameters, toggles, and that every input path exists.
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        if !self.toggles.accept && !self.toggles.reject {
            return Err(Error::InvalidToggles);
        }
        for (key, p) in self.paths.inputs() {
            if !p.exists() {
                return Err(Error::Config {
                    path: p.clone(),
                    message: format!("paths.{key} does not exist"),
                });
            }
        }
        Ok(())
    }
}
