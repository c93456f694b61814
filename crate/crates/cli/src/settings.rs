use std::path::{Path, PathBuf};

use maskomaly::io::{QuerySetFile, RunConfig};
use maskomaly::metrics::{MetricMode, DEFAULT_BINS};
use maskomaly::{QueryIndexSet, Scorer};

use crate::{Common, ModeArg, Usage};

/// The run configuration after applying command-line overrides.
pub struct Settings {
    pub config: RunConfig,
}

impl Settings {
    pub fn load(flags: &Common) -> anyhow::Result<Self> {
        let mut cfg = match &flags.config {
            Some(p) => RunConfig::read(p)?,
            None => RunConfig::default(),
        };
        let h = &mut cfg.hyper;
        let overrides = [
            (&mut h.lambda, flags.lambda),
            (&mut h.t_mask, flags.t_mask),
            (&mut h.t_border, flags.t_border),
            (&mut h.eps_border, flags.eps_border),
            (&mut h.t_iou, flags.t_iou),
            (&mut h.t_query, flags.t_query),
            (&mut h.eps_query, flags.eps_query),
            (&mut h.t_ground, flags.t_ground),
        ];
        for (slot, v) in overrides {
            if let Some(v) = v {
                *slot = v;
            }
        }
        if let Some(k) = flags.mdm_grid {
            cfg.hyper.mdm_grid = k;
            cfg.eval.mdm_grid = k;
        }
        if let Some(&first) = flags.mdm_margin.first() {
            cfg.hyper.mdm_margin = first;
            cfg.eval.mdm_margins = flags.mdm_margin.clone();
        }
        let t = &mut cfg.toggles;
        t.accept &= !flags.no_accept;
        t.reject &= !flags.no_reject;
        t.borders &= !flags.no_borders;
        t.init &= !flags.no_init;
        if let Some(b) = flags.bins {
            cfg.eval.curve_bins = b;
            if let MetricMode::Binned(_) = cfg.eval.mode {
                cfg.eval.mode = MetricMode::Binned(b);
            }
        }
        match flags.metric_mode {
            Some(ModeArg::Exact) => cfg.eval.mode = MetricMode::Exact,
            Some(ModeArg::Binned) => {
                cfg.eval.mode = MetricMode::Binned(flags.bins.unwrap_or(DEFAULT_BINS))
            }
            None => {}
        }
        cfg.eval.per_image |= flags.per_image;
        if flags.seed.is_some() {
            cfg.seed = flags.seed;
        }
        if flags.threads.is_some() {
            cfg.threads = flags.threads;
        }
        cfg.validate()?;
        Ok(Self { config: cfg })
    }

    /// A path from the command line, falling back to the configuration file.
    pub fn path(
        &self,
        cli: Option<PathBuf>,
        from_config: impl Fn(&RunConfig) -> Option<&PathBuf>,
        flag: &str,
    ) -> anyhow::Result<PathBuf> {
        cli.or_else(|| from_config(&self.config).cloned())
            .ok_or_else(|| Usage(format!("--{flag} is required")).into())
    }

    pub fn queries(&self, cli: Option<PathBuf>) -> Option<PathBuf> {
        cli.or_else(|| self.config.paths.query_set.clone())
    }

    /// Scorer with hyperparameters, toggles, and query sets from `query_set`.
    pub fn scorer(&self, query_set: Option<&Path>) -> anyhow::Result<Scorer> {
        let (anomalous, preset_inliers) = match query_set {
            Some(p) => {
                let f = QuerySetFile::read(p)?;
                (f.anomalous_set()?, f.preset_set()?)
            }
            None => (QueryIndexSet::empty(), QueryIndexSet::empty()),
        };
        Ok(Scorer {
            hyper: self.config.hyper,
            toggles: self.config.toggles,
            anomalous,
            preset_inliers,
        })
    }
}
