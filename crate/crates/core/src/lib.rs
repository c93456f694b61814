//! Anomaly segmentation on top of mask-based segmentation networks.
//!
//! A mask-based segmenter emits `N` queries per image, each with a soft
//! membership map over the pixels and a probability row over `C` inlier
//! classes plus a void class. This crate turns those outputs into a per-pixel
//! anomaly score without retraining:
//!
//! * [`heatmap`] computes the rejection, border, and acceptance maps and
//!   blends them ([`heatmap::maskomaly`]).
//! * [`mining`] finds, on validation data, the queries that fire on
//!   anomalies and the queries that should always count as inlier evidence.
//! * [`metrics`] scores heatmaps with AP, FPR at 95 % TPR, AuROC, and the
//!   maximal detection margin.
//! * [`io`] reads and writes the bundle, heatmap, label-map, and TOML formats.
//!
//! ```
//! use maskomaly::{Bundle, HyperParams, QueryIndexSet, Toggles};
//!
//! // one query on a 1x2 image, confident in inlier class 0
//! let bundle = Bundle::from_raw(1, 1, 2, 1, vec![0.9, 0.1], vec![0.8, 0.2]).unwrap();
//! let map = maskomaly::heatmap::maskomaly(
//!     &bundle,
//!     &QueryIndexSet::empty(),
//!     &QueryIndexSet::empty(),
//!     &HyperParams::default(),
//!     Toggles { accept: false, ..Toggles::FULL },
//! )
//! .unwrap();
//! assert!(map.values()[0] < map.values()[1]);
//! ```

pub mod error;
pub mod heatmap;
pub mod io;
pub mod metrics;
pub mod mining;
pub mod model;
pub mod pipeline;
pub mod synth;

pub use error::{Error, ErrorClass, Result};
pub use heatmap::{Scorer, Toggles};
pub use model::{
    AnomalyMap, Bundle, ClassProbSet, HyperParams, Label, LabelMap, QueryIndexSet, SoftMaskSet,
};
