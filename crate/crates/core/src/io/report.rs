//! Metric reports (TOML) and curve tables (CSV).

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_text, write_atomic};
use crate::error::{Error, Result};
use crate::metrics::{CurvePoint, MetricSummary};
use crate::mining::{QueryIoUReport, SpecializationReport, SweepRow};

pub const REPORT_SCHEMA: &str = "maskomaly.report/1";
pub const MINING_SCHEMA: &str = "maskomaly.mining/1";

/// One evaluated configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRow {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ablation_id: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub n_queries: Option<usize>,
    pub summary: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Report {
    pub schema: String,
    pub command: String,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn new(command: &str, rows: Vec<ReportRow>) -> Self {
        Self {
            schema: REPORT_SCHEMA.to_string(),
            command: command.to_string(),
            rows,
        }
    }
}

/// Per-query mining results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MiningRow {
    pub index: usize,
    pub anomaly_iou: f64,
    pub images: usize,
    pub top_class: usize,
    pub top_class_fraction: f64,
    pub specialized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MiningReport {
    pub schema: String,
    pub images: usize,
    pub histogram_edges: Vec<f64>,
    /// Counts of the best queries' IoUs per histogram bin.
    pub histogram: Vec<usize>,
    pub queries: Vec<MiningRow>,
}

impl MiningReport {
    pub fn new(
        images: usize,
        iou: &QueryIoUReport,
        specialization: &SpecializationReport,
        histogram_edges: Vec<f64>,
        histogram: Vec<usize>,
    ) -> Self {
        let queries = iou
            .ious
            .iter()
            .zip(&iou.image_counts)
            .zip(&specialization.queries)
            .enumerate()
            .map(|(index, ((&anomaly_iou, &images), s))| MiningRow {
                index,
                anomaly_iou,
                images,
                top_class: s.class,
                top_class_fraction: s.fraction,
                specialized: s.specialized,
            })
            .collect();
        Self {
            schema: MINING_SCHEMA.to_string(),
            images,
            histogram_edges,
            histogram,
            queries,
        }
    }
}

pub fn write_report(report: &Report, path: impl AsRef<Path>) -> Result<()> {
    let text = toml::to_string(report).expect("reports serialize");
    write_atomic(path.as_ref(), text.as_bytes())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<Report> {
    let path = path.as_ref();
    toml::from_str(&read_text(path)?).map_err(|e| Error::Config {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_curve_csv(points: &[CurvePoint], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("threshold,tpr,fpr,precision\n");
    for p in points {
        writeln!(out, "{},{},{},{}", p.threshold, p.tpr, p.fpr, p.precision).unwrap();
    }
    write_atomic(path.as_ref(), out.as_bytes())
}

pub fn write_sweep_csv(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("n,ap,fpr_at_tpr,auroc\n");
    for r in rows {
        let s = &r.summary;
        writeln!(out, "{},{},{},{}", r.n, s.ap, s.fpr_at_tpr, s.auroc).unwrap();
    }
    write_atomic(path.as_ref(), out.as_bytes())
}
