//! Pixel-level evaluation.
//!
//! Average precision, AuROC and FPR at a fixed TPR are all computed from one
//! shape of data: `(positives, negatives)` counts per score group, visited in
//! descending score order. Exact mode groups pixels sharing an identical
//! score; binned mode groups them by a fixed histogram over `[0, 1]`
//! ([`ThresholdStats`]), which can be merged across images.
//!
//! Conventions:
//! - AP averages, over positives, the precision at the end of the positive's
//!   tie group.
//! - AuROC counts tied positive/negative pairs as one half.
//! - FPR95 is read at the first operating point (highest threshold) whose TPR
//!   reaches the target, without interpolation.

mod dataset;
mod mdm;
mod stats;

pub use dataset::{evaluate, DatasetEvaluator, EvalOptions, MarginValue, MetricSummary};
pub use mdm::{f1_at_threshold, mdm, MdmStats, MDM_MARGIN_PRESETS};
pub use stats::{CurvePoint, ThresholdStats};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AnomalyMap, Label, LabelMap};

/// Default TPR for the FPR operating point.
pub const TPR_TARGET: f64 = 0.95;

/// Default histogram resolution for binned metrics.
pub const DEFAULT_BINS: usize = 4096;

/// Scores paired with binary labels, ignored pixels already removed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoredPixels {
    scores: Vec<f32>,
    labels: Vec<bool>,
}

impl ScoredPixels {
    /// `labels` must be 0 or 1; scores must be finite.
    pub fn new(scores: Vec<f32>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::RangeViolation {
                what: "scores",
                index,
                value: scores[index],
            });
        }
        if let Some(index) = labels.iter().position(|&l| l > 1) {
            return Err(Error::LabelViolation {
                index,
                value: labels[index],
            });
        }
        Ok(Self {
            scores,
            labels: labels.into_iter().map(|l| l == 1).collect(),
        })
    }

    /// Pairs a prediction with its ground truth, dropping ignored pixels.
    pub fn from_map(pred: &AnomalyMap, truth: &LabelMap) -> Result<Self> {
        check_shapes(pred, truth)?;
        let mut out = Self::default();
        out.push_map(pred, truth);
        Ok(out)
    }

    fn push_map(&mut self, pred: &AnomalyMap, truth: &LabelMap) {
        for (&s, &l) in pred.values().iter().zip(truth.values()) {
            if l != Label::IGNORE {
                self.scores.push(s);
                self.labels.push(l == Label::ANOMALY);
            }
        }
    }

    pub fn extend(&mut self, other: &ScoredPixels) {
        self.scores.extend_from_slice(&other.scores);
        self.labels.extend_from_slice(&other.labels);
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f32] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn positives(&self) -> u64 {
        self.labels.iter().filter(|&&l| l).count() as u64
    }

    /// `(positives, negatives)` per distinct score, highest score first.
    fn tie_groups(&self) -> Vec<(u64, u64)> {
        let mut pairs: Vec<(f32, bool)> = self
            .scores
            .iter()
            .copied()
            .zip(self.labels.iter().copied())
            .collect();
        pairs.sort_unstable_by(|a, b| b.0.total_cmp(&a.0));
        let mut groups = Vec::new();
        let mut i = 0;
        while i < pairs.len() {
            let score = pairs[i].0;
            let (mut pos, mut neg) = (0u64, 0u64);
            // `==` so that the adjacent 0.0 and -0.0 land in one group
            while i < pairs.len() && pairs[i].0 == score {
                if pairs[i].1 {
                    pos += 1;
                } else {
                    neg += 1;
                }
                i += 1;
            }
            groups.push((pos, neg));
        }
        groups
    }
}

pub(crate) fn check_shapes(pred: &AnomalyMap, truth: &LabelMap) -> Result<()> {
    if pred.height() != truth.height() || pred.width() != truth.width() {
        return Err(Error::DimensionMismatch(format!(
            "prediction is {}x{} but ground truth is {}x{}",
            pred.height(),
            pred.width(),
            truth.height(),
            truth.width()
        )));
    }
    Ok(())
}

/// Exact rank statistics or a histogram with the given number of bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricMode {
    Exact,
    Binned(usize),
}

impl MetricMode {
    fn groups(self, data: &ScoredPixels) -> Vec<(u64, u64)> {
        match self {
            MetricMode::Exact => data.tie_groups(),
            MetricMode::Binned(bins) => ThresholdStats::from_scored(data, bins).groups().collect(),
        }
    }
}

pub fn average_precision(data: &ScoredPixels, mode: MetricMode) -> Result<f64> {
    ap_from_groups(mode.groups(data))
}

pub fn auroc(data: &ScoredPixels, mode: MetricMode) -> Result<f64> {
    auroc_from_groups(mode.groups(data))
}

pub fn fpr_at_tpr(data: &ScoredPixels, tpr_target: f64, mode: MetricMode) -> Result<f64> {
    fpr_from_groups(mode.groups(data), tpr_target)
}

fn totals(groups: &[(u64, u64)]) -> (u64, u64) {
    groups
        .iter()
        .fold((0, 0), |(p, n), &(gp, gn)| (p + gp, n + gn))
}

pub(crate) fn ap_from_groups(groups: impl IntoIterator<Item = (u64, u64)>) -> Result<f64> {
    let groups: Vec<_> = groups.into_iter().collect();
    let (total_pos, _) = totals(&groups);
    if total_pos == 0 {
        return Err(Error::NoPositives);
    }
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut sum = 0f64;
    for (pos, neg) in groups {
        tp += pos;
        fp += neg;
        if pos > 0 {
            sum += pos as f64 * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(sum / total_pos as f64)
}

pub(crate) fn auroc_from_groups(groups: impl IntoIterator<Item = (u64, u64)>) -> Result<f64> {
    let groups: Vec<_> = groups.into_iter().collect();
    let (total_pos, total_neg) = totals(&groups);
    if total_pos == 0 || total_neg == 0 {
        return Err(Error::DegenerateLabels);
    }
    // count of (positive, negative) pairs won, ties at half weight, doubled to stay integral
    let mut wins2 = 0u128;
    let mut pos_above = 0u128;
    for (pos, neg) in groups {
        wins2 += 2 * pos_above * neg as u128 + pos as u128 * neg as u128;
        pos_above += pos as u128;
    }
    Ok(wins2 as f64 / (2.0 * total_pos as f64 * total_neg as f64))
}

pub(crate) fn fpr_from_groups(
    groups: impl IntoIterator<Item = (u64, u64)>,
    tpr_target: f64,
) -> Result<f64> {
    let groups: Vec<_> = groups.into_iter().collect();
    let (total_pos, total_neg) = totals(&groups);
    if total_pos == 0 || total_neg == 0 {
        return Err(Error::DegenerateLabels);
    }
    let (mut tp, mut fp) = (0u64, 0u64);
    for (pos, neg) in groups {
        tp += pos;
        fp += neg;
        if tp as f64 / total_pos as f64 >= tpr_target {
            return Ok(fp as f64 / total_neg as f64);
        }
    }
    // the final operating point has TPR 1, so only a target above 1 gets here
    Ok(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sp(scores: &[f32], labels: &[u8]) -> ScoredPixels {
        ScoredPixels::new(scores.to_vec(), labels.to_vec()).unwrap()
    }

    const MODES: [MetricMode; 2] = [MetricMode::Exact, MetricMode::Binned(4096)];

    #[test]
    fn ap_cases() {
        for mode in MODES {
            assert_eq!(
                average_precision(&sp(&[1.0, 0.0, 1.0], &[1, 0, 1]), mode).unwrap(),
                1.0
            );
            let ap = average_precision(&sp(&[0.9, 0.8, 0.7, 0.6], &[1, 0, 1, 0]), mode).unwrap();
            assert!((ap - 5.0 / 6.0).abs() < 1e-12);
            assert_eq!(
                average_precision(&sp(&[0.3, 0.9, 0.1], &[1, 1, 1]), mode).unwrap(),
                1.0
            );
            assert!(matches!(
                average_precision(&sp(&[0.3], &[0]), mode),
                Err(Error::NoPositives)
            ));
        }
    }

    #[test]
    fn ap_groups_ties() {
        // one tie group of 2 positives and 2 negatives: precision 1/2 for both positives
        let ap = average_precision(&sp(&[0.5; 4], &[1, 0, 1, 0]), MetricMode::Exact).unwrap();
        assert_eq!(ap, 0.5);
    }

    #[test]
    fn auroc_cases() {
        for mode in MODES {
            assert_eq!(auroc(&sp(&[0.9, 0.1], &[1, 0]), mode).unwrap(), 1.0);
            assert_eq!(auroc(&sp(&[0.4; 5], &[1, 0, 1, 0, 0]), mode).unwrap(), 0.5);
            let a = auroc(&sp(&[0.9, 0.8, 0.7, 0.6], &[1, 0, 1, 0]), mode).unwrap();
            assert_eq!(a, 0.75);
            assert!(matches!(
                auroc(&sp(&[0.9, 0.1], &[1, 1]), mode),
                Err(Error::DegenerateLabels)
            ));
        }
    }

    #[test]
    fn fpr_cases() {
        for mode in MODES {
            assert_eq!(
                fpr_at_tpr(&sp(&[0.9, 0.8, 0.2], &[1, 1, 0]), 0.95, mode).unwrap(),
                0.0
            );
            assert_eq!(
                fpr_at_tpr(&sp(&[0.5; 4], &[1, 0, 1, 0]), 0.95, mode).unwrap(),
                1.0
            );
            let mut scores = vec![0.9f32; 100];
            let mut labels = vec![1u8; 100];
            scores.extend([0.1; 100]);
            labels.extend([0; 100]);
            scores.extend([0.05; 5]);
            labels.extend([1; 5]);
            assert_eq!(fpr_at_tpr(&sp(&scores, &labels), 0.95, mode).unwrap(), 0.0);
            assert!(matches!(
                fpr_at_tpr(&sp(&[0.1], &[0]), 0.95, mode),
                Err(Error::DegenerateLabels)
            ));
        }
    }

    #[test]
    fn fpr_reads_first_crossing() {
        // TPR after each group: 0.5, 1.0 ; FPR after each group: 0.0, 0.5
        let d = sp(&[0.9, 0.5, 0.5, 0.1], &[1, 1, 0, 0]);
        assert_eq!(fpr_at_tpr(&d, 0.5, MetricMode::Exact).unwrap(), 0.0);
        assert_eq!(fpr_at_tpr(&d, 0.95, MetricMode::Exact).unwrap(), 0.5);
    }

    #[test]
    fn scored_pixels_validation() {
        assert!(ScoredPixels::new(vec![0.1], vec![2]).is_err());
        assert!(ScoredPixels::new(vec![f32::NAN], vec![1]).is_err());
        assert!(ScoredPixels::new(vec![0.1, 0.2], vec![1]).is_err());
    }

    #[test]
    fn from_map_drops_ignored() {
        let pred = AnomalyMap::new(1, 3, vec![0.9, 0.1, 0.5]).unwrap();
        let truth = LabelMap::new(1, 3, vec![1, 0, 255]).unwrap();
        let d = ScoredPixels::from_map(&pred, &truth).unwrap();
        assert_eq!(d.scores(), &[0.9, 0.1]);
        assert_eq!(d.labels(), &[true, false]);
    }
}
