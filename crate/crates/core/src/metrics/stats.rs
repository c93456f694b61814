use serde::Serialize;

use super::{ap_from_groups, auroc_from_groups, check_shapes, fpr_from_groups, ScoredPixels};
use crate::error::{Error, Result};
use crate::model::{AnomalyMap, Label, LabelMap};

/// Per-bin positive and negative counts over a uniform grid on `[0, 1]`.
///
/// Bin `b` holds scores in `[b/B, (b+1)/B)`; the last bin also holds 1.0 and
/// out-of-range scores are clamped to the nearest bin. These are sufficient
/// statistics for binned AP, AuROC and FPR, and they merge by addition, so a
/// dataset can be evaluated one image at a time in any order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThresholdStats {
    positives: Vec<u64>,
    negatives: Vec<u64>,
}

/// One operating point, taken at the lower edge of a bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub precision: f64,
}

impl ThresholdStats {
    pub fn new(bins: usize) -> Self {
        assert!(bins > 0, "threshold statistics need at least one bin");
        Self {
            positives: vec![0; bins],
            negatives: vec![0; bins],
        }
    }

    pub fn from_scored(data: &ScoredPixels, bins: usize) -> Self {
        let mut stats = Self::new(bins);
        for (&s, &l) in data.scores().iter().zip(data.labels()) {
            stats.add(s, l);
        }
        stats
    }

    pub fn from_map(pred: &AnomalyMap, truth: &LabelMap, bins: usize) -> Result<Self> {
        let mut stats = Self::new(bins);
        stats.add_map(pred, truth)?;
        Ok(stats)
    }

    pub fn bins(&self) -> usize {
        self.positives.len()
    }

    fn bin_of(&self, score: f32) -> usize {
        let b = self.bins();
        ((score as f64 * b as f64).floor().max(0.0) as usize).min(b - 1)
    }

    pub fn add(&mut self, score: f32, positive: bool) {
        let bin = self.bin_of(score);
        if positive {
            self.positives[bin] += 1;
        } else {
            self.negatives[bin] += 1;
        }
    }

    /// Adds every non-ignored pixel of one image.
    pub fn add_map(&mut self, pred: &AnomalyMap, truth: &LabelMap) -> Result<()> {
        check_shapes(pred, truth)?;
        for (&s, &l) in pred.values().iter().zip(truth.values()) {
            if l != Label::IGNORE {
                self.add(s, l == Label::ANOMALY);
            }
        }
        Ok(())
    }

    pub fn merge(&self, other: &Self) -> Result<Self> {
        let mut out = self.clone();
        out.merge_in(other)?;
        Ok(out)
    }

    pub fn merge_in(&mut self, other: &Self) -> Result<()> {
        if self.bins() != other.bins() {
            return Err(Error::GridMismatch {
                left: self.bins(),
                right: other.bins(),
            });
        }
        for (a, b) in self.positives.iter_mut().zip(&other.positives) {
            *a += b;
        }
        for (a, b) in self.negatives.iter_mut().zip(&other.negatives) {
            *a += b;
        }
        Ok(())
    }

    pub fn total_positives(&self) -> u64 {
        self.positives.iter().sum()
    }

    pub fn total_negatives(&self) -> u64 {
        self.negatives.iter().sum()
    }

    pub fn positives(&self) -> &[u64] {
        &self.positives
    }

    pub fn negatives(&self) -> &[u64] {
        &self.negatives
    }

    /// `(positives, negatives)` per bin from the highest bin down.
    pub(crate) fn groups(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.positives
            .iter()
            .zip(&self.negatives)
            .rev()
            .map(|(&p, &n)| (p, n))
    }

    pub fn average_precision(&self) -> Result<f64> {
        ap_from_groups(self.groups())
    }

    pub fn auroc(&self) -> Result<f64> {
        auroc_from_groups(self.groups())
    }

    pub fn fpr_at_tpr(&self, tpr_target: f64) -> Result<f64> {
        fpr_from_groups(self.groups(), tpr_target)
    }

    /// Operating points for every non-empty bin, highest threshold first.
    ///
    /// A point at threshold `t` classifies scores in bins at or above `t` as
    /// positive.
    pub fn curve(&self) -> Vec<CurvePoint> {
        let total_pos = self.total_positives().max(1) as f64;
        let total_neg = self.total_negatives().max(1) as f64;
        let b = self.bins();
        let (mut tp, mut fp) = (0u64, 0u64);
        let mut out = Vec::new();
        for (rev, (p, n)) in self.groups().enumerate() {
            if p == 0 && n == 0 {
                continue;
            }
            tp += p;
            fp += n;
            out.push(CurvePoint {
                threshold: (b - 1 - rev) as f64 / b as f64,
                tpr: tp as f64 / total_pos,
                fpr: fp as f64 / total_neg,
                precision: tp as f64 / (tp + fp) as f64,
            });
        }
        out
    }
}
