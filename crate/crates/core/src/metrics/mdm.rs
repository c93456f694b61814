//! F1 at a threshold and the maximal detection margin.
//!
//! The detection margin asks how wide a band of thresholds keeps a binarized
//! prediction good: with `K` grid cells, the thresholds `k / K` for
//! `k = 1..K-1` are scored by F1 against the anomaly pixels, and the margin is
//! the longest run of consecutive thresholds whose F1 is strictly above the
//! quality floor, divided by `K`. A perfect binary predictor therefore scores
//! `(K - 1) / K`.

use super::check_shapes;
use crate::error::{Error, Result};
use crate::model::{AnomalyMap, Label, LabelMap};

/// Quality floors reported by default.
pub const MDM_MARGIN_PRESETS: [f64; 2] = [0.6, 0.7];

fn f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if tp == 0 || denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// F1 of `pred > t` against the anomaly pixels, ignored pixels excluded.
///
/// Defined as 0 when nothing is both predicted and true.
pub fn f1_at_threshold(pred: &AnomalyMap, truth: &LabelMap, t: f64) -> Result<f64> {
    check_shapes(pred, truth)?;
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (&s, &l) in pred.values().iter().zip(truth.values()) {
        if l == Label::IGNORE {
            continue;
        }
        match (s as f64 > t, l == Label::ANOMALY) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(f1(tp, fp, fn_))
}

/// Maximal detection margin of one prediction on a `grid`-cell threshold grid.
pub fn mdm(pred: &AnomalyMap, truth: &LabelMap, margin: f64, grid: usize) -> Result<f64> {
    let mut stats = MdmStats::new(grid)?;
    stats.add_map(pred, truth)?;
    Ok(stats.mdm(margin))
}

/// Sufficient statistics for F1 on the threshold grid `k / K`.
///
/// For every pixel we record how many grid thresholds it exceeds; cumulative
/// sums then give TP and FP at every threshold. Merges by addition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MdmStats {
    grid: usize,
    positives: Vec<u64>,
    negatives: Vec<u64>,
}

impl MdmStats {
    pub fn new(grid: usize) -> Result<Self> {
        if grid < 2 {
            return Err(Error::InvalidHyperParams(format!(
                "mdm grid {grid} must be at least 2"
            )));
        }
        Ok(Self {
            grid,
            positives: vec![0; grid],
            negatives: vec![0; grid],
        })
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    fn threshold(&self, k: usize) -> f64 {
        k as f64 / self.grid as f64
    }

    /// Number of grid thresholds `k / K`, `1 <= k <= K-1`, strictly below `score`.
    fn exceeded(&self, score: f32) -> usize {
        let s = score as f64;
        let last = self.grid - 1;
        let mut c = ((s * self.grid as f64).floor().max(0.0) as usize).min(last);
        // the product can round across a grid point; settle against the exact thresholds
        while c >= 1 && s <= self.threshold(c) {
            c -= 1;
        }
        while c < last && s > self.threshold(c + 1) {
            c += 1;
        }
        c
    }

    pub fn add(&mut self, score: f32, positive: bool) {
        let c = self.exceeded(score);
        if positive {
            self.positives[c] += 1;
        } else {
            self.negatives[c] += 1;
        }
    }

    pub fn add_map(&mut self, pred: &AnomalyMap, truth: &LabelMap) -> Result<()> {
        check_shapes(pred, truth)?;
        for (&s, &l) in pred.values().iter().zip(truth.values()) {
            if l != Label::IGNORE {
                self.add(s, l == Label::ANOMALY);
            }
        }
        Ok(())
    }

    pub fn merge_in(&mut self, other: &Self) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch {
                left: self.grid,
                right: other.grid,
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

    /// F1 at thresholds `k / K` for `k = 1..K-1`; entry `i` is threshold `i + 1`.
    pub fn f1_curve(&self) -> Vec<f64> {
        let total_pos: u64 = self.positives.iter().sum();
        let mut out = vec![0.0; self.grid - 1];
        let (mut tp, mut fp) = (0u64, 0u64);
        for k in (1..self.grid).rev() {
            tp += self.positives[k];
            fp += self.negatives[k];
            out[k - 1] = f1(tp, fp, total_pos - tp);
        }
        out
    }

    pub fn mdm(&self, margin: f64) -> f64 {
        let mut best = 0usize;
        let mut run = 0usize;
        for d in self.f1_curve() {
            if d > margin {
                run += 1;
                best = best.max(run);
            } else {
                run = 0;
            }
        }
        best as f64 / self.grid as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(v: Vec<f32>) -> AnomalyMap {
        AnomalyMap::new(1, v.len(), v).unwrap()
    }

    fn labels(v: Vec<u8>) -> LabelMap {
        LabelMap::new(1, v.len(), v).unwrap()
    }

    #[test]
    fn f1_cases() {
        let truth = labels(vec![1, 0, 1, 0, 255]);
        let pred = map(vec![1.0, 0.0, 1.0, 0.0, 1.0]);
        for t in [0.01, 0.5, 0.99] {
            assert_eq!(f1_at_threshold(&pred, &truth, t).unwrap(), 1.0);
        }
        assert_eq!(
            f1_at_threshold(&map(vec![0.0; 5]), &truth, 0.5).unwrap(),
            0.0
        );
        // TP = 2, FP = 1, FN = 1
        let truth = labels(vec![1, 1, 1, 0, 0]);
        let pred = map(vec![0.9, 0.9, 0.1, 0.9, 0.1]);
        let f = f1_at_threshold(&pred, &truth, 0.5).unwrap();
        assert!((f - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn f1_uses_strict_threshold() {
        let truth = labels(vec![1]);
        assert_eq!(f1_at_threshold(&map(vec![0.5]), &truth, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn mdm_cases() {
        let truth = labels(vec![1, 0, 0, 1, 0]);
        let perfect = map(vec![1.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(mdm(&perfect, &truth, 0.9, 256).unwrap(), 255.0 / 256.0);
        assert_eq!(mdm(&map(vec![0.0; 5]), &truth, 0.6, 256).unwrap(), 0.0);
        assert_eq!(mdm(&perfect, &truth, 1.0, 256).unwrap(), 0.0);
    }

    #[test]
    fn mdm_measures_separating_band() {
        // anomalies at 0.75, inliers at 0.25: thresholds in [0.25, 0.75) separate perfectly
        let truth = labels(vec![1, 1, 0, 0]);
        let pred = map(vec![0.75, 0.75, 0.25, 0.25]);
        // k/8 for k = 2..=5 (0.25 <= t < 0.75)
        assert_eq!(mdm(&pred, &truth, 0.99, 8).unwrap(), 4.0 / 8.0);
    }

    #[test]
    fn exceeded_counts_are_exact_at_grid_points() {
        let s = MdmStats::new(8).unwrap();
        assert_eq!(s.exceeded(0.0), 0);
        assert_eq!(s.exceeded(0.25), 1);
        assert_eq!(s.exceeded(0.2500001), 2);
        assert_eq!(s.exceeded(1.0), 7);
    }

    proptest! {
        #[test]
        fn exceeded_matches_enumeration(score in 0.0f32..=1.0, grid in 2usize..300) {
            let s = MdmStats::new(grid).unwrap();
            let direct = (1..grid).filter(|&k| score as f64 > k as f64 / grid as f64).count();
            prop_assert_eq!(s.exceeded(score), direct);
        }

        #[test]
        fn f1_curve_matches_direct_f1(
            v in proptest::collection::vec((0.0f32..=1.0, prop_oneof![Just(0u8), Just(1), Just(255)]), 1..40),
            grid in 2usize..20,
        ) {
            let pred = map(v.iter().map(|p| p.0).collect());
            let truth = labels(v.iter().map(|p| p.1).collect());
            let mut stats = MdmStats::new(grid).unwrap();
            stats.add_map(&pred, &truth).unwrap();
            for (i, f) in stats.f1_curve().into_iter().enumerate() {
                let t = (i + 1) as f64 / grid as f64;
                prop_assert_eq!(f, f1_at_threshold(&pred, &truth, t).unwrap());
            }
        }
    }
}
