use serde::{Deserialize, Serialize};

use super::{
    auroc, average_precision, fpr_at_tpr, CurvePoint, MdmStats, MetricMode, ScoredPixels,
    ThresholdStats, DEFAULT_BINS, MDM_MARGIN_PRESETS, TPR_TARGET,
};
use crate::error::{Error, Result};
use crate::model::{AnomalyMap, LabelMap};

/// How a dataset is evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub mode: MetricMode,
    /// Histogram resolution for the exported PR/ROC curves.
    pub curve_bins: usize,
    pub mdm_grid: usize,
    pub mdm_margins: Vec<f64>,
    /// Average per-image metrics instead of pooling all pixels.
    pub per_image: bool,
    pub tpr_target: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            mode: MetricMode::Exact,
            curve_bins: DEFAULT_BINS,
            mdm_grid: 256,
            mdm_margins: MDM_MARGIN_PRESETS.to_vec(),
            per_image: false,
            tpr_target: TPR_TARGET,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginValue {
    pub margin: f64,
    pub value: f64,
}

/// Metrics of one configuration over a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub images: usize,
    pub positives: u64,
    pub negatives: u64,
    pub ap: f64,
    pub fpr_at_tpr: f64,
    pub auroc: f64,
    pub mdm: Vec<MarginValue>,
}

#[derive(Debug, Clone)]
struct ImageMetrics {
    ap: Option<f64>,
    fpr: Option<f64>,
    auroc: Option<f64>,
    mdm: Vec<f64>,
}

/// Accumulates predictions image by image.
///
/// Pooled mode treats the dataset as one big image. Per-image mode averages
/// each metric over the images where it is defined (AP needs a positive
/// pixel, AuROC and FPR need one of each).
#[derive(Debug, Clone)]
pub struct DatasetEvaluator {
    options: EvalOptions,
    scored: ScoredPixels,
    binned: Option<ThresholdStats>,
    curve: ThresholdStats,
    mdm: MdmStats,
    per_image: Vec<ImageMetrics>,
    images: usize,
}

impl DatasetEvaluator {
    pub fn new(options: EvalOptions) -> Result<Self> {
        if let MetricMode::Binned(0) = options.mode {
            return Err(Error::InvalidBins(
                "binned mode needs at least one bin".into(),
            ));
        }
        if options.curve_bins == 0 {
            return Err(Error::InvalidBins("curves need at least one bin".into()));
        }
        if let Some(&m) = options
            .mdm_margins
            .iter()
            .find(|m| !(0.0..=1.0).contains(*m))
        {
            return Err(Error::InvalidHyperParams(format!(
                "mdm margin {m} is outside [0, 1]"
            )));
        }
        Ok(Self {
            binned: match options.mode {
                MetricMode::Binned(b) => Some(ThresholdStats::new(b)),
                MetricMode::Exact => None,
            },
            curve: ThresholdStats::new(options.curve_bins),
            mdm: MdmStats::new(options.mdm_grid)?,
            scored: ScoredPixels::default(),
            per_image: Vec::new(),
            images: 0,
            options,
        })
    }

    pub fn options(&self) -> &EvalOptions {
        &self.options
    }

    pub fn add(&mut self, pred: &AnomalyMap, truth: &LabelMap) -> Result<()> {
        let image = ScoredPixels::from_map(pred, truth)?;
        let mut mdm = MdmStats::new(self.options.mdm_grid)?;
        mdm.add_map(pred, truth)?;
        self.curve.add_map(pred, truth)?;
        if self.options.per_image {
            let mode = self.options.mode;
            self.per_image.push(ImageMetrics {
                ap: average_precision(&image, mode).ok(),
                fpr: fpr_at_tpr(&image, self.options.tpr_target, mode).ok(),
                auroc: auroc(&image, mode).ok(),
                mdm: self
                    .options
                    .mdm_margins
                    .iter()
                    .map(|&m| mdm.mdm(m))
                    .collect(),
            });
        } else {
            match &mut self.binned {
                Some(stats) => stats.add_map(pred, truth)?,
                None => self.scored.extend(&image),
            }
        }
        self.mdm.merge_in(&mdm)?;
        self.images += 1;
        Ok(())
    }

    pub fn images(&self) -> usize {
        self.images
    }

    pub fn finish(&self) -> Result<MetricSummary> {
        let positives = self.curve.total_positives();
        let negatives = self.curve.total_negatives();
        let (ap, fpr, auc, mdm) = if self.options.per_image {
            let mean = |f: &dyn Fn(&ImageMetrics) -> Option<f64>, err: fn() -> Error| {
                let vals: Vec<f64> = self.per_image.iter().filter_map(f).collect();
                if vals.is_empty() {
                    Err(err())
                } else {
                    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
                }
            };
            let ap = mean(&|m| m.ap, || Error::NoPositives)?;
            let fpr = mean(&|m| m.fpr, || Error::DegenerateLabels)?;
            let auc = mean(&|m| m.auroc, || Error::DegenerateLabels)?;
            let n = self.per_image.len().max(1) as f64;
            let mdm = (0..self.options.mdm_margins.len())
                .map(|i| self.per_image.iter().map(|m| m.mdm[i]).sum::<f64>() / n)
                .collect::<Vec<_>>();
            (ap, fpr, auc, mdm)
        } else {
            let (ap, fpr, auc) = match &self.binned {
                Some(stats) => (
                    stats.average_precision()?,
                    stats.fpr_at_tpr(self.options.tpr_target)?,
                    stats.auroc()?,
                ),
                None => {
                    let mode = MetricMode::Exact;
                    (
                        average_precision(&self.scored, mode)?,
                        fpr_at_tpr(&self.scored, self.options.tpr_target, mode)?,
                        auroc(&self.scored, mode)?,
                    )
                }
            };
            let mdm = self
                .options
                .mdm_margins
                .iter()
                .map(|&m| self.mdm.mdm(m))
                .collect::<Vec<_>>();
            (ap, fpr, auc, mdm)
        };
        Ok(MetricSummary {
            images: self.images,
            positives,
            negatives,
            ap,
            fpr_at_tpr: fpr,
            auroc: auc,
            mdm: self
                .options
                .mdm_margins
                .iter()
                .zip(mdm)
                .map(|(&margin, value)| MarginValue { margin, value })
                .collect(),
        })
    }

    /// Pooled PR/ROC operating points at the curve resolution.
    pub fn curve(&self) -> Vec<CurvePoint> {
        self.curve.curve()
    }
}

/// Evaluates paired predictions and ground truths in one call.
pub fn evaluate<'a>(
    pairs: impl IntoIterator<Item = (&'a AnomalyMap, &'a LabelMap)>,
    options: EvalOptions,
) -> Result<MetricSummary> {
    let mut eval = DatasetEvaluator::new(options)?;
    for (pred, truth) in pairs {
        eval.add(pred, truth)?;
    }
    eval.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(p: Vec<f32>, l: Vec<u8>) -> (AnomalyMap, LabelMap) {
        (
            AnomalyMap::new(1, p.len(), p).unwrap(),
            LabelMap::new(1, l.len(), l).unwrap(),
        )
    }

    #[test]
    fn pooled_equals_concatenation() {
        let a = pair(vec![0.9, 0.2, 0.6], vec![1, 0, 0]);
        let b = pair(vec![0.7, 0.1, 0.3], vec![1, 255, 0]);
        let joined = pair(vec![0.9, 0.2, 0.6, 0.7, 0.3], vec![1, 0, 0, 1, 0]);
        let opts = EvalOptions::default();
        let split = evaluate([(&a.0, &a.1), (&b.0, &b.1)], opts.clone()).unwrap();
        let whole = evaluate([(&joined.0, &joined.1)], opts).unwrap();
        assert_eq!(split.ap, whole.ap);
        assert_eq!(split.auroc, whole.auroc);
        assert_eq!(split.fpr_at_tpr, whole.fpr_at_tpr);
        assert_eq!(split.mdm, whole.mdm);
        assert_eq!(split.images, 2);
        assert_eq!((split.positives, split.negatives), (2, 3));
    }

    #[test]
    fn no_positives_anywhere() {
        let a = pair(vec![0.9, 0.2], vec![0, 0]);
        let err = evaluate([(&a.0, &a.1)], EvalOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NoPositives));
    }

    #[test]
    fn per_image_skips_undefined_images() {
        let a = pair(vec![0.9, 0.2], vec![1, 0]);
        let b = pair(vec![0.9, 0.2], vec![0, 0]);
        let opts = EvalOptions {
            per_image: true,
            ..EvalOptions::default()
        };
        let s = evaluate([(&a.0, &a.1), (&b.0, &b.1)], opts).unwrap();
        assert_eq!(s.ap, 1.0);
        assert_eq!(s.auroc, 1.0);
        // the detection margin is defined for both images (0 for the anomaly-free one)
        let m = s.mdm[0].value;
        assert!(m > 0.0 && m < 0.5);
    }

    #[test]
    fn binned_mode_pools_histograms() {
        let a = pair(vec![0.9, 0.2, 0.6], vec![1, 0, 0]);
        let opts = EvalOptions {
            mode: MetricMode::Binned(64),
            ..EvalOptions::default()
        };
        let s = evaluate([(&a.0, &a.1)], opts).unwrap();
        assert_eq!(s.ap, 1.0);
        assert_eq!(s.fpr_at_tpr, 0.0);
    }
}
