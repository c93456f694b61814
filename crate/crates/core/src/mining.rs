//! Offline analysis of validation outputs: which queries fire on anomalies,
//! which queries specialize in one class, and which queries cover the ground.
//!
//! A query's region in an image is the set of pixels where it has the highest
//! membership, so regions of distinct queries partition the image.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::Scorer;
use crate::metrics::{DatasetEvaluator, EvalOptions, MetricSummary};
use crate::model::{dominant_query, Bundle, ClassProbSet, Label, LabelMap, QueryIndexSet};

/// Queries considered by the IoU histogram.
pub const HISTOGRAM_QUERIES: usize = 16;

/// Per-query average IoU with a target region over a set of images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryIoUReport {
    pub ious: Vec<f64>,
    /// Images that contributed to each average.
    pub image_counts: Vec<usize>,
}

/// Streams images into per-query IoU averages.
///
/// Per image, IoU is taken between a query's region and the target pixels
/// (label 1), ignoring label-255 pixels. An image where both sets are empty
/// is skipped for that query; otherwise its IoU (possibly 0) is averaged in.
#[derive(Debug, Clone)]
pub struct RegionIoUAccumulator {
    sums: Vec<f64>,
    counts: Vec<usize>,
}

impl RegionIoUAccumulator {
    pub fn new(n_queries: usize) -> Self {
        Self {
            sums: vec![0.0; n_queries],
            counts: vec![0; n_queries],
        }
    }

    pub fn n_queries(&self) -> usize {
        self.sums.len()
    }

    pub fn add(&mut self, bundle: &Bundle, target: &LabelMap) -> Result<()> {
        if bundle.n_queries() != self.n_queries() {
            return Err(Error::InconsistentQueryCount {
                expected: self.n_queries(),
                found: bundle.n_queries(),
            });
        }
        if bundle.height() != target.height() || bundle.width() != target.width() {
            return Err(Error::DimensionMismatch(format!(
                "bundle is {}x{} but target map is {}x{}",
                bundle.height(),
                bundle.width(),
                target.height(),
                target.width()
            )));
        }
        let n = self.n_queries();
        let dominant = dominant_query(bundle.masks());
        let mut region = vec![0u64; n];
        let mut inter = vec![0u64; n];
        let mut target_total = 0u64;
        for (&q, &l) in dominant.iter().zip(target.values()) {
            if l == Label::IGNORE {
                continue;
            }
            region[q] += 1;
            if l == Label::ANOMALY {
                inter[q] += 1;
                target_total += 1;
            }
        }
        for q in 0..n {
            let union = region[q] + target_total - inter[q];
            if union > 0 {
                self.sums[q] += inter[q] as f64 / union as f64;
                self.counts[q] += 1;
            }
        }
        Ok(())
    }

    pub fn finish(&self) -> QueryIoUReport {
        QueryIoUReport {
            ious: self
                .sums
                .iter()
                .zip(&self.counts)
                .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
                .collect(),
            image_counts: self.counts.clone(),
        }
    }
}

fn region_iou(bundles: &[Bundle], targets: &[LabelMap]) -> Result<QueryIoUReport> {
    if bundles.len() != targets.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} bundles but {} label maps",
            bundles.len(),
            targets.len()
        )));
    }
    let first = bundles
        .first()
        .ok_or_else(|| Error::DimensionMismatch("no validation images".into()))?;
    let mut acc = RegionIoUAccumulator::new(first.n_queries());
    for (b, t) in bundles.iter().zip(targets) {
        acc.add(b, t)?;
    }
    Ok(acc.finish())
}

/// Average IoU of every query's region with the anomaly pixels.
pub fn query_anomaly_iou(bundles: &[Bundle], truths: &[LabelMap]) -> Result<QueryIoUReport> {
    region_iou(bundles, truths)
}

/// Queries with average IoU at least `t_iou`, best first (ties by index).
pub fn select_anomalous_queries(report: &QueryIoUReport, t_iou: f64) -> QueryIndexSet {
    let mut picked: Vec<usize> = (0..report.ious.len())
        .filter(|&n| report.ious[n] >= t_iou)
        .collect();
    picked.sort_by(|&a, &b| report.ious[b].total_cmp(&report.ious[a]).then(a.cmp(&b)));
    QueryIndexSet::new(picked).expect("indices are distinct")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuerySpecialization {
    /// Class predicted with probability `>= 1 - eps` most often (void included).
    pub class: usize,
    /// Fraction of images in which that happens.
    pub fraction: f64,
    pub specialized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecializationReport {
    pub queries: Vec<QuerySpecialization>,
}

impl SpecializationReport {
    pub fn specialized(&self) -> QueryIndexSet {
        let v = (0..self.queries.len())
            .filter(|&n| self.queries[n].specialized)
            .collect();
        QueryIndexSet::new(v).expect("indices are distinct")
    }
}

/// Flags queries that predict one class with probability `>= 1 - eps` in
/// more than a fraction `t_query` of the images.
pub fn specialized_queries(
    probs_per_image: &[ClassProbSet],
    t_query: f64,
    eps: f64,
) -> Result<SpecializationReport> {
    let Some(first) = probs_per_image.first() else {
        return Ok(SpecializationReport {
            queries: Vec::new(),
        });
    };
    let (n, c) = (first.n_queries(), first.n_classes());
    let mut counts = vec![vec![0usize; c + 1]; n];
    for probs in probs_per_image {
        if probs.n_queries() != n {
            return Err(Error::InconsistentQueryCount {
                expected: n,
                found: probs.n_queries(),
            });
        }
        if probs.n_classes() != c {
            return Err(Error::DimensionMismatch(format!(
                "images disagree on class count: {c} vs {}",
                probs.n_classes()
            )));
        }
        for (q, row_counts) in counts.iter_mut().enumerate() {
            for (l, &p) in probs.row(q).iter().enumerate() {
                if p as f64 >= 1.0 - eps {
                    row_counts[l] += 1;
                }
            }
        }
    }
    let images = probs_per_image.len() as f64;
    let queries = counts
        .iter()
        .map(|row| {
            let mut class = 0;
            for (l, &k) in row.iter().enumerate() {
                if k > row[class] {
                    class = l;
                }
            }
            let fraction = row[class] as f64 / images;
            QuerySpecialization {
                class,
                fraction,
                specialized: fraction > t_query,
            }
        })
        .collect();
    Ok(SpecializationReport { queries })
}

/// Queries whose region overlaps the given road regions with average IoU at
/// least `t_ground`, in ascending index order.
///
/// Road maps use label 1 for road pixels; label 255 pixels are ignored.
pub fn ground_query_init(
    bundles: &[Bundle],
    road_regions: &[LabelMap],
    t_ground: f64,
) -> Result<QueryIndexSet> {
    let report = region_iou(bundles, road_regions)?;
    Ok(select_ground_queries(&report, t_ground))
}

/// Queries with average road IoU at least `t_ground`, ascending.
///
/// Pair with a [`RegionIoUAccumulator`] fed road maps to stream the images.
pub fn select_ground_queries(report: &QueryIoUReport, t_ground: f64) -> QueryIndexSet {
    let v = (0..report.ious.len())
        .filter(|&n| report.ious[n] >= t_ground)
        .collect();
    QueryIndexSet::new(v).expect("indices are distinct")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub summary: MetricSummary,
}

/// Re-scores the images with the anomalous set restricted to the first `n`
/// ranked queries, for `n = 1..=n_max`.
///
/// `images` are visited once; each image is scored for every `n`.
pub fn rank_sweep<I>(
    ordered_anomalous: &QueryIndexSet,
    images: I,
    scorer: &Scorer,
    eval: &EvalOptions,
    n_max: usize,
) -> Result<Vec<SweepRow>>
where
    I: IntoIterator<Item = Result<(Bundle, LabelMap)>>,
{
    let n_max = n_max.min(ordered_anomalous.len());
    let scorers: Vec<Scorer> = (1..=n_max)
        .map(|n| Scorer {
            anomalous: ordered_anomalous.top(n),
            ..scorer.clone()
        })
        .collect();
    let mut evals = (0..n_max)
        .map(|_| DatasetEvaluator::new(eval.clone()))
        .collect::<Result<Vec<_>>>()?;
    for image in images {
        let (bundle, truth) = image?;
        for (s, e) in scorers.iter().zip(evals.iter_mut()) {
            e.add(&s.score(&bundle)?, &truth)?;
        }
    }
    evals
        .iter()
        .enumerate()
        .map(|(i, e)| {
            Ok(SweepRow {
                n: i + 1,
                summary: e.finish()?,
            })
        })
        .collect()
}

/// Counts of the [`HISTOGRAM_QUERIES`] highest IoUs per bin.
///
/// Bin `i` covers `[edges[i], edges[i+1])`, the last bin is closed on the
/// right. Values outside the edges are not counted.
pub fn iou_histogram(report: &QueryIoUReport, bin_edges: &[f64]) -> Result<Vec<usize>> {
    if bin_edges.len() < 2 {
        return Err(Error::InvalidBins("need at least two edges".into()));
    }
    if bin_edges.iter().any(|e| !(0.0..=1.0).contains(e)) {
        return Err(Error::InvalidBins("edges must lie in [0, 1]".into()));
    }
    if bin_edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidBins(
            "edges must be strictly increasing".into(),
        ));
    }
    let mut top = report.ious.clone();
    top.sort_by(|a, b| b.total_cmp(a));
    top.truncate(HISTOGRAM_QUERIES);
    let bins = bin_edges.len() - 1;
    let mut counts = vec![0usize; bins];
    for v in top {
        let last = bin_edges[bins];
        if v < bin_edges[0] || v > last {
            continue;
        }
        let i = if v == last {
            bins - 1
        } else {
            bin_edges.partition_point(|&e| e <= v) - 1
        };
        counts[i] += 1;
    }
    Ok(counts)
}

/// How anomaly and inlier pixels split between inlier-classified and
/// void-classified regions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MembershipAnalysis {
    /// Fraction of anomaly pixels whose dominant query has an inlier top class.
    pub anomaly_in_inlier_mask: f64,
    /// Fraction of inlier pixels whose dominant query has an inlier top class.
    pub inlier_in_inlier_mask: f64,
}

#[derive(Debug, Clone, Default)]
pub struct MembershipAccumulator {
    anomaly: (u64, u64),
    inlier: (u64, u64),
}

impl MembershipAccumulator {
    pub fn add(&mut self, bundle: &Bundle, truth: &LabelMap) -> Result<()> {
        if bundle.height() != truth.height() || bundle.width() != truth.width() {
            return Err(Error::DimensionMismatch(format!(
                "bundle is {}x{} but label map is {}x{}",
                bundle.height(),
                bundle.width(),
                truth.height(),
                truth.width()
            )));
        }
        let inlier_query: Vec<bool> = (0..bundle.n_queries())
            .map(|n| bundle.probs().is_inlier(n))
            .collect();
        for (&q, &l) in dominant_query(bundle.masks()).iter().zip(truth.values()) {
            let slot = match l {
                Label::ANOMALY => &mut self.anomaly,
                Label::INLIER => &mut self.inlier,
                _ => continue,
            };
            slot.0 += inlier_query[q] as u64;
            slot.1 += 1;
        }
        Ok(())
    }

    pub fn finish(&self) -> MembershipAnalysis {
        let frac = |(a, b): (u64, u64)| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        MembershipAnalysis {
            anomaly_in_inlier_mask: frac(self.anomaly),
            inlier_in_inlier_mask: frac(self.inlier),
        }
    }
}
