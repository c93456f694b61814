//! Data model for mask-network outputs, ground truth and hyperparameters.
//!
//! Everything here is immutable once constructed. Constructors validate the
//! invariants, so holding a value is proof that it is well formed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the sum of each class-probability row.
pub const ROW_SUM_TOLERANCE: f64 = 1e-4;

/// Pixels processed per parallel work item in the dense loops.
pub(crate) const PIXEL_CHUNK: usize = 4096;

fn check_unit_range(values: &[f32], what: &'static str) -> Result<()> {
    match values.iter().position(|v| !(0.0..=1.0).contains(v)) {
        Some(index) => Err(Error::RangeViolation {
            what,
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

/// `N` soft membership maps of size `H x W`, stored query-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMaskSet {
    n_queries: usize,
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl SoftMaskSet {
    pub fn new(n_queries: usize, height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if n_queries == 0 || height == 0 || width == 0 {
            return Err(Error::DimensionMismatch(format!(
                "mask set dimensions must be positive, got N={n_queries} H={height} W={width}"
            )));
        }
        let expected = n_queries * height * width;
        if values.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "mask set N={n_queries} H={height} W={width} needs {expected} values, got {}",
                values.len()
            )));
        }
        check_unit_range(&values, "mask set")?;
        Ok(Self {
            n_queries,
            height,
            width,
            values,
        })
    }

    pub fn n_queries(&self) -> usize {
        self.n_queries
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of pixels in one mask, `H * W`.
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Row-major membership map of query `n`.
    pub fn query(&self, n: usize) -> &[f32] {
        let hw = self.pixels();
        &self.values[n * hw..(n + 1) * hw]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }
}

/// `N` probability vectors over `C` inlier classes plus the void class.
///
/// Classes `0..C` are inliers and index `C` is void.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbSet {
    n_queries: usize,
    n_classes: usize,
    values: Vec<f32>,
}

impl ClassProbSet {
    /// `n_classes` counts inlier classes only; each row has `n_classes + 1` entries.
    pub fn new(n_queries: usize, n_classes: usize, values: Vec<f32>) -> Result<Self> {
        if n_queries == 0 {
            return Err(Error::DimensionMismatch(
                "probability set needs at least one query".into(),
            ));
        }
        let row_len = n_classes + 1;
        let expected = n_queries * row_len;
        if values.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "probability set N={n_queries} C={n_classes} needs {expected} values, got {}",
                values.len()
            )));
        }
        check_unit_range(&values, "probability set")?;
        for (row, chunk) in values.chunks_exact(row_len).enumerate() {
            let sum: f64 = chunk.iter().map(|&p| p as f64).sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::RowSumViolation {
                    row,
                    sum,
                    tolerance: ROW_SUM_TOLERANCE,
                });
            }
        }
        Ok(Self {
            n_queries,
            n_classes,
            values,
        })
    }

    pub fn n_queries(&self) -> usize {
        self.n_queries
    }

    /// Number of inlier classes `C`.
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn void_index(&self) -> usize {
        self.n_classes
    }

    pub fn row(&self, n: usize) -> &[f32] {
        let len = self.n_classes + 1;
        &self.values[n * len..(n + 1) * len]
    }

    pub fn void_prob(&self, n: usize) -> f32 {
        self.row(n)[self.n_classes]
    }

    /// Largest probability among the inlier classes, 0 when `C = 0`.
    pub fn max_inlier_prob(&self, n: usize) -> f32 {
        self.row(n)[..self.n_classes]
            .iter()
            .copied()
            .fold(0.0, f32::max)
    }

    /// Index of the most probable class, void included; ties go to the lowest index.
    pub fn argmax(&self, n: usize) -> usize {
        let row = self.row(n);
        let mut best = 0;
        for (l, &p) in row.iter().enumerate().skip(1) {
            if p > row[best] {
                best = l;
            }
        }
        best
    }

    pub fn max_prob(&self, n: usize) -> f32 {
        self.row(n)[self.argmax(n)]
    }

    /// The query's most probable class is an inlier class.
    pub fn is_inlier(&self, n: usize) -> bool {
        self.argmax(n) != self.void_index()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

/// A validated pair of mask and class outputs for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    masks: SoftMaskSet,
    probs: ClassProbSet,
}

/// Pairs masks with class probabilities, checking that they describe the same queries.
pub fn validate_bundle(masks: SoftMaskSet, probs: ClassProbSet) -> Result<Bundle> {
    if masks.n_queries() != probs.n_queries() {
        return Err(Error::DimensionMismatch(format!(
            "{} masks but {} probability rows",
            masks.n_queries(),
            probs.n_queries()
        )));
    }
    Ok(Bundle { masks, probs })
}

impl Bundle {
    /// Validates raw buffers: `masks` is `N*H*W` query-major, `probs` is `N*(C+1)`.
    pub fn from_raw(
        n_queries: usize,
        height: usize,
        width: usize,
        n_classes: usize,
        masks: Vec<f32>,
        probs: Vec<f32>,
    ) -> Result<Self> {
        let masks = SoftMaskSet::new(n_queries, height, width, masks)?;
        let probs = ClassProbSet::new(n_queries, n_classes, probs)?;
        validate_bundle(masks, probs)
    }

    pub fn masks(&self) -> &SoftMaskSet {
        &self.masks
    }

    pub fn probs(&self) -> &ClassProbSet {
        &self.probs
    }

    pub fn n_queries(&self) -> usize {
        self.masks.n_queries()
    }

    pub fn height(&self) -> usize {
        self.masks.height()
    }

    pub fn width(&self) -> usize {
        self.masks.width()
    }

    pub fn n_classes(&self) -> usize {
        self.probs.n_classes()
    }

    pub fn into_parts(self) -> (SoftMaskSet, ClassProbSet) {
        (self.masks, self.probs)
    }
}

/// For every pixel, the query with the highest membership (lowest index on ties).
pub fn dominant_query(masks: &SoftMaskSet) -> Vec<usize> {
    let hw = masks.pixels();
    let mut out = vec![0usize; hw];
    out.par_chunks_mut(PIXEL_CHUNK)
        .enumerate()
        .for_each(|(ci, chunk)| {
            let start = ci * PIXEL_CHUNK;
            let mut best: Vec<f32> = masks.query(0)[start..start + chunk.len()].to_vec();
            for n in 1..masks.n_queries() {
                let m = &masks.query(n)[start..start + chunk.len()];
                for ((b, idx), &v) in best.iter_mut().zip(chunk.iter_mut()).zip(m) {
                    if v > *b {
                        *b = v;
                        *idx = n;
                    }
                }
            }
        });
    out
}

/// A dense `H x W` map of anomaly scores in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl AnomalyMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "anomaly map {height}x{width} cannot hold {} values",
                values.len()
            )));
        }
        check_unit_range(&values, "anomaly map")?;
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        debug_assert!((0.0..=1.0).contains(&value));
        Self {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    /// Callers guarantee every value is in `[0, 1]`.
    pub(crate) fn from_values(height: usize, width: usize, values: Vec<f32>) -> Self {
        debug_assert_eq!(values.len(), height * width);
        debug_assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
        Self {
            height,
            width,
            values,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub(crate) fn same_shape(&self, height: usize, width: usize) -> bool {
        self.height == height && self.width == width
    }
}

/// Pixel label values used in ground-truth maps.
pub struct Label;

impl Label {
    pub const INLIER: u8 = 0;
    pub const ANOMALY: u8 = 1;
    pub const IGNORE: u8 = 255;
}

/// Ground truth for one image: inlier, anomaly, or ignored pixels.
///
/// Binary region maps (road masks used to seed the inlier set) reuse this
/// type with `1` marking pixels inside the region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    values: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, values: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || values.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "label map {height}x{width} cannot hold {} values",
                values.len()
            )));
        }
        if let Some(index) = values
            .iter()
            .position(|&v| !matches!(v, Label::INLIER | Label::ANOMALY | Label::IGNORE))
        {
            return Err(Error::LabelViolation {
                index,
                value: values[index],
            });
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn count(&self, label: u8) -> usize {
        self.values.iter().filter(|&&v| v == label).count()
    }
}

/// An ordered set of query indices with no duplicates.
///
/// Insertion order is kept because mined anomalous queries are ranked.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct QueryIndexSet {
    indices: Vec<usize>,
}

impl TryFrom<Vec<usize>> for QueryIndexSet {
    type Error = Error;

    fn try_from(indices: Vec<usize>) -> Result<Self> {
        Self::new(indices)
    }
}

impl From<QueryIndexSet> for Vec<usize> {
    fn from(set: QueryIndexSet) -> Self {
        set.indices
    }
}

impl QueryIndexSet {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        let mut seen = std::collections::HashSet::with_capacity(indices.len());
        for &i in &indices {
            if !seen.insert(i) {
                return Err(Error::DuplicateIndex { index: i });
            }
        }
        Ok(Self { indices })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.contains(&index)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.indices
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.indices.iter().copied()
    }

    /// Indices in ascending order.
    pub fn sorted(&self) -> Vec<usize> {
        let mut v = self.indices.clone();
        v.sort_unstable();
        v
    }

    /// The first `n` members in stored order.
    pub fn top(&self, n: usize) -> Self {
        Self {
            indices: self.indices.iter().take(n).copied().collect(),
        }
    }

    /// `self` followed by the members of `other` not already present.
    pub fn union(&self, other: &Self) -> Self {
        let mut indices = self.indices.clone();
        for i in other.iter() {
            if !indices.contains(&i) {
                indices.push(i);
            }
        }
        Self { indices }
    }

    pub fn check_bounds(&self, n_queries: usize) -> Result<()> {
        match self.indices.iter().find(|&&i| i >= n_queries) {
            Some(&index) => Err(Error::IndexOutOfRange { index, n_queries }),
            None => Ok(()),
        }
    }
}

/// Tunable constants of the scoring, mining and evaluation procedures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    /// Minimum top-class probability for a query to count as inlier evidence.
    pub t_mask: f64,
    /// Membership above which a pixel counts toward a mask for border detection.
    pub t_border: f64,
    /// Score assigned to pixels shared by two inlier masks.
    pub eps_border: f64,
    /// Weight of the rejection map in the final interpolation.
    pub lambda: f64,
    /// Minimum average IoU with anomalies for a query to be mined as anomalous.
    pub t_iou: f64,
    /// Fraction of images above which a query counts as specialized.
    pub t_query: f64,
    /// Probability slack for specialization: a class is predicted when `p >= 1 - eps`.
    pub eps_query: f64,
    /// Minimum average IoU with the road region for preset inlier queries.
    pub t_ground: f64,
    /// Number of threshold grid cells `K` for the detection margin.
    pub mdm_grid: usize,
    /// Quality floor for the detection margin.
    pub mdm_margin: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            t_mask: 0.3,
            t_border: 0.1,
            eps_border: 0.001,
            lambda: 0.6,
            t_iou: 0.25,
            t_query: 0.9,
            eps_query: 0.1,
            t_ground: 0.3,
            mdm_grid: 256,
            mdm_margin: 0.6,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let unit = [
            ("t_mask", self.t_mask),
            ("t_border", self.t_border),
            ("eps_border", self.eps_border),
            ("lambda", self.lambda),
            ("t_iou", self.t_iou),
            ("t_query", self.t_query),
            ("eps_query", self.eps_query),
            ("t_ground", self.t_ground),
            ("mdm_margin", self.mdm_margin),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidHyperParams(format!(
                    "{name} = {v} is outside [0, 1]"
                )));
            }
        }
        if self.mdm_grid < 2 {
            return Err(Error::InvalidHyperParams(format!(
                "mdm_grid = {} must be at least 2",
                self.mdm_grid
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn masks(n: usize, h: usize, w: usize, v: Vec<f32>) -> SoftMaskSet {
        SoftMaskSet::new(n, h, w, v).unwrap()
    }

    #[test]
    fn uniform_bundle_is_valid() {
        let m = masks(2, 2, 2, vec![0.5; 8]);
        let p = ClassProbSet::new(2, 1, vec![0.5; 4]).unwrap();
        let b = validate_bundle(m, p).unwrap();
        assert_eq!(b.n_queries(), 2);
        assert_eq!(b.n_classes(), 1);
    }

    #[test]
    fn row_sum_violation() {
        let err = ClassProbSet::new(1, 1, vec![0.7, 0.7]).unwrap_err();
        assert!(matches!(err, Error::RowSumViolation { row: 0, .. }));
    }

    #[test]
    fn query_count_mismatch() {
        let m = masks(2, 1, 1, vec![0.5; 2]);
        let p = ClassProbSet::new(3, 1, vec![0.5; 6]).unwrap();
        assert!(matches!(
            validate_bundle(m, p),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn out_of_range_and_nan_masks() {
        assert!(matches!(
            SoftMaskSet::new(1, 1, 2, vec![0.5, 1.5]),
            Err(Error::RangeViolation { index: 1, .. })
        ));
        assert!(matches!(
            SoftMaskSet::new(1, 1, 1, vec![f32::NAN]),
            Err(Error::RangeViolation { .. })
        ));
    }

    #[test]
    fn dominant_query_cases() {
        assert_eq!(
            dominant_query(&masks(1, 2, 2, vec![0.1, 0.0, 1.0, 0.3])),
            vec![0; 4]
        );
        // one pixel, three queries
        assert_eq!(
            dominant_query(&masks(3, 1, 1, vec![0.2, 0.9, 0.3])),
            vec![1]
        );
        assert_eq!(dominant_query(&masks(2, 1, 1, vec![0.5, 0.5])), vec![0]);
    }

    #[test]
    fn dominant_query_spans_chunks() {
        let hw = PIXEL_CHUNK + 7;
        let mut v = vec![0.0; 2 * hw];
        v[hw + hw - 1] = 1.0;
        let d = dominant_query(&masks(2, 1, hw, v));
        assert_eq!(d[hw - 1], 1);
        assert!(d[..hw - 1].iter().all(|&i| i == 0));
    }

    #[test]
    fn argmax_and_inlier_probs() {
        let p = ClassProbSet::new(2, 2, vec![0.25, 0.2, 0.55, 0.5, 0.5, 0.0]).unwrap();
        assert_eq!(p.argmax(0), 2);
        assert!(!p.is_inlier(0));
        assert_eq!(p.max_inlier_prob(0), 0.25);
        assert_eq!(p.argmax(1), 0);
        assert_eq!(p.void_prob(1), 0.0);
        let only_void = ClassProbSet::new(1, 0, vec![1.0]).unwrap();
        assert_eq!(only_void.max_inlier_prob(0), 0.0);
    }

    #[test]
    fn label_map_rejects_other_values() {
        assert!(LabelMap::new(1, 3, vec![0, 1, 255]).is_ok());
        assert!(matches!(
            LabelMap::new(1, 2, vec![0, 7]),
            Err(Error::LabelViolation { index: 1, value: 7 })
        ));
    }

    #[test]
    fn query_index_set_rules() {
        assert!(matches!(
            QueryIndexSet::new(vec![1, 2, 1]),
            Err(Error::DuplicateIndex { index: 1 })
        ));
        let s = QueryIndexSet::new(vec![4, 1]).unwrap();
        assert!(matches!(
            s.check_bounds(4),
            Err(Error::IndexOutOfRange { index: 4, .. })
        ));
        let u = s.union(&QueryIndexSet::new(vec![1, 0]).unwrap());
        assert_eq!(u.as_slice(), &[4, 1, 0]);
        assert_eq!(u.sorted(), vec![0, 1, 4]);
        assert_eq!(u.top(2).as_slice(), &[4, 1]);
    }

    #[test]
    fn default_hyperparams_validate() {
        let h = HyperParams::default();
        h.validate().unwrap();
        assert_eq!((h.lambda, h.t_iou, h.t_mask), (0.6, 0.25, 0.3));
        assert_eq!((h.t_border, h.eps_border, h.t_query), (0.1, 0.001, 0.9));
        let bad = HyperParams { mdm_grid: 1, ..h };
        assert!(bad.validate().is_err());
    }

    /// Raw bundle parts plus a mutation to apply.
    fn raw_bundle() -> impl Strategy<Value = (usize, usize, usize, usize, Vec<f32>, Vec<f32>)> {
        (1usize..4, 1usize..4, 1usize..4, 0usize..4).prop_flat_map(|(n, h, w, c)| {
            let masks = proptest::collection::vec(0.0f32..=1.0, n * h * w);
            let probs = proptest::collection::vec(
                proptest::collection::vec(0.01f32..1.0, c + 1).prop_map(|row| {
                    let s: f32 = row.iter().sum();
                    row.into_iter().map(|p| p / s).collect::<Vec<_>>()
                }),
                n,
            )
            .prop_map(|rows| rows.concat());
            (Just(n), Just(h), Just(w), Just(c), masks, probs)
        })
    }

    #[derive(Debug, Clone)]
    enum Mutation {
        None,
        MaskOutOfRange(usize, f32),
        ProbOutOfRange(usize, f32),
        ScaleRow(usize, f32),
        DropMask,
        ExtraProbRow,
    }

    fn mutation() -> impl Strategy<Value = Mutation> {
        prop_oneof![
            Just(Mutation::None),
            (
                any::<usize>(),
                prop_oneof![-2.0f32..-1e-3, 1.001f32..3.0, Just(f32::NAN)]
            )
                .prop_map(|(i, v)| Mutation::MaskOutOfRange(i, v)),
            (any::<usize>(), prop_oneof![-2.0f32..-1e-3, 1.001f32..3.0])
                .prop_map(|(i, v)| Mutation::ProbOutOfRange(i, v)),
            (any::<usize>(), prop_oneof![0.2f32..0.99, 1.01f32..1.3])
                .prop_map(|(i, s)| Mutation::ScaleRow(i, s)),
            Just(Mutation::DropMask),
            Just(Mutation::ExtraProbRow),
        ]
    }

    proptest! {
        #[test]
        fn validation_accepts_exactly_valid_inputs(
            (n, h, w, c, mut m, mut p) in raw_bundle(),
            mutation in mutation(),
        ) {
            let mut n_probs = n;
            match mutation {
                Mutation::None => {}
                Mutation::MaskOutOfRange(i, v) => { let len = m.len(); m[i % len] = v; }
                Mutation::ProbOutOfRange(i, v) => { let len = p.len(); p[i % len] = v; }
                Mutation::ScaleRow(i, s) => {
                    let row = i % n;
                    for x in &mut p[row * (c + 1)..(row + 1) * (c + 1)] { *x *= s; }
                }
                Mutation::DropMask => { m.truncate(m.len() - h * w); }
                Mutation::ExtraProbRow => {
                    n_probs += 1;
                    p.extend(std::iter::once(1.0).chain(std::iter::repeat_n(0.0, c)));
                }
            }
            let valid = m.iter().all(|v| (0.0..=1.0).contains(v))
                && p.iter().all(|v| (0.0..=1.0).contains(v))
                && p.chunks(c + 1).all(|r| (r.iter().map(|&x| x as f64).sum::<f64>() - 1.0).abs() <= ROW_SUM_TOLERANCE)
                && m.len() == n * h * w
                && n_probs == n;
            let n_masks = m.len() / (h * w);
            let result = SoftMaskSet::new(n_masks, h, w, m)
                .and_then(|ms| ClassProbSet::new(n_probs, c, p).and_then(|ps| validate_bundle(ms, ps)));
            prop_assert_eq!(result.is_ok(), valid);
        }

        #[test]
        fn dominant_query_invariant_under_monotone_rescaling(
            n in 1usize..6, hw in 1usize..40, seed in proptest::collection::vec(0u32..=1000, 240)
        ) {
            // a coarse grid keeps x*x and sqrt injective in f32
            let v: Vec<f32> = (0..n * hw).map(|i| seed[i % seed.len()] as f32 / 1000.0).collect();
            let rescaled: Vec<f32> = v.iter().enumerate().map(|(i, &x)| {
                // a different strictly increasing map per pixel, shared by all queries
                let pixel = i % hw;
                if pixel % 2 == 0 { x * x } else { x.sqrt() }
            }).collect();
            let a = dominant_query(&masks(n, 1, hw, v));
            let b = dominant_query(&masks(n, 1, hw, rescaled));
            prop_assert_eq!(a, b);
        }
    }
}
