//! Anomaly heatmaps from mask outputs.
//!
//! The full method combines two maps. The *rejection* map is high wherever no
//! confident inlier mask explains a pixel; the *acceptance* map is high
//! wherever a query known to fire on anomalies is active. Pixels shared by two
//! inlier masks are borders between known objects and get a near-zero
//! rejection score.
//!
//! Every function here is pure and deterministic: dense loops are split into
//! pixel chunks, and each pixel reduces over queries in ascending index order,
//! so the thread count never changes a result.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    dominant_query, AnomalyMap, Bundle, ClassProbSet, HyperParams, QueryIndexSet, SoftMaskSet,
    PIXEL_CHUNK,
};

/// Which stages of [`maskomaly`] run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Toggles {
    pub accept: bool,
    pub reject: bool,
    pub borders: bool,
    pub init: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self::FULL
    }
}

impl Toggles {
    pub const FULL: Toggles = Toggles {
        accept: true,
        reject: true,
        borders: true,
        init: true,
    };

    /// Ablation ids with a toggle configuration (id 1 is the baseline map).
    pub const ABLATION_IDS: [u8; 5] = [2, 3, 4, 5, 6];

    /// Stage configuration of an ablation row.
    ///
    /// | id | accept | reject | borders | init |
    /// |----|--------|--------|---------|------|
    /// | 2  | yes    |        |         |      |
    /// | 3  |        | yes    |         |      |
    /// | 4  |        | yes    | yes     |      |
    /// | 5  | yes    | yes    | yes     |      |
    /// | 6  | yes    | yes    | yes     | yes  |
    pub fn ablation(id: u8) -> Option<Toggles> {
        let (accept, reject, borders, init) = match id {
            2 => (true, false, false, false),
            3 => (false, true, false, false),
            4 => (false, true, true, false),
            5 => (true, true, true, false),
            6 => (true, true, true, true),
            _ => return None,
        };
        Some(Toggles {
            accept,
            reject,
            borders,
            init,
        })
    }
}

fn per_pixel<F>(pixels: usize, fill: F) -> Vec<f32>
where
    F: Fn(usize, &mut [f32]) + Sync,
{
    let mut out = vec![0f32; pixels];
    out.par_chunks_mut(PIXEL_CHUNK)
        .enumerate()
        .for_each(|(ci, chunk)| fill(ci * PIXEL_CHUNK, chunk));
    out
}

/// Adds every query whose top class is an inlier class with probability at
/// least `t_mask` to `preset`.
///
/// Preset members are kept unconditionally.
pub fn select_inlier_queries(
    probs: &ClassProbSet,
    t_mask: f64,
    preset: &QueryIndexSet,
) -> QueryIndexSet {
    let selected = (0..probs.n_queries())
        .filter(|&n| probs.is_inlier(n) && probs.max_prob(n) as f64 >= t_mask)
        .collect();
    preset.union(&QueryIndexSet::new(selected).expect("range is duplicate free"))
}

/// `o[p] = min over inliers of (1 - m_n[p] * max inlier-class probability of n)`.
///
/// An empty inlier set yields a map of ones.
pub fn reject_map(bundle: &Bundle, inliers: &QueryIndexSet) -> Result<AnomalyMap> {
    inliers.check_bounds(bundle.n_queries())?;
    let masks = bundle.masks();
    let probs = bundle.probs();
    let order: Vec<(usize, f64)> = inliers
        .sorted()
        .into_iter()
        .map(|n| (n, probs.max_inlier_prob(n) as f64))
        .collect();
    let values = per_pixel(masks.pixels(), |start, out| {
        let mut acc = vec![1f64; out.len()];
        for &(n, scale) in &order {
            let m = &masks.query(n)[start..start + out.len()];
            for (a, &v) in acc.iter_mut().zip(m) {
                let s = 1.0 - v as f64 * scale;
                if s < *a {
                    *a = s;
                }
            }
        }
        for (o, a) in out.iter_mut().zip(&acc) {
            *o = *a as f32;
        }
    });
    Ok(AnomalyMap::from_values(
        bundle.height(),
        bundle.width(),
        values,
    ))
}

/// Lowers pixels covered by at least two inlier masks (membership above
/// `t_border`) to at most `eps_border`.
///
/// This is the union of all pairwise intersections, found by counting how
/// many inlier masks exceed the threshold at each pixel. Other pixels are
/// returned untouched.
pub fn reject_borders(
    reject: AnomalyMap,
    masks: &SoftMaskSet,
    inliers: &QueryIndexSet,
    t_border: f64,
    eps_border: f64,
) -> Result<AnomalyMap> {
    if !reject.same_shape(masks.height(), masks.width()) {
        return Err(Error::DimensionMismatch(format!(
            "rejection map is {}x{} but masks are {}x{}",
            reject.height(),
            reject.width(),
            masks.height(),
            masks.width()
        )));
    }
    inliers.check_bounds(masks.n_queries())?;
    if inliers.len() < 2 {
        return Ok(reject);
    }
    let order = inliers.sorted();
    let eps = eps_border as f32;
    let (height, width) = (reject.height(), reject.width());
    let mut values = reject.into_values();
    values
        .par_chunks_mut(PIXEL_CHUNK)
        .enumerate()
        .for_each(|(ci, out)| {
            let start = ci * PIXEL_CHUNK;
            let mut covered = vec![0u8; out.len()];
            for &n in &order {
                let m = &masks.query(n)[start..start + out.len()];
                for (c, &v) in covered.iter_mut().zip(m) {
                    *c = c.saturating_add((v as f64 > t_border) as u8);
                }
            }
            for (o, &c) in out.iter_mut().zip(&covered) {
                if c >= 2 && eps < *o {
                    *o = eps;
                }
            }
        });
    Ok(AnomalyMap::from_values(height, width, values))
}

/// `o[p] = max over anomalous queries of m_n[p] * p_n[void]`.
///
/// An empty anomalous set yields a map of zeros.
pub fn accept_map(bundle: &Bundle, anomalous: &QueryIndexSet) -> Result<AnomalyMap> {
    anomalous.check_bounds(bundle.n_queries())?;
    let masks = bundle.masks();
    let probs = bundle.probs();
    let order: Vec<(usize, f64)> = anomalous
        .sorted()
        .into_iter()
        .map(|n| (n, probs.void_prob(n) as f64))
        .collect();
    let values = per_pixel(masks.pixels(), |start, out| {
        let mut acc = vec![0f64; out.len()];
        for &(n, scale) in &order {
            let m = &masks.query(n)[start..start + out.len()];
            for (a, &v) in acc.iter_mut().zip(m) {
                let s = v as f64 * scale;
                if s > *a {
                    *a = s;
                }
            }
        }
        for (o, a) in out.iter_mut().zip(&acc) {
            *o = *a as f32;
        }
    });
    Ok(AnomalyMap::from_values(
        bundle.height(),
        bundle.width(),
        values,
    ))
}

/// `lambda * reject + (1 - lambda) * accept`, elementwise.
///
/// `lambda = 1` returns `reject` and `lambda = 0` returns `accept` bit-exactly.
pub fn combine(reject: &AnomalyMap, accept: &AnomalyMap, lambda: f64) -> Result<AnomalyMap> {
    if !reject.same_shape(accept.height(), accept.width()) {
        return Err(Error::DimensionMismatch(format!(
            "cannot combine {}x{} and {}x{} maps",
            reject.height(),
            reject.width(),
            accept.height(),
            accept.width()
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidHyperParams(format!(
            "lambda = {lambda} is outside [0, 1]"
        )));
    }
    let r = reject.values();
    let a = accept.values();
    let values = per_pixel(r.len(), |start, out| {
        let r = &r[start..start + out.len()];
        let a = &a[start..start + out.len()];
        for ((o, &r), &a) in out.iter_mut().zip(r).zip(a) {
            let v = lambda * r as f64 + (1.0 - lambda) * a as f64;
            *o = (v as f32).clamp(0.0, 1.0);
        }
    });
    Ok(AnomalyMap::from_values(
        reject.height(),
        reject.width(),
        values,
    ))
}

/// The complete scoring pipeline.
///
/// Stages that are toggled off are skipped: without `reject` the result is the
/// acceptance map, without `accept` it is the (border-adjusted) rejection map,
/// and without `init` the preset inliers are ignored.
pub fn maskomaly(
    bundle: &Bundle,
    anomalous: &QueryIndexSet,
    preset_inliers: &QueryIndexSet,
    hyper: &HyperParams,
    toggles: Toggles,
) -> Result<AnomalyMap> {
    if !toggles.accept && !toggles.reject {
        return Err(Error::InvalidToggles);
    }
    anomalous.check_bounds(bundle.n_queries())?;
    preset_inliers.check_bounds(bundle.n_queries())?;

    let reject = if toggles.reject {
        let empty = QueryIndexSet::empty();
        let preset = if toggles.init { preset_inliers } else { &empty };
        let inliers = select_inlier_queries(bundle.probs(), hyper.t_mask, preset);
        let reject = reject_map(bundle, &inliers)?;
        Some(if toggles.borders {
            reject_borders(
                reject,
                bundle.masks(),
                &inliers,
                hyper.t_border,
                hyper.eps_border,
            )?
        } else {
            reject
        })
    } else {
        None
    };
    let accept = if toggles.accept {
        Some(accept_map(bundle, anomalous)?)
    } else {
        None
    };
    match (reject, accept) {
        (Some(r), Some(a)) => combine(&r, &a, hyper.lambda),
        (Some(r), None) => Ok(r),
        (None, Some(a)) => Ok(a),
        (None, None) => unreachable!("checked above"),
    }
}

/// Mined query sets and settings applied to every image of a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Scorer {
    pub hyper: HyperParams,
    pub toggles: Toggles,
    pub anomalous: QueryIndexSet,
    pub preset_inliers: QueryIndexSet,
}

impl Scorer {
    pub fn score(&self, bundle: &Bundle) -> Result<AnomalyMap> {
        maskomaly(
            bundle,
            &self.anomalous,
            &self.preset_inliers,
            &self.hyper,
            self.toggles,
        )
    }

    pub fn with_toggles(&self, toggles: Toggles) -> Self {
        Self {
            toggles,
            ..self.clone()
        }
    }
}

/// Per-pixel baseline: the dominant query's membership if its top class is
/// void, one minus that membership otherwise.
pub fn baseline_map(bundle: &Bundle) -> AnomalyMap {
    let masks = bundle.masks();
    let probs = bundle.probs();
    let void: Vec<bool> = (0..bundle.n_queries())
        .map(|n| !probs.is_inlier(n))
        .collect();
    let dominant = dominant_query(masks);
    let values = per_pixel(masks.pixels(), |start, out| {
        for (k, o) in out.iter_mut().enumerate() {
            let p = start + k;
            let n = dominant[p];
            let m = masks.query(n)[p];
            *o = if void[n] { m } else { 1.0 - m };
        }
    });
    AnomalyMap::from_values(bundle.height(), bundle.width(), values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle(n: usize, h: usize, w: usize, c: usize, m: Vec<f32>, p: Vec<f32>) -> Bundle {
        Bundle::from_raw(n, h, w, c, m, p).unwrap()
    }

    fn set(v: &[usize]) -> QueryIndexSet {
        QueryIndexSet::new(v.to_vec()).unwrap()
    }

    #[test]
    fn inlier_selection() {
        let p = ClassProbSet::new(1, 1, vec![0.95, 0.05]).unwrap();
        assert_eq!(select_inlier_queries(&p, 0.3, &set(&[])), set(&[0]));
        let p = ClassProbSet::new(1, 1, vec![0.05, 0.95]).unwrap();
        assert!(select_inlier_queries(&p, 0.3, &set(&[])).is_empty());
        let p = ClassProbSet::new(2, 2, vec![0.25, 0.2, 0.55, 0.28, 0.27, 0.45]).unwrap();
        assert!(select_inlier_queries(&p, 0.3, &set(&[])).is_empty());
        assert!(select_inlier_queries(&p, 0.0, &set(&[])).is_empty());
        // low-confidence inlier row falls below t_mask
        let p = ClassProbSet::new(1, 3, vec![0.29, 0.28, 0.27, 0.16]).unwrap();
        assert!(select_inlier_queries(&p, 0.3, &set(&[])).is_empty());
        // presets bypass the filter
        assert_eq!(select_inlier_queries(&p, 0.3, &set(&[0])), set(&[0]));
    }

    #[test]
    fn reject_fully_explained_pixel() {
        let b = bundle(1, 1, 1, 1, vec![1.0], vec![1.0, 0.0]);
        assert_eq!(reject_map(&b, &set(&[0])).unwrap().values(), &[0.0]);
    }

    #[test]
    fn reject_two_inliers() {
        let b = bundle(2, 1, 1, 1, vec![0.8, 0.3], vec![0.9, 0.1, 1.0, 0.0]);
        let r = reject_map(&b, &set(&[0, 1])).unwrap();
        assert!((r.values()[0] - 0.28).abs() < 1e-6);
    }

    #[test]
    fn reject_empty_set_is_one() {
        let b = bundle(1, 2, 3, 1, vec![0.4; 6], vec![1.0, 0.0]);
        assert_eq!(reject_map(&b, &set(&[])).unwrap().values(), &[1.0; 6]);
    }

    #[test]
    fn reject_uses_inlier_classes_only() {
        // void is the most probable class, but only inlier classes enter the product
        let b = bundle(1, 1, 1, 1, vec![1.0], vec![0.4, 0.6]);
        let r = reject_map(&b, &set(&[0])).unwrap();
        assert!((r.values()[0] - 0.6).abs() < 1e-6);
    }

    #[test]
    fn borders() {
        // pixel 0 is shared by both masks, pixel 1 only by mask 0
        let masks = SoftMaskSet::new(2, 1, 2, vec![0.9, 0.9, 0.5, 0.05]).unwrap();
        let reject = AnomalyMap::new(1, 2, vec![0.9, 0.4]).unwrap();
        let out = reject_borders(reject.clone(), &masks, &set(&[0, 1]), 0.1, 0.001).unwrap();
        assert_eq!(out.values(), &[0.001f32, 0.4]);
        let single = reject_borders(reject.clone(), &masks, &set(&[0]), 0.1, 0.001).unwrap();
        assert_eq!(single, reject);
    }

    #[test]
    fn borders_keep_lower_scores() {
        let masks = SoftMaskSet::new(2, 1, 1, vec![0.9, 0.9]).unwrap();
        let reject = AnomalyMap::new(1, 1, vec![0.0001]).unwrap();
        let out = reject_borders(reject, &masks, &set(&[0, 1]), 0.1, 0.001).unwrap();
        assert_eq!(out.values(), &[0.0001]);
    }

    #[test]
    fn borders_need_strict_threshold() {
        let masks = SoftMaskSet::new(2, 1, 1, vec![0.5, 0.5]).unwrap();
        let reject = AnomalyMap::new(1, 1, vec![0.7]).unwrap();
        let out = reject_borders(reject.clone(), &masks, &set(&[0, 1]), 0.5, 0.001).unwrap();
        assert_eq!(out, reject);
    }

    #[test]
    fn accept_cases() {
        let b = bundle(2, 1, 1, 1, vec![0.7, 0.5], vec![0.1, 0.9, 0.2, 0.8]);
        assert_eq!(accept_map(&b, &set(&[])).unwrap().values(), &[0.0]);
        let one = accept_map(&b, &set(&[0])).unwrap();
        assert!((one.values()[0] - 0.63).abs() < 1e-6);
        let both = accept_map(&b, &set(&[1, 0])).unwrap();
        assert!((both.values()[0] - 0.63).abs() < 1e-6);
    }

    #[test]
    fn combine_cases() {
        let r = AnomalyMap::new(1, 2, vec![0.5, 0.3]).unwrap();
        let a = AnomalyMap::new(1, 2, vec![1.0, 0.9]).unwrap();
        let c = combine(&r, &a, 0.6).unwrap();
        assert!((c.values()[0] - 0.7).abs() < 1e-6);
        assert_eq!(combine(&r, &a, 1.0).unwrap(), r);
        assert_eq!(combine(&r, &a, 0.0).unwrap(), a);
        let small = AnomalyMap::filled(1, 1, 0.0);
        assert!(matches!(
            combine(&r, &small, 0.5),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn invalid_toggles() {
        let b = bundle(1, 1, 1, 1, vec![0.5], vec![0.5, 0.5]);
        let off = Toggles {
            accept: false,
            reject: false,
            borders: true,
            init: true,
        };
        assert!(matches!(
            maskomaly(&b, &set(&[]), &set(&[]), &HyperParams::default(), off),
            Err(Error::InvalidToggles)
        ));
    }

    #[test]
    fn out_of_range_query_sets() {
        let b = bundle(1, 1, 1, 1, vec![0.5], vec![0.5, 0.5]);
        let h = HyperParams::default();
        assert!(matches!(
            maskomaly(&b, &set(&[1]), &set(&[]), &h, Toggles::FULL),
            Err(Error::IndexOutOfRange { index: 1, .. })
        ));
    }

    #[test]
    fn reject_only_scene_with_hole() {
        // a single confident inlier mask covering a 4x4 image except a 2x2 hole
        let mut m = vec![1.0f32; 16];
        for p in [5, 6, 9, 10] {
            m[p] = 0.0;
        }
        let b = bundle(1, 4, 4, 1, m, vec![1.0, 0.0]);
        let out = maskomaly(
            &b,
            &set(&[]),
            &set(&[]),
            &HyperParams::default(),
            Toggles::ablation(3).unwrap(),
        )
        .unwrap();
        for p in 0..16 {
            let expected = if [5, 6, 9, 10].contains(&p) { 1.0 } else { 0.0 };
            assert!((out.values()[p] - expected).abs() < 1e-6, "pixel {p}");
        }
    }

    #[test]
    fn ablation_table() {
        assert_eq!(Toggles::ablation(6), Some(Toggles::FULL));
        assert_eq!(Toggles::ablation(1), None);
        for id in Toggles::ABLATION_IDS {
            let t = Toggles::ablation(id).unwrap();
            assert!(t.accept || t.reject);
        }
    }

    #[test]
    fn baseline_cases() {
        // query 0 is void-classified, query 1 inlier-classified
        let p = vec![0.1, 0.9, 0.9, 0.1];
        let b = bundle(2, 1, 1, 1, vec![0.8, 0.1], p.clone());
        assert!((baseline_map(&b).values()[0] - 0.8).abs() < 1e-7);
        let b = bundle(2, 1, 1, 1, vec![0.1, 0.8], p.clone());
        assert!((baseline_map(&b).values()[0] - 0.2).abs() < 1e-7);
        let b = bundle(2, 1, 1, 1, vec![0.1, 1.0], p);
        assert_eq!(baseline_map(&b).values()[0], 0.0);
    }
}
