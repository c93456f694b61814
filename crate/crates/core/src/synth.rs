//! Synthetic scenes with known anomalous and inlier queries.
//!
//! A scene has three kinds of query. Inlier queries tile the upper part of
//! the image in vertical strips with a confident inlier class; neighboring
//! strips overlap on a one-pixel band. A ground query covers the bottom third
//! with an ambiguous class row (void narrowly ahead of the road class), which
//! is what ground-query initialization is for. Anomaly queries each cover one
//! planted object with high membership and a void-dominant class row. The
//! remaining queries are idle: near-zero everywhere.
//!
//! All planted objects in one image share a shape kind and extent, so at zero
//! noise each anomaly query has average IoU exactly `1 / n_anomaly_queries`
//! with the anomaly pixels and every other query has IoU 0.
//!
//! Query roles are a permutation drawn from the seed, so the planted indices
//! are not simply the first ones. Every image of a suite shares the roles.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Bundle, Label, LabelMap, QueryIndexSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnomalyShape {
    Rect,
    Disc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub height: usize,
    pub width: usize,
    /// Inlier classes; the void class comes on top.
    pub n_classes: usize,
    pub n_inlier_queries: usize,
    pub n_anomaly_queries: usize,
    pub n_idle_queries: usize,
    /// Shape kinds an image may use.
    pub anomaly_shapes: Vec<AnomalyShape>,
    /// Inclusive range of the bounding-box side, in pixels.
    pub anomaly_size: [usize; 2],
    /// Memberships are perturbed by uniform noise in `[-noise_level, noise_level]`.
    pub noise_level: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            height: 96,
            width: 160,
            n_classes: 8,
            n_inlier_queries: 6,
            n_anomaly_queries: 3,
            n_idle_queries: 4,
            anomaly_shapes: vec![AnomalyShape::Rect, AnomalyShape::Disc],
            anomaly_size: [8, 16],
            noise_level: 0.0,
        }
    }
}

impl SynthSpec {
    pub fn n_queries(&self) -> usize {
        self.n_inlier_queries + 1 + self.n_anomaly_queries + self.n_idle_queries
    }

    fn ground_rows(&self) -> usize {
        if self.n_inlier_queries == 0 {
            self.height
        } else {
            (self.height / 3).max(1)
        }
    }

    fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InfeasibleSpec(m.to_string()));
        if self.height == 0 || self.width == 0 {
            return bad("image dimensions must be positive");
        }
        if self.n_classes == 0 {
            return bad("need at least one inlier class");
        }
        if self.n_queries() > self.height * self.width {
            return bad("more queries than pixels");
        }
        if self.n_inlier_queries > 0 {
            if self.height < 3 {
                return bad("inlier strips need at least three rows");
            }
            if self.width < 2 * self.n_inlier_queries {
                return bad("inlier strips need at least two columns each");
            }
        }
        if self.n_anomaly_queries > 0 {
            let [lo, hi] = self.anomaly_size;
            if lo == 0 {
                return bad("zero-area anomaly shapes");
            }
            if lo > hi || hi > self.height.min(self.width) {
                return bad("anomaly size range does not fit the image");
            }
            if self.anomaly_shapes.is_empty() {
                return bad("no anomaly shapes to choose from");
            }
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            return bad("noise level must lie in [0, 1]");
        }
        Ok(())
    }
}

/// One generated image together with its planted answers.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub bundle: Bundle,
    pub truth: LabelMap,
    /// Road region (label 1) for ground-query initialization.
    pub road: LabelMap,
    /// Planted anomalous queries, ascending.
    pub anomalous: QueryIndexSet,
    /// Planted inlier strip queries, ascending.
    pub inliers: QueryIndexSet,
    /// The ambiguous ground query.
    pub ground: QueryIndexSet,
}

struct Roles {
    inlier: Vec<usize>,
    ground: usize,
    anomaly: Vec<usize>,
    idle: Vec<usize>,
}

impl Roles {
    fn draw(spec: &SynthSpec, seed: u64) -> Self {
        let mut order: Vec<usize> = (0..spec.n_queries()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (inlier, rest) = order.split_at(spec.n_inlier_queries);
        let (ground, rest) = rest.split_first().unwrap();
        let (anomaly, idle) = rest.split_at(spec.n_anomaly_queries);
        Self {
            inlier: inlier.to_vec(),
            ground: *ground,
            anomaly: anomaly.to_vec(),
            idle: idle.to_vec(),
        }
    }

    fn set(v: &[usize]) -> QueryIndexSet {
        let mut v = v.to_vec();
        v.sort_unstable();
        QueryIndexSet::new(v).unwrap()
    }
}

const HIGH: f32 = 0.97;
const ANOMALY_HIGH: f32 = 0.98;
const LOW: f32 = 0.01;
const IDLE: f32 = 0.005;
const BAND: f32 = 0.5;

/// Class row with `p` on `class` and the rest spread evenly over the others.
fn peaked_row(n_classes: usize, class: usize, p: f32) -> Vec<f32> {
    let rest = (1.0 - p) / n_classes as f32;
    (0..=n_classes)
        .map(|l| if l == class { p } else { rest })
        .collect()
}

fn ground_row(n_classes: usize) -> Vec<f32> {
    let mut row = vec![0.0f32; n_classes + 1];
    row[n_classes] = 0.52;
    if n_classes == 1 {
        row[0] = 0.48;
    } else {
        row[0] = 0.43;
        for v in &mut row[1..n_classes] {
            *v = 0.05 / (n_classes - 1) as f32;
        }
    }
    row
}

struct Placed {
    top: usize,
    left: usize,
    size: usize,
}

impl Placed {
    fn separated(&self, o: &Placed) -> bool {
        self.top + self.size < o.top
            || o.top + o.size < self.top
            || self.left + self.size < o.left
            || o.left + o.size < self.left
    }

    fn contains(&self, shape: AnomalyShape, r: usize, c: usize) -> bool {
        if r < self.top || c < self.left || r >= self.top + self.size || c >= self.left + self.size
        {
            return false;
        }
        match shape {
            AnomalyShape::Rect => true,
            AnomalyShape::Disc => {
                let center = (self.size as f64 - 1.0) / 2.0;
                let dy = (r - self.top) as f64 - center;
                let dx = (c - self.left) as f64 - center;
                dy * dy + dx * dx <= (self.size as f64 / 2.0).powi(2)
            }
        }
    }
}

const PLACEMENT_ATTEMPTS: usize = 1000;

fn render(spec: &SynthSpec, roles: &Roles, rng: &mut ChaCha8Rng) -> Result<SynthScene> {
    let (h, w, c) = (spec.height, spec.width, spec.n_classes);
    let hw = h * w;
    let mut masks = vec![0f32; spec.n_queries() * hw];
    let mut set_query = |q: usize, f: &dyn Fn(usize, usize) -> f32| {
        for r in 0..h {
            for col in 0..w {
                masks[q * hw + r * w + col] = f(r, col);
            }
        }
    };

    let ground_top = h - spec.ground_rows();
    let n_in = spec.n_inlier_queries;
    let strip = |col: usize| col * n_in / w;
    let strip_start = |j: usize| (j * w).div_ceil(n_in);
    for (j, &q) in roles.inlier.iter().enumerate() {
        set_query(q, &|r, col| {
            let s = strip(col);
            let on_boundary_col = s > 0 && col == strip_start(s);
            if r < ground_top {
                if s == j {
                    if on_boundary_col {
                        BAND
                    } else {
                        HIGH
                    }
                } else if on_boundary_col && s == j + 1 {
                    BAND
                } else {
                    LOW
                }
            } else if r == ground_top && s == j {
                BAND
            } else {
                LOW
            }
        });
    }
    let ground_band = n_in > 0;
    set_query(roles.ground, &|r, _| match r {
        r if r < ground_top => LOW,
        r if r == ground_top && ground_band => BAND,
        _ => HIGH,
    });
    for &q in &roles.idle {
        set_query(q, &|_, _| IDLE);
    }

    let mut truth = vec![Label::INLIER; hw];
    if !roles.anomaly.is_empty() {
        let shape = spec.anomaly_shapes[rng.random_range(0..spec.anomaly_shapes.len())];
        let size = rng.random_range(spec.anomaly_size[0]..=spec.anomaly_size[1]);
        let mut placed: Vec<Placed> = Vec::new();
        for _ in &roles.anomaly {
            let mut found = None;
            for _ in 0..PLACEMENT_ATTEMPTS {
                let p = Placed {
                    top: rng.random_range(0..=h - size),
                    left: rng.random_range(0..=w - size),
                    size,
                };
                if placed.iter().all(|o| p.separated(o)) {
                    found = Some(p);
                    break;
                }
            }
            placed.push(found.ok_or_else(|| {
                Error::InfeasibleSpec("could not place non-overlapping anomalies".into())
            })?);
        }
        for (p, &q) in placed.iter().zip(&roles.anomaly) {
            for r in p.top..p.top + size {
                for col in p.left..p.left + size {
                    if !p.contains(shape, r, col) {
                        continue;
                    }
                    let px = r * w + col;
                    truth[px] = Label::ANOMALY;
                    for n in 0..spec.n_queries() {
                        let v = &mut masks[n * hw + px];
                        *v = if n == q { ANOMALY_HIGH } else { v.min(LOW) };
                    }
                }
            }
        }
        for &q in &roles.anomaly {
            for (v, &l) in masks[q * hw..(q + 1) * hw].iter_mut().zip(&truth) {
                if l != Label::ANOMALY {
                    *v = LOW;
                }
            }
        }
    }

    if spec.noise_level > 0.0 {
        let a = spec.noise_level as f32;
        for v in &mut masks {
            *v = (*v + rng.random_range(-a..=a)).clamp(0.0, 1.0);
        }
    }

    let mut probs = vec![0f32; spec.n_queries() * (c + 1)];
    let mut put =
        |q: usize, row: Vec<f32>| probs[q * (c + 1)..(q + 1) * (c + 1)].copy_from_slice(&row);
    for (j, &q) in roles.inlier.iter().enumerate() {
        put(q, peaked_row(c, j % c, 0.95));
    }
    put(roles.ground, ground_row(c));
    for &q in &roles.anomaly {
        put(q, peaked_row(c, c, 0.95));
    }
    for &q in &roles.idle {
        put(q, vec![1.0 / (c + 1) as f32; c + 1]);
    }

    let road = (0..hw)
        .map(|px| if px / w >= ground_top { 1 } else { 0 })
        .collect();
    Ok(SynthScene {
        bundle: Bundle::from_raw(spec.n_queries(), h, w, c, masks, probs)?,
        truth: LabelMap::new(h, w, truth)?,
        road: LabelMap::new(h, w, road)?,
        anomalous: Roles::set(&roles.anomaly),
        inliers: Roles::set(&roles.inlier),
        ground: Roles::set(&[roles.ground]),
    })
}

/// Planted answers of a generated suite, written next to its files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthManifest {
    pub schema: String,
    pub seed: u64,
    pub images: usize,
    pub spec: SynthSpec,
    pub anomalous: Vec<usize>,
    pub inliers: Vec<usize>,
    pub ground: Vec<usize>,
}

pub const SYNTH_SCHEMA: &str = "maskomaly.synth/1";

impl SynthManifest {
    pub fn new(seed: u64, spec: &SynthSpec, scenes: &[SynthScene]) -> Self {
        let first = scenes.first();
        let list = |f: fn(&SynthScene) -> &QueryIndexSet| {
            first.map(|s| f(s).as_slice().to_vec()).unwrap_or_default()
        };
        Self {
            schema: SYNTH_SCHEMA.to_string(),
            seed,
            images: scenes.len(),
            spec: spec.clone(),
            anomalous: list(|s| &s.anomalous),
            inliers: list(|s| &s.inliers),
            ground: list(|s| &s.ground),
        }
    }
}

/// Unstructured bundle for timing: each query covers a random rectangle with
/// high membership, and most class rows are confident inlier rows.
pub fn random_bundle(seed: u64, n: usize, h: usize, w: usize, c: usize) -> Result<Bundle> {
    if n == 0 || h == 0 || w == 0 {
        return Err(Error::InfeasibleSpec(
            "bundle dimensions must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hw = h * w;
    let mut masks = vec![0f32; n * hw];
    for q in 0..n {
        let rh = rng.random_range(1..=h.div_ceil(3));
        let rw = rng.random_range(1..=w.div_ceil(3));
        let top = rng.random_range(0..=h - rh);
        let left = rng.random_range(0..=w - rw);
        let plane = &mut masks[q * hw..(q + 1) * hw];
        for (px, v) in plane.iter_mut().enumerate() {
            let (r, col) = (px / w, px % w);
            let inside = (top..top + rh).contains(&r) && (left..left + rw).contains(&col);
            *v = if inside {
                rng.random_range(0.85..=1.0)
            } else {
                rng.random_range(0.0..0.05)
            };
        }
    }
    let mut probs = Vec::with_capacity(n * (c + 1));
    for _ in 0..n {
        let row = if c == 0 {
            vec![1.0]
        } else if rng.random_bool(0.85) {
            peaked_row(c, rng.random_range(0..c), rng.random_range(0.9..1.0))
        } else {
            peaked_row(c, c, rng.random_range(0.5..1.0))
        };
        probs.extend(row);
    }
    Bundle::from_raw(n, h, w, c, masks, probs)
}

/// One deterministic scene; roles and geometry both follow `seed`.
pub fn synth_generate(seed: u64, spec: &SynthSpec) -> Result<SynthScene> {
    spec.check()?;
    let roles = Roles::draw(spec, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    render(spec, &roles, &mut rng)
}

/// `n_images` scenes sharing query roles, with independent geometry.
pub fn synth_suite(seed: u64, spec: &SynthSpec, n_images: usize) -> Result<Vec<SynthScene>> {
    spec.check()?;
    let roles = Roles::draw(spec, seed);
    (0..n_images)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            render(spec, &roles, &mut rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heatmap::select_inlier_queries;
    use crate::mining::{ground_query_init, query_anomaly_iou, select_anomalous_queries};

    #[test]
    fn deterministic() {
        let s = SynthSpec::default();
        assert_eq!(
            synth_generate(3, &s).unwrap(),
            synth_generate(3, &s).unwrap()
        );
        assert_ne!(
            synth_generate(3, &s).unwrap().bundle,
            synth_generate(4, &s).unwrap().bundle
        );
        let suite = synth_suite(3, &s, 2).unwrap();
        assert_eq!(suite[0], synth_generate(3, &s).unwrap());
        assert_ne!(suite[0].truth, suite[1].truth);
        assert_eq!(suite[0].anomalous, suite[1].anomalous);
    }

    #[test]
    fn no_anomaly_queries_means_no_anomalies() {
        let s = SynthSpec {
            n_anomaly_queries: 0,
            ..SynthSpec::default()
        };
        let scene = synth_generate(1, &s).unwrap();
        assert_eq!(scene.truth.count(Label::ANOMALY), 0);
        assert!(scene.anomalous.is_empty());
    }

    #[test]
    fn infeasible() {
        let tiny = SynthSpec {
            height: 2,
            width: 2,
            ..SynthSpec::default()
        };
        assert!(matches!(
            synth_generate(0, &tiny),
            Err(Error::InfeasibleSpec(_))
        ));
        let zero = SynthSpec {
            anomaly_size: [0, 4],
            ..SynthSpec::default()
        };
        assert!(matches!(
            synth_generate(0, &zero),
            Err(Error::InfeasibleSpec(_))
        ));
        let crowded = SynthSpec {
            height: 24,
            width: 24,
            n_inlier_queries: 2,
            n_anomaly_queries: 6,
            anomaly_size: [12, 12],
            ..SynthSpec::default()
        };
        assert!(matches!(
            synth_generate(0, &crowded),
            Err(Error::InfeasibleSpec(_))
        ));
    }

    #[test]
    fn planted_sets_are_recovered() {
        let s = SynthSpec::default();
        let suite = synth_suite(11, &s, 6).unwrap();
        let bundles: Vec<_> = suite.iter().map(|x| x.bundle.clone()).collect();
        let truths: Vec<_> = suite.iter().map(|x| x.truth.clone()).collect();
        let roads: Vec<_> = suite.iter().map(|x| x.road.clone()).collect();
        let report = query_anomaly_iou(&bundles, &truths).unwrap();
        for q in 0..s.n_queries() {
            let expected = if suite[0].anomalous.contains(q) {
                1.0 / 3.0
            } else {
                0.0
            };
            assert!(
                (report.ious[q] - expected).abs() < 1e-12,
                "query {q}: {}",
                report.ious[q]
            );
        }
        let mut mined = select_anomalous_queries(&report, 0.25).sorted();
        mined.sort_unstable();
        assert_eq!(mined, suite[0].anomalous.as_slice());
        assert_eq!(
            ground_query_init(&bundles, &roads, 0.3).unwrap(),
            suite[0].ground
        );
        let auto = select_inlier_queries(bundles[0].probs(), 0.3, &QueryIndexSet::empty());
        assert_eq!(auto.sorted(), suite[0].inliers.as_slice());
    }

    #[test]
    fn noise_stays_in_range() {
        let s = SynthSpec {
            noise_level: 0.2,
            ..SynthSpec::default()
        };
        let scene = synth_generate(5, &s).unwrap();
        assert!(scene
            .bundle
            .masks()
            .values()
            .iter()
            .all(|v| (0.0..=1.0).contains(v)));
    }
}
