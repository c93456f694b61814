//! Slow, literal reference implementations used to check the production
//! crate in tests.
//!
//! Everything here works on raw slices in `f64` and shares no code with
//! `maskomaly`. Loops follow the textbook definitions one to one: per-pair
//! border masks, operating points from a full sort, pair-counting AuROC.

/// Bundle arrays as stored on disk: masks query-major `n * h * w`, class
/// rows `n * (c + 1)` with void last.
#[derive(Debug, Clone, Copy)]
pub struct RawBundle<'a> {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub masks: &'a [f32],
    pub probs: &'a [f32],
}

impl RawBundle<'_> {
    fn m(&self, q: usize, px: usize) -> f64 {
        self.masks[q * self.h * self.w + px] as f64
    }

    fn p(&self, q: usize, l: usize) -> f64 {
        self.probs[q * (self.c + 1) + l] as f64
    }

    fn pixels(&self) -> usize {
        self.h * self.w
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NaiveConfig {
    pub t_mask: f64,
    pub t_border: f64,
    pub eps_border: f64,
    pub lambda: f64,
    pub accept: bool,
    pub reject: bool,
    pub borders: bool,
    pub init: bool,
}

fn first_argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Inlier set: the preset (if `init`) plus every query whose top class is
/// not void and has probability at least `t_mask`.
pub fn naive_inliers(b: &RawBundle, preset: &[usize], t_mask: f64, init: bool) -> Vec<usize> {
    let mut set: Vec<usize> = if init { preset.to_vec() } else { Vec::new() };
    for q in 0..b.n {
        let row: Vec<f64> = (0..=b.c).map(|l| b.p(q, l)).collect();
        let top = first_argmax(&row);
        if top != b.c && row[top] >= t_mask && !set.contains(&q) {
            set.push(q);
        }
    }
    set
}

pub fn naive_reject(b: &RawBundle, inliers: &[usize]) -> Vec<f64> {
    (0..b.pixels())
        .map(|px| {
            let mut o = 1.0f64;
            for &q in inliers {
                let best = (0..b.c).map(|l| b.p(q, l)).fold(0.0, f64::max);
                o = o.min(1.0 - b.m(q, px) * best);
            }
            o
        })
        .collect()
}

pub fn naive_borders(b: &RawBundle, reject: &mut [f64], inliers: &[usize], t_b: f64, eps: f64) {
    for (i, &k) in inliers.iter().enumerate() {
        for &n in &inliers[i + 1..] {
            for (px, o) in reject.iter_mut().enumerate() {
                let both = (b.m(k, px) > t_b && b.m(n, px) > t_b) as u8 as f64;
                let border = (1.0 - both + eps).min(1.0);
                *o = o.min(border);
            }
        }
    }
}

pub fn naive_accept(b: &RawBundle, anomalous: &[usize]) -> Vec<f64> {
    (0..b.pixels())
        .map(|px| {
            anomalous
                .iter()
                .map(|&q| b.m(q, px) * b.p(q, b.c))
                .fold(0.0, f64::max)
        })
        .collect()
}

/// The full scoring procedure with stage toggles. `None` when both the
/// accept and reject stages are off.
pub fn naive_maskomaly(
    b: &RawBundle,
    anomalous: &[usize],
    preset: &[usize],
    cfg: &NaiveConfig,
) -> Option<Vec<f64>> {
    if !cfg.accept && !cfg.reject {
        return None;
    }
    let accept = naive_accept(b, anomalous);
    if !cfg.reject {
        return Some(accept);
    }
    let inliers = naive_inliers(b, preset, cfg.t_mask, cfg.init);
    let mut reject = naive_reject(b, &inliers);
    if cfg.borders {
        naive_borders(b, &mut reject, &inliers, cfg.t_border, cfg.eps_border);
    }
    if !cfg.accept {
        return Some(reject);
    }
    Some(
        reject
            .iter()
            .zip(&accept)
            .map(|(r, a)| cfg.lambda * r + (1.0 - cfg.lambda) * a)
            .collect(),
    )
}

/// Per pixel: index of the query with the highest membership (lowest index on ties).
pub fn naive_dominant(b: &RawBundle) -> Vec<usize> {
    (0..b.pixels())
        .map(|px| {
            let col: Vec<f64> = (0..b.n).map(|q| b.m(q, px)).collect();
            first_argmax(&col)
        })
        .collect()
}

/// Baseline: membership of the dominant query if it is void-classified,
/// one minus it otherwise.
pub fn naive_baseline(b: &RawBundle) -> Vec<f64> {
    naive_dominant(b)
        .into_iter()
        .enumerate()
        .map(|(px, q)| {
            let row: Vec<f64> = (0..=b.c).map(|l| b.p(q, l)).collect();
            let m = b.m(q, px);
            if first_argmax(&row) == b.c {
                m
            } else {
                1.0 - m
            }
        })
        .collect()
}

/// Per-query average IoU of dominant regions with label-1 pixels over images.
///
/// Labels are 0, 1 or 255 (ignored). An image is skipped for a query when
/// both its region and the target are empty.
pub fn naive_region_iou(images: &[(RawBundle, &[u8])]) -> (Vec<f64>, Vec<usize>) {
    let n = images[0].0.n;
    let mut sums = vec![0.0; n];
    let mut counts = vec![0; n];
    for (b, labels) in images {
        let dom = naive_dominant(b);
        for q in 0..n {
            let mut inter = 0usize;
            let mut union = 0usize;
            for px in 0..b.pixels() {
                if labels[px] == 255 {
                    continue;
                }
                let a = dom[px] == q;
                let t = labels[px] == 1;
                inter += (a && t) as usize;
                union += (a || t) as usize;
            }
            if union > 0 {
                sums[q] += inter as f64 / union as f64;
                counts[q] += 1;
            }
        }
    }
    let ious = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect();
    (ious, counts)
}

/// Every operating point `score >= t` for `t` over the distinct scores,
/// highest first, as `(tp, fp)` counts.
fn operating_points(scores: &[f32], labels: &[bool]) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(f64, bool)> = scores
        .iter()
        .map(|&s| s as f64)
        .zip(labels.iter().copied())
        .collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (i, &(s, l)) in pairs.iter().enumerate() {
        if l {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_threshold = i + 1 == pairs.len() || pairs[i + 1].0 != s;
        if last_of_threshold {
            points.push((tp, fp));
        }
    }
    points
}

/// Step-wise area under the precision-recall curve: the sum over operating
/// points of recall gain times precision. `None` without positives.
pub fn brute_average_precision(scores: &[f32], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 {
        return None;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (tp, fp) in operating_points(scores, labels) {
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Some(ap)
}

/// Fraction of (positive, negative) pairs ranked correctly, ties counting half.
pub fn brute_auroc(scores: &[f32], labels: &[bool]) -> Option<f64> {
    let pos: Vec<f32> = scores
        .iter()
        .zip(labels)
        .filter(|p| *p.1)
        .map(|p| *p.0)
        .collect();
    let neg: Vec<f32> = scores
        .iter()
        .zip(labels)
        .filter(|p| !*p.1)
        .map(|p| *p.0)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut wins = 0.0f64;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    Some(wins / (pos.len() as f64 * neg.len() as f64))
}

/// FPR at the first operating point (highest threshold) whose TPR reaches `target`.
pub fn brute_fpr_at_tpr(scores: &[f32], labels: &[bool], target: f64) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    operating_points(scores, labels)
        .into_iter()
        .find(|&(tp, _)| tp as f64 / pos as f64 >= target)
        .map(|(_, fp)| fp as f64 / neg as f64)
}

/// F1 of `score > t` against positives; 0 when there is no true positive.
pub fn brute_f1(scores: &[f32], labels: &[bool], t: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s as f64 > t, l) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            _ => {}
        }
    }
    if tp == 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fn_)
    }
}

/// Longest run of grid thresholds `k / K`, `0 < k < K`, with F1 above
/// `margin`, divided by `K`.
pub fn brute_mdm(scores: &[f32], labels: &[bool], margin: f64, grid: usize) -> f64 {
    let mut best = 0;
    let mut run = 0;
    for k in 1..grid {
        if brute_f1(scores, labels, k as f64 / grid as f64) > margin {
            run += 1;
            best = best.max(run);
        } else {
            run = 0;
        }
    }
    best as f64 / grid as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_spot_checks() {
        let s = [0.9f32, 0.8, 0.7, 0.6];
        let l = [true, false, true, false];
        assert_eq!(
            brute_average_precision(&s, &l),
            Some((1.0 + 2.0 / 3.0) / 2.0)
        );
        assert_eq!(brute_auroc(&s, &l), Some(0.75));
        assert_eq!(brute_fpr_at_tpr(&s, &l, 0.95), Some(0.5));
        assert_eq!(brute_auroc(&[0.5, 0.5], &[true, false]), Some(0.5));
        assert_eq!(brute_average_precision(&s, &[false; 4]), None);
    }

    #[test]
    fn scoring_spot_check() {
        // two inlier queries overlapping on pixel 1, one anomaly query on pixel 3
        let masks = [
            0.9, 0.5, 0.0, 0.0, 0.0, 0.5, 0.9, 0.0, 0.0, 0.0, 0.0, 1.0f32,
        ];
        let probs = [0.9, 0.1, 0.9, 0.1, 0.2, 0.8f32];
        let b = RawBundle {
            n: 3,
            h: 1,
            w: 4,
            c: 1,
            masks: &masks,
            probs: &probs,
        };
        let cfg = NaiveConfig {
            t_mask: 0.3,
            t_border: 0.1,
            eps_border: 0.001,
            lambda: 1.0,
            accept: false,
            reject: true,
            borders: true,
            init: false,
        };
        let o = naive_maskomaly(&b, &[2], &[], &cfg).unwrap();
        assert!((o[0] - 0.19).abs() < 1e-7);
        assert_eq!(o[1], 0.001);
        assert_eq!(o[3], 1.0);
    }
}
