#![allow(dead_code)]

use maskomaly::Bundle;
use maskomaly_oracle::RawBundle;
use proptest::prelude::*;

pub fn raw(b: &Bundle) -> RawBundle<'_> {
    RawBundle {
        n: b.n_queries(),
        h: b.height(),
        w: b.width(),
        c: b.n_classes(),
        masks: b.masks().values(),
        probs: b.probs().values(),
    }
}

pub fn membership() -> impl Strategy<Value = f32> {
    prop_oneof![
        4 => 0.0f32..=1.0,
        1 => prop_oneof![Just(0.0f32), Just(1.0), Just(0.1), Just(0.5)],
    ]
}

pub fn class_row(c: usize) -> impl Strategy<Value = Vec<f32>> {
    (
        proptest::collection::vec(0.0f32..1.0, c + 1),
        0..=c,
        0.0f32..4.0,
    )
        .prop_map(|(mut w, top, boost)| {
            w[top] += boost;
            let sum: f32 = w.iter().sum();
            if sum == 0.0 {
                w[top] = 1.0;
                return w;
            }
            w.iter().map(|v| v / sum).collect()
        })
}

pub fn bundle() -> impl Strategy<Value = Bundle> {
    (1usize..7, 1usize..9, 1usize..9, 0usize..4).prop_flat_map(|(n, h, w, c)| {
        (
            proptest::collection::vec(membership(), n * h * w),
            proptest::collection::vec(class_row(c), n),
        )
            .prop_map(move |(m, rows)| Bundle::from_raw(n, h, w, c, m, rows.concat()).unwrap())
    })
}

pub fn subset(n: usize) -> impl Strategy<Value = Vec<usize>> {
    proptest::sample::subsequence((0..n).collect::<Vec<_>>(), 0..=n).prop_shuffle()
}

pub fn case() -> impl Strategy<Value = (Bundle, Vec<usize>, Vec<usize>)> {
    bundle().prop_flat_map(|b| {
        let n = b.n_queries();
        (Just(b), subset(n), subset(n))
    })
}
