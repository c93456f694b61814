//! Dataset-level drivers: file pairing, ablation, and timing.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heatmap::{baseline_map, Scorer, Toggles};
use crate::io::{read_bundle, read_labelmap};
use crate::metrics::{DatasetEvaluator, EvalOptions, MetricSummary};
use crate::model::{Bundle, LabelMap};

/// Files in `dir` with extension `ext`, as `(stem, path)` sorted by stem.
pub fn list_files(dir: &Path, ext: &str) -> Result<Vec<(String, PathBuf)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == ext) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path.clone()));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Pairs every file of `primary` with the file of the same stem in `dir`.
pub fn pair_with(
    primary: &[(String, PathBuf)],
    dir: &Path,
    ext: &str,
) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    primary
        .iter()
        .map(|(stem, p)| {
            let other = dir.join(format!("{stem}.{ext}"));
            if other.is_file() {
                Ok((stem.clone(), p.clone(), other))
            } else {
                Err(Error::Config {
                    path: other,
                    message: format!("no counterpart for {}", p.display()),
                })
            }
        })
        .collect()
}

/// Lazily loads `(bundle, label map)` pairs.
pub fn load_pairs(
    pairs: &[(String, PathBuf, PathBuf)],
) -> impl Iterator<Item = Result<(Bundle, LabelMap)>> + '_ {
    pairs
        .iter()
        .map(|(_, b, l)| Ok((read_bundle(b)?, read_labelmap(l)?)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub id: u8,
    pub name: String,
    /// `None` for the baseline.
    pub toggles: Option<Toggles>,
    pub summary: MetricSummary,
}

fn ablation_name(id: u8) -> &'static str {
    match id {
        1 => "baseline",
        2 => "accept",
        3 => "reject",
        4 => "reject+borders",
        5 => "reject+borders+accept",
        6 => "full",
        _ => unreachable!(),
    }
}

/// Evaluates the baseline (id 1) and the toggle configurations 2 to 6.
///
/// Hyperparameters and query sets come from `scorer`; its toggles are
/// ignored. Images are loaded once and scored under every configuration.
pub fn ablate<I>(images: I, scorer: &Scorer, eval: &EvalOptions) -> Result<Vec<AblationRow>>
where
    I: IntoIterator<Item = Result<(Bundle, LabelMap)>>,
{
    let configs: Vec<(u8, Option<Scorer>)> = std::iter::once((1, None))
        .chain(Toggles::ABLATION_IDS.iter().map(|&id| {
            let t = Toggles::ablation(id).expect("known id");
            (id, Some(scorer.with_toggles(t)))
        }))
        .collect();
    let mut evals = configs
        .iter()
        .map(|_| DatasetEvaluator::new(eval.clone()))
        .collect::<Result<Vec<_>>>()?;
    for image in images {
        let (bundle, truth) = image?;
        for ((_, s), e) in configs.iter().zip(evals.iter_mut()) {
            let map = match s {
                Some(s) => s.score(&bundle)?,
                None => baseline_map(&bundle),
            };
            e.add(&map, &truth)?;
        }
    }
    configs
        .iter()
        .zip(&evals)
        .map(|((id, s), e)| {
            Ok(AblationRow {
                id: *id,
                name: ablation_name(*id).to_string(),
                toggles: s.as_ref().map(|s| s.toggles),
                summary: e.finish()?,
            })
        })
        .collect()
}

/// Wall-clock timing of [`Scorer::score`] on one bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub height: usize,
    pub width: usize,
    pub n_queries: usize,
    pub n_classes: usize,
    pub repetitions: usize,
    pub threads: usize,
    pub mean_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

/// Times `repetitions` scoring runs after one untimed warm-up run.
pub fn bench(bundle: &Bundle, scorer: &Scorer, repetitions: usize) -> Result<BenchResult> {
    if repetitions == 0 {
        return Err(Error::InvalidHyperParams(
            "bench needs at least one repetition".into(),
        ));
    }
    scorer.score(bundle)?;
    let mut times = Vec::with_capacity(repetitions);
    for _ in 0..repetitions {
        let start = Instant::now();
        std::hint::black_box(scorer.score(std::hint::black_box(bundle))?);
        times.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(BenchResult {
        height: bundle.height(),
        width: bundle.width(),
        n_queries: bundle.n_queries(),
        n_classes: bundle.n_classes(),
        repetitions,
        threads: rayon::current_num_threads(),
        mean_ms: times.iter().sum::<f64>() / repetitions as f64,
        min_ms: times.iter().copied().fold(f64::INFINITY, f64::min),
        max_ms: times.iter().copied().fold(0.0, f64::max),
    })
}
