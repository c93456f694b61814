use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use maskomaly::heatmap::Scorer;
use maskomaly::io::{
    read_bundle, read_heatmap, read_labelmap, write_bundle, write_curve_csv, write_heatmap,
    write_labelmap, write_report, write_sweep_csv, write_toml, MiningReport, QuerySetFile, Report,
    ReportRow,
};
use maskomaly::metrics::{DatasetEvaluator, MetricSummary};
use maskomaly::mining::{
    iou_histogram, rank_sweep, select_anomalous_queries, select_ground_queries,
    specialized_queries, RegionIoUAccumulator,
};
use maskomaly::pipeline::{self, list_files, load_pairs, pair_with};
use maskomaly::synth::{random_bundle, synth_suite, AnomalyShape, SynthManifest, SynthSpec};
use maskomaly::QueryIndexSet;
use rayon::prelude::*;

use crate::settings::Settings;
use crate::Usage;

const BUNDLE_EXT: &str = "mkio";
const LABEL_EXT: &str = "pgm";

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// `(stem, path)` for a single bundle file or every bundle in a directory.
fn bundle_inputs(path: &Path) -> anyhow::Result<Vec<(String, PathBuf)>> {
    if path.is_dir() {
        return Ok(list_files(path, BUNDLE_EXT)?);
    }
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Usage(format!("{} has no file name", path.display())))?;
    Ok(vec![(stem.to_string(), path.to_path_buf())])
}

fn print_summary(name: &str, s: &MetricSummary) {
    let mdm: Vec<String> = s
        .mdm
        .iter()
        .map(|m| format!("mdm@{}={:.4}", m.margin, m.value))
        .collect();
    println!(
        "{name}: ap={:.4} fpr95={:.4} auroc={:.4} {} (images={}, positives={}, negatives={})",
        s.ap,
        s.fpr_at_tpr,
        s.auroc,
        mdm.join(" "),
        s.images,
        s.positives,
        s.negatives
    );
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// A bundle file or a directory of `.mkio` bundles.
    #[arg(long)]
    bundles: Option<PathBuf>,
    /// Query-set file from `mine`.
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Output directory for heatmaps.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn score(s: &Settings, a: ScoreArgs) -> anyhow::Result<()> {
    let bundles = s.path(a.bundles, |c| c.paths.bundles.as_ref(), "bundles")?;
    let out = s.path(a.out, |c| c.paths.heatmaps.as_ref(), "out")?;
    let scorer = s.scorer(s.queries(a.queries).as_deref())?;
    let inputs = bundle_inputs(&bundles)?;
    create_dir(&out)?;
    inputs
        .par_iter()
        .try_for_each(|(stem, path)| -> anyhow::Result<()> {
            let bundle = read_bundle(path)?;
            let map = scorer
                .score(&bundle)
                .with_context(|| format!("scoring {}", path.display()))?;
            write_heatmap(&map, out.join(format!("{stem}.{BUNDLE_EXT}")))?;
            Ok(())
        })?;
    println!("scored {} bundles into {}", inputs.len(), out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct MineArgs {
    #[arg(long)]
    bundles: Option<PathBuf>,
    /// Directory of ground-truth label maps.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Directory of road-region maps; enables ground-query initialization.
    #[arg(long)]
    road: Option<PathBuf>,
    /// Query-set file to write.
    #[arg(long)]
    out: PathBuf,
    /// Per-query report with IoUs, specialization, and histogram.
    #[arg(long)]
    report: Option<PathBuf>,
    /// IoU histogram bin edges.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0])]
    histogram_edges: Vec<f64>,
}

pub fn mine(s: &Settings, a: MineArgs) -> anyhow::Result<()> {
    let bundles = s.path(a.bundles, |c| c.paths.bundles.as_ref(), "bundles")?;
    let truth = s.path(a.truth, |c| c.paths.truth.as_ref(), "truth")?;
    let road = a.road.or_else(|| s.config.paths.road.clone());
    let pairs = pair_with(&bundle_inputs(&bundles)?, &truth, LABEL_EXT)?;
    if pairs.is_empty() {
        return Err(Usage(format!("no bundles in {}", bundles.display())).into());
    }
    let roads = match &road {
        Some(dir) => Some(pair_with(&bundle_inputs(&bundles)?, dir, LABEL_EXT)?),
        None => None,
    };

    let mut anomaly_acc: Option<RegionIoUAccumulator> = None;
    let mut road_acc: Option<RegionIoUAccumulator> = None;
    let mut probs = Vec::with_capacity(pairs.len());
    for (i, (_, bundle_path, truth_path)) in pairs.iter().enumerate() {
        let bundle = read_bundle(bundle_path)?;
        let n = bundle.n_queries();
        anomaly_acc
            .get_or_insert_with(|| RegionIoUAccumulator::new(n))
            .add(&bundle, &read_labelmap(truth_path)?)
            .with_context(|| format!("measuring {}", bundle_path.display()))?;
        if let Some(r) = &roads {
            road_acc
                .get_or_insert_with(|| RegionIoUAccumulator::new(n))
                .add(&bundle, &read_labelmap(&r[i].2)?)?;
        }
        probs.push(bundle.into_parts().1);
    }
    let hyper = &s.config.hyper;
    let report = anomaly_acc.expect("at least one image").finish();
    let anomalous = select_anomalous_queries(&report, hyper.t_iou);
    let preset = match road_acc {
        Some(acc) => select_ground_queries(&acc.finish(), hyper.t_ground),
        None => QueryIndexSet::empty(),
    };
    QuerySetFile::new(&anomalous, &report, &preset).write(&a.out)?;
    if let Some(path) = a.report {
        let spec = specialized_queries(&probs, hyper.t_query, hyper.eps_query)?;
        let hist = iou_histogram(&report, &a.histogram_edges)?;
        let mining = MiningReport::new(pairs.len(), &report, &spec, a.histogram_edges, hist);
        write_toml(&mining, path)?;
    }
    println!(
        "anomalous queries: {:?}; preset inlier queries: {:?}",
        anomalous.as_slice(),
        preset.as_slice()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Directory of precomputed heatmaps.
    #[arg(long, conflicts_with = "bundles")]
    heatmaps: Option<PathBuf>,
    /// Score these bundles instead of reading heatmaps.
    #[arg(long)]
    bundles: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Metrics report to write (TOML).
    #[arg(long)]
    out: Option<PathBuf>,
    /// PR/ROC operating points to write (CSV).
    #[arg(long)]
    curve: Option<PathBuf>,
}

pub fn eval(s: &Settings, a: EvalArgs) -> anyhow::Result<()> {
    let truth = s.path(a.truth, |c| c.paths.truth.as_ref(), "truth")?;
    let mut evaluator = DatasetEvaluator::new(s.config.eval.clone())?;
    let bundles = a.bundles.or_else(|| s.config.paths.bundles.clone());
    match (
        a.heatmaps.or_else(|| s.config.paths.heatmaps.clone()),
        bundles,
    ) {
        (Some(dir), _) => {
            for (_, map, labels) in pair_with(&list_files(&dir, BUNDLE_EXT)?, &truth, LABEL_EXT)? {
                evaluator.add(&read_heatmap(&map)?, &read_labelmap(&labels)?)?;
            }
        }
        (None, Some(dir)) => {
            let scorer = s.scorer(s.queries(a.queries).as_deref())?;
            let pairs = pair_with(&bundle_inputs(&dir)?, &truth, LABEL_EXT)?;
            for image in load_pairs(&pairs) {
                let (bundle, labels) = image?;
                evaluator.add(&scorer.score(&bundle)?, &labels)?;
            }
        }
        (None, None) => return Err(Usage("--heatmaps or --bundles is required".into()).into()),
    }
    let summary = evaluator.finish()?;
    print_summary("eval", &summary);
    if let Some(path) = a.out {
        let row = ReportRow {
            name: "eval".into(),
            ablation_id: None,
            n_queries: None,
            summary,
        };
        write_report(&Report::new("eval", vec![row]), path)?;
    }
    if let Some(path) = a.curve {
        write_curve_csv(&evaluator.curve(), path)?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    bundles: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn ablate(s: &Settings, a: AblateArgs) -> anyhow::Result<()> {
    let bundles = s.path(a.bundles, |c| c.paths.bundles.as_ref(), "bundles")?;
    let truth = s.path(a.truth, |c| c.paths.truth.as_ref(), "truth")?;
    let scorer = s.scorer(s.queries(a.queries).as_deref())?;
    let pairs = pair_with(&bundle_inputs(&bundles)?, &truth, LABEL_EXT)?;
    let rows = pipeline::ablate(load_pairs(&pairs), &scorer, &s.config.eval)?;
    for r in &rows {
        print_summary(&format!("{} {}", r.id, r.name), &r.summary);
    }
    if let Some(path) = a.out {
        let rows = rows
            .into_iter()
            .map(|r| ReportRow {
                name: r.name,
                ablation_id: Some(r.id),
                n_queries: None,
                summary: r.summary,
            })
            .collect();
        write_report(&Report::new("ablate", rows), path)?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    bundles: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Query-set file whose anomalous queries are ranked best first.
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Largest number of anomalous queries to try.
    #[arg(long, default_value_t = 16)]
    n_max: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sweep table to write (CSV).
    #[arg(long)]
    csv: Option<PathBuf>,
}

pub fn sweep(s: &Settings, a: SweepArgs) -> anyhow::Result<()> {
    let bundles = s.path(a.bundles, |c| c.paths.bundles.as_ref(), "bundles")?;
    let truth = s.path(a.truth, |c| c.paths.truth.as_ref(), "truth")?;
    let queries = s.path(a.queries, |c| c.paths.query_set.as_ref(), "queries")?;
    let scorer = s.scorer(Some(&queries))?;
    let pairs = pair_with(&bundle_inputs(&bundles)?, &truth, LABEL_EXT)?;
    let rows = rank_sweep(
        &scorer.anomalous,
        load_pairs(&pairs),
        &scorer,
        &s.config.eval,
        a.n_max,
    )?;
    for r in &rows {
        print_summary(&format!("n={}", r.n), &r.summary);
    }
    if let Some(path) = a.csv {
        write_sweep_csv(&rows, path)?;
    }
    if let Some(path) = a.out {
        let rows = rows
            .into_iter()
            .map(|r| ReportRow {
                name: format!("top{}", r.n),
                ablation_id: None,
                n_queries: Some(r.n),
                summary: r.summary,
            })
            .collect();
        write_report(&Report::new("sweep", rows), path)?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory; receives `bundles/`, `labels/`, `road/` and `manifest.toml`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    images: usize,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    inlier_queries: Option<usize>,
    #[arg(long)]
    anomaly_queries: Option<usize>,
    #[arg(long)]
    idle_queries: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long, value_enum, value_delimiter = ',')]
    shapes: Vec<ShapeArg>,
    #[arg(long)]
    size_min: Option<usize>,
    #[arg(long)]
    size_max: Option<usize>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum ShapeArg {
    Rect,
    Disc,
}

pub fn synth(s: &Settings, a: SynthArgs) -> anyhow::Result<()> {
    let d = SynthSpec::default();
    let spec = SynthSpec {
        height: a.height.unwrap_or(d.height),
        width: a.width.unwrap_or(d.width),
        n_classes: a.classes.unwrap_or(d.n_classes),
        n_inlier_queries: a.inlier_queries.unwrap_or(d.n_inlier_queries),
        n_anomaly_queries: a.anomaly_queries.unwrap_or(d.n_anomaly_queries),
        n_idle_queries: a.idle_queries.unwrap_or(d.n_idle_queries),
        anomaly_shapes: if a.shapes.is_empty() {
            d.anomaly_shapes
        } else {
            a.shapes
                .iter()
                .map(|s| match s {
                    ShapeArg::Rect => AnomalyShape::Rect,
                    ShapeArg::Disc => AnomalyShape::Disc,
                })
                .collect()
        },
        anomaly_size: [
            a.size_min.unwrap_or(d.anomaly_size[0]),
            a.size_max.unwrap_or(d.anomaly_size[1]),
        ],
        noise_level: a.noise.unwrap_or(d.noise_level),
    };
    let seed = s.config.seed.unwrap_or(0);
    let scenes = synth_suite(seed, &spec, a.images)?;
    let dirs = ["bundles", "labels", "road"].map(|d| a.out.join(d));
    for d in &dirs {
        create_dir(d)?;
    }
    scenes
        .par_iter()
        .enumerate()
        .try_for_each(|(i, scene)| -> anyhow::Result<()> {
            let stem = format!("img{i:04}");
            write_bundle(&scene.bundle, dirs[0].join(format!("{stem}.{BUNDLE_EXT}")))?;
            write_labelmap(&scene.truth, dirs[1].join(format!("{stem}.{LABEL_EXT}")))?;
            write_labelmap(&scene.road, dirs[2].join(format!("{stem}.{LABEL_EXT}")))?;
            Ok(())
        })?;
    write_toml(
        &SynthManifest::new(seed, &spec, &scenes),
        a.out.join("manifest.toml"),
    )?;
    println!("wrote {} scenes to {}", scenes.len(), a.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Bundle to time; a random bundle of the given shape otherwise.
    #[arg(long)]
    bundle: Option<PathBuf>,
    #[arg(long, default_value_t = 720)]
    height: usize,
    #[arg(long, default_value_t = 1280)]
    width: usize,
    #[arg(long, default_value_t = 100)]
    n_queries: usize,
    #[arg(long, default_value_t = 19)]
    classes: usize,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Timing report to write (TOML).
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn bench(s: &Settings, a: BenchArgs) -> anyhow::Result<()> {
    let bundle = match &a.bundle {
        Some(p) => read_bundle(p)?,
        None => random_bundle(
            s.config.seed.unwrap_or(0),
            a.n_queries,
            a.height,
            a.width,
            a.classes,
        )?,
    };
    let mut scorer: Scorer = s.scorer(s.queries(a.queries).as_deref())?;
    if scorer.anomalous.is_empty() {
        let void: Vec<usize> = (0..bundle.n_queries())
            .filter(|&n| !bundle.probs().is_inlier(n))
            .collect();
        scorer.anomalous = QueryIndexSet::new(void)?;
    }
    let r = pipeline::bench(&bundle, &scorer, a.reps)?;
    println!(
        "{}x{} N={} C={} threads={} reps={}: mean {:.2} ms, min {:.2} ms, max {:.2} ms",
        r.width,
        r.height,
        r.n_queries,
        r.n_classes,
        r.threads,
        r.repetitions,
        r.mean_ms,
        r.min_ms,
        r.max_ms
    );
    if let Some(p) = a.out {
        write_toml(&r, p)?;
    }
    Ok(())
}
