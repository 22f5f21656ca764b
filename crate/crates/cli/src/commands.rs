use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;

use owp_core::annotations::{load_annotations, write_annotations, AnnotationSet, ImageInfo};
use owp_core::assign::{assign_targets, compute_iou_targets, make_grids, AssignmentResult};
use owp_core::config::{load_config, Config};
use owp_core::densefile::{read_dense_maps, write_dense_maps};
use owp_core::eval::{build_split, coco_taxonomy, evaluate, score_histogram, ClassSplit, SplitRule, Task};
use owp_core::maps::{DensePredictions, LevelPredictions};
use owp_core::masking::{objectness_maps, unknown_area_mask, unknown_object_mask, MaskVariant, ObjectnessSource};
use owp_core::proposals::{run_pipeline, Proposal, ScoringMode};
use owp_core::results::{read_proposals, write_proposals};
use owp_core::sampling::{build_objectness_training_set, sample_balance_stats, SamplingMode};
use owp_core::synth::{random_annotations, synthesize_predictions};

use crate::{AssignArgs, EvalArgs, HistArgs, MaskStatsArgs, SampleStatsArgs, ScoreArgs, SynthArgs};

/// Problem with the command line itself (exit code 2).
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<owp_core::Error>() {
            return if e.is_input_error() { 2 } else { 1 };
        }
        if cause.is::<UsageError>() || cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return 2;
        }
    }
    1
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    if jobs == Some(0) {
        return Err(usage("--jobs must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .context("building worker pool")?;
    Ok(pool.install(f))
}

fn config_from(path: Option<&Path>) -> Result<Config> {
    Ok(match path {
        Some(p) => load_config(p)?,
        None => Config::default(),
    })
}

fn parse<T>(s: &str) -> Result<T>
where
    T: std::str::FromStr<Err = owp_core::Error>,
{
    Ok(s.parse::<T>()?)
}

fn image<'a>(set: &'a AnnotationSet, id: u64, path: &Path) -> Result<&'a ImageInfo> {
    set.image(id)
        .ok_or_else(|| usage(format!("{}: no image with id {id}", path.display())))
}

fn assignment_for(set: &AnnotationSet, info: &ImageInfo, config: &Config) -> Result<AssignmentResult> {
    let levels = config.levels()?;
    let grids = make_grids(info.height as usize, info.width as usize, &levels);
    Ok(assign_targets(&set.boxes_for(info.id), &levels, &grids, config.center_radius)?)
}

/// `(image_id, path)` pairs for a dense-map file or a directory of
/// `<image_id>.owpd` files, sorted by id.
fn pred_files(path: &Path, image_id: Option<u64>) -> Result<Vec<(u64, PathBuf)>> {
    let meta = fs::metadata(path).with_context(|| format!("reading {}", path.display()))?;
    if !meta.is_dir() {
        let id = match image_id {
            Some(id) => id,
            None => stem_id(path).ok_or_else(|| {
                usage(format!(
                    "cannot infer an image id from {}; pass --image-id",
                    path.display()
                ))
            })?,
        };
        return Ok(vec![(id, path.to_path_buf())]);
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(path).with_context(|| format!("listing {}", path.display()))? {
        let p = entry?.path();
        if p.extension().is_some_and(|e| e == "owpd") {
            match stem_id(&p) {
                Some(id) if image_id.is_none_or(|want| want == id) => files.push((id, p)),
                Some(_) => {}
                None => log::warn!("skipping {}: file name is not an image id", p.display()),
            }
        }
    }
    if files.is_empty() {
        return Err(usage(format!("no <image_id>.owpd files in {}", path.display())));
    }
    files.sort();
    Ok(files)
}

fn stem_id(path: &Path) -> Option<u64> {
    path.file_stem()?.to_str()?.parse().ok()
}

pub fn assign(args: AssignArgs) -> Result<()> {
    let mut config = config_from(args.config.as_deref())?;
    if let Some(r) = args.center_radius {
        config.center_radius = r;
    }
    config.validate()?;
    let set = load_annotations(&args.annotations)?;
    let info = image(&set, args.image_id, &args.annotations)?;
    let assignment = assignment_for(&set, info, &config)?;

    let levels = assignment
        .levels
        .iter()
        .map(|la| {
            let g = la.grid;
            let mut level = LevelPredictions::zeros(g.stride, g.height, g.width, 2);
            for (i, cell) in la.cells.iter().enumerate() {
                if let Some(fg) = cell {
                    level.classification[2 * i] = 1.0;
                    level.classification[2 * i + 1] = if fg.center_sampled { 1.0 } else { 0.0 };
                    level.regression[i] = fg.regression.to_array().map(|v| v as f32);
                    level.centerness[i] = fg.centerness as f32;
                }
            }
            level
        })
        .collect();
    write_dense_maps(&args.out, &DensePredictions { levels })?;

    let total = assignment.total_locations();
    let fg = assignment.foreground_count();
    println!("image {}", info.id);
    println!("boxes {}", set.boxes_for(info.id).len());
    println!("locations {total}");
    println!("foreground {fg}");
    println!("background {}", total - fg);
    println!("center_sampled {}", assignment.center_sampled_count());
    Ok(())
}

pub fn sample_stats(args: SampleStatsArgs) -> Result<()> {
    let mut config = config_from(args.config.as_deref())?;
    if let Some(m) = &args.mode {
        config.sampling_mode = parse::<SamplingMode>(m)?;
    }
    if let Some(v) = args.positive_cut {
        config.positive_cut = v;
    }
    if let Some(v) = args.iou_sampling_threshold {
        config.iou_sampling_threshold = v;
    }
    if let Some(v) = args.center_radius {
        config.center_radius = v;
    }
    config.validate()?;
    let set = load_annotations(&args.annotations)?;
    let info = image(&set, args.image_id, &args.annotations)?;
    let assignment = assignment_for(&set, info, &config)?;

    let targets = match args.branch.as_str() {
        "iou" => {
            let path = args
                .preds
                .as_ref()
                .ok_or_else(|| usage("the iou branch needs predicted regression; pass --preds"))?;
            let preds = read_dense_maps(path)?;
            compute_iou_targets(&assignment, &preds.regression_maps())
                .with_context(|| format!("{} does not match image {}", path.display(), info.id))?
        }
        "centerness" => assignment.centerness_targets(),
        other => return Err(usage(format!("unknown branch {other:?}; expected iou or centerness"))),
    };
    let samples = build_objectness_training_set(
        &assignment,
        &targets,
        config.sampling_mode,
        config.iou_sampling_threshold,
    )?;
    let stats = sample_balance_stats(&samples, config.positive_cut)?;
    println!("mode {}", config.sampling_mode);
    println!("branch {}", args.branch);
    println!("samples {}", samples.len());
    println!("foreground {}", samples.foreground);
    println!("background {}", samples.background);
    println!("positives {}", stats.positives);
    println!("negatives {}", stats.negatives);
    println!("ratio {:?}", stats.ratio);
    Ok(())
}

pub fn score(args: ScoreArgs, jobs: Option<usize>) -> Result<()> {
    let mut config = config_from(args.config.as_deref())?;
    if let Some(m) = &args.mode {
        config.scoring_mode = parse::<ScoringMode>(m)?;
    }
    if let Some(v) = args.pre_nms_k {
        config.pre_nms_k = v;
    }
    if let Some(v) = args.pre_nms_threshold {
        config.pre_nms_threshold = v;
    }
    if let Some(v) = args.nms_iou {
        config.nms_iou = v;
    }
    if let Some(v) = args.post_nms_n {
        config.post_nms_n = v;
    }
    if let Some(v) = args.post_nms_threshold {
        config.post_nms_threshold = v;
    }
    if args.class_agnostic_nms.is_some() {
        config.class_agnostic_nms = args.class_agnostic_nms;
    }
    config.validate()?;

    let annotations = args.annotations.as_deref().map(load_annotations).transpose()?;
    let files = pred_files(&args.preds, args.image_id)?;
    let mode = config.scoring_mode;

    let results: Vec<Result<(u64, Vec<Proposal>)>> = with_pool(jobs.or(config.jobs), || {
        files
            .par_iter()
            .map(|(id, path)| {
                let preds = read_dense_maps(path)?;
                let mut params = config.pipeline_params();
                if let Some(set) = &annotations {
                    let info = image(set, *id, args.annotations.as_deref().unwrap_or(Path::new("")))?;
                    params.image_size = Some((info.width as f64, info.height as f64));
                    params.class_ids = Some(set.class_ids());
                }
                let proposals =
                    run_pipeline(&preds, mode, &params).with_context(|| format!("scoring {}", path.display()))?;
                Ok((*id, proposals))
            })
            .collect()
    })?;
    let mut per_image = BTreeMap::new();
    for r in results {
        let (id, p) = r?;
        if per_image.insert(id, p).is_some() {
            return Err(usage(format!("image id {id} appears twice")));
        }
    }
    write_proposals(&args.out, &per_image)?;

    let total: usize = per_image.values().map(Vec::len).sum();
    println!("mode {mode}");
    println!("images {}", per_image.len());
    println!("proposals {total}");
    println!("max_per_image {}", per_image.values().map(Vec::len).max().unwrap_or(0));
    Ok(())
}

fn split_for(spec: &str, gt: &AnnotationSet) -> Result<ClassSplit> {
    let taxonomy = if gt.categories.is_empty() {
        coco_taxonomy()
    } else {
        gt.categories.clone()
    };
    if let Some(path) = spec.strip_prefix("file:") {
        return Ok(ClassSplit::load(path)?);
    }
    let rule = match spec {
        "coco-voc" | "coco_voc" => SplitRule::CocoVoc,
        "lvis" => SplitRule::Lvis,
        other => {
            return Err(usage(format!(
                "unknown split {other:?}; expected coco-voc, lvis or file:PATH"
            )))
        }
    };
    Ok(build_split(&taxonomy, rule)?)
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let mut config = config_from(args.config.as_deref())?;
    if !args.ar_n.is_empty() {
        config.ar_n = args.ar_n.clone();
    }
    if let Some(v) = args.max_dets {
        config.max_dets = v;
    }
    config.validate()?;
    let task = parse::<Task>(&args.task)?;
    let gt = load_annotations(&args.gt)?;
    let proposals = read_proposals(&args.proposals)?;
    let split = split_for(&args.split, &gt)?;
    if task == Task::BasePrecision && proposals.values().flatten().all(|p| p.class_id.is_none()) {
        log::warn!("proposals carry no category ids; every AP will be 0 (score with a logits mode)");
    }

    let report = evaluate(&gt, &proposals, &split, task, &config.ar_n, config.max_dets)?;
    print!("{}", report.to_text());

    let summary = args.summary.unwrap_or_else(|| {
        let mut name = args.proposals.clone().into_os_string();
        name.push(".eval.json");
        PathBuf::from(name)
    });
    fs::write(&summary, report.to_json() + "\n").with_context(|| format!("writing {}", summary.display()))?;
    Ok(())
}

pub fn synth(args: SynthArgs, jobs: Option<usize>) -> Result<()> {
    let mut config = config_from(args.config.as_deref())?;
    if let Some(v) = args.noise {
        config.noise.regression_sigma = v;
    }
    if let Some(v) = args.objectness_noise {
        config.noise.objectness_noise = v;
    }
    if let Some(v) = args.seed {
        config.noise.seed = v;
    }
    config.validate()?;

    let set = match (&args.annotations, args.random) {
        (Some(path), _) => load_annotations(path)?,
        (None, Some(n)) => random_annotations(n, config.noise.seed, &config.scene, &config)?,
        (None, None) => return Err(usage("pass --annotations or --random N")),
    };
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_annotations(args.out.join("annotations.json"), &set)?;

    let mut ids: Vec<u64> = set.images.iter().map(|i| i.id).collect();
    ids.sort_unstable();
    let written: Vec<Result<usize>> = with_pool(jobs.or(config.jobs), || {
        ids.par_iter()
            .map(|&id| {
                let preds = synthesize_predictions(&set, id, &config, &config.noise)?;
                write_dense_maps(args.out.join(format!("{id}.owpd")), &preds)?;
                Ok(preds.levels.iter().map(LevelPredictions::locations).sum())
            })
            .collect()
    })?;
    let mut locations = 0;
    for w in written {
        locations += w?;
    }
    println!("images {}", ids.len());
    println!("annotations {}", set.annotations.len());
    println!("locations {locations}");
    println!("regression_sigma {:?}", config.noise.regression_sigma);
    println!("seed {}", config.noise.seed);
    Ok(())
}

pub fn hist(args: HistArgs) -> Result<()> {
    let mut config = config_from(args.config.as_deref())?;
    if let Some(b) = args.bins {
        config.bins = b;
    }
    config.validate()?;
    let proposals = read_proposals(&args.proposals)?;
    let scores: Vec<f64> = proposals.values().flatten().map(|p| p.score).collect();
    let h = score_histogram(&scores, config.bins)?;

    println!("bin_start bin_end count");
    for (k, c) in h.counts.iter().enumerate() {
        let (lo, hi) = h.bin_edges(k);
        println!("{lo:.4} {hi:.4} {c}");
    }
    let show = |v: Option<f64>| v.map_or_else(|| "absent".to_string(), |x| format!("{x:?}"));
    println!("total {}", h.total);
    println!("mean {}", show(h.mean));
    println!("median {}", show(h.median));
    println!("skewness {}", show(h.skewness));
    if let Some(out) = &args.out {
        fs::write(out, h.to_csv()).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

pub fn mask_stats(args: MaskStatsArgs, jobs: Option<usize>) -> Result<()> {
    let mut config = config_from(args.config.as_deref())?;
    if let Some(v) = args.threshold {
        config.unknown_mask_threshold = v;
    }
    if let Some(v) = &args.variant {
        config.mask_variant = parse::<MaskVariant>(v)?;
    }
    if let Some(v) = &args.source {
        config.mask_objectness = parse::<ObjectnessSource>(v)?;
    }
    if args.trigger_nms.is_some() {
        config.area_mask_nms = args.trigger_nms;
    }
    config.validate()?;
    let set = load_annotations(&args.annotations)?;
    let files = pred_files(&args.preds, args.image_id)?;

    let rows: Vec<Result<(u64, usize, usize)>> = with_pool(jobs.or(config.jobs), || {
        files
            .par_iter()
            .map(|(id, path)| {
                let info = image(&set, *id, &args.annotations)?;
                let assignment = assignment_for(&set, info, &config)?;
                let preds = read_dense_maps(path)?;
                let objectness = objectness_maps(&preds, config.mask_objectness);
                let mask = match config.mask_variant {
                    MaskVariant::Pixel => unknown_object_mask(&objectness, &assignment, config.unknown_mask_threshold),
                    MaskVariant::Area => unknown_area_mask(
                        &objectness,
                        &preds,
                        &assignment,
                        config.unknown_mask_threshold,
                        config.area_mask_nms,
                    ),
                }
                .with_context(|| format!("{} does not match image {id}", path.display()))?;
                let background = assignment.total_locations() - assignment.foreground_count();
                Ok((*id, background, mask.count()))
            })
            .collect()
    })?;

    println!("variant {}", config.mask_variant);
    println!("threshold {:?}", config.unknown_mask_threshold);
    let (mut background, mut excluded) = (0, 0);
    for r in rows {
        let (id, b, e) = r?;
        println!("image {id} background {b} excluded {e}");
        background += b;
        excluded += e;
    }
    println!("background {background}");
    println!("excluded {excluded}");
    let fraction = if background == 0 { 0.0 } else { excluded as f64 / background as f64 };
    println!("excluded_fraction {fraction:?}");
    Ok(())
}
