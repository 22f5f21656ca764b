//! Seeded synthetic detector.
//!
//! Fabricates dense prediction maps from ground truth with controlled noise,
//! so the proposal pipeline and the evaluator can run end to end without a
//! trained network. Each image draws from its own stream keyed by
//! `(seed, image_id)` and each location from a sub-stream keyed by
//! `(level, index)`, so results do not depend on processing order.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotations::{Annotation, AnnotationSet, ImageInfo};
use crate::assign::{assign_targets, make_grids, FpnLevelSpec};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::eval::{coco_taxonomy, evaluate, ClassSplit, EvalReport, Task};
use crate::geometry::{centerness_target, iou_ltrb, iou_xyxy, BoxXYXY, Ltrb};
use crate::maps::{DensePredictions, LevelPredictions};
use crate::proposals::{run_pipeline, PipelineParams, Proposal, ScoringMode};
use crate::rng::CounterRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Std-dev of the multiplicative error on each regression component.
    pub regression_sigma: f64,
    /// Std-dev of additive noise on the centerness and IoU maps.
    pub objectness_noise: f64,
    pub classification_confidence: f64,
    pub background_score_level: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            regression_sigma: 0.1,
            objectness_noise: 0.0,
            classification_confidence: 0.9,
            background_score_level: 0.3,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.regression_sigma >= 0.0 && self.regression_sigma.is_finite()) {
            return Err(Error::Invalid(format!("regression_sigma must be >= 0, got {}", self.regression_sigma)));
        }
        if !(self.objectness_noise >= 0.0 && self.objectness_noise.is_finite()) {
            return Err(Error::Invalid(format!("objectness_noise must be >= 0, got {}", self.objectness_noise)));
        }
        if !(self.classification_confidence > 0.0 && self.classification_confidence <= 1.0) {
            return Err(Error::Invalid(format!(
                "classification_confidence must be in (0,1], got {}",
                self.classification_confidence
            )));
        }
        if !(self.background_score_level >= 0.0 && self.background_score_level < 1.0) {
            return Err(Error::Invalid(format!(
                "background_score_level must be in [0,1), got {}",
                self.background_score_level
            )));
        }
        Ok(())
    }
}

/// Parameters of the random annotation generator.
///
/// Boxes have integer corners, overlap each other by at most
/// `max_pairwise_iou`, and each owns at least one foreground location. The
/// sum of their foreground locations stays within `foreground_budget`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    pub min_boxes: usize,
    pub max_boxes: usize,
    pub min_side: u32,
    pub max_side: u32,
    pub max_pairwise_iou: f64,
    pub foreground_budget: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            width: 640,
            height: 480,
            min_boxes: 1,
            max_boxes: 100,
            min_side: 12,
            max_side: 160,
            max_pairwise_iou: 0.5,
            foreground_budget: 1500,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.min_boxes > self.max_boxes {
            return Err(Error::Invalid("scene min_boxes exceeds max_boxes".into()));
        }
        if self.min_side < 2 || self.min_side > self.max_side {
            return Err(Error::Invalid("scene sides must satisfy 2 <= min_side <= max_side".into()));
        }
        if self.max_side > self.width || self.max_side > self.height {
            return Err(Error::Invalid("scene max_side exceeds the canvas".into()));
        }
        if !(0.0..=1.0).contains(&self.max_pairwise_iou) {
            return Err(Error::Invalid("scene max_pairwise_iou must be in [0,1]".into()));
        }
        Ok(())
    }
}

/// Foreground locations `b` would own if it were the only box.
fn standalone_foreground(b: &BoxXYXY, levels: &[FpnLevelSpec]) -> usize {
    let mut count = 0;
    for spec in levels {
        let s = spec.stride as f64;
        let offset = (spec.stride / 2) as f64;
        let col_lo = ((b.x1 - offset) / s).floor().max(0.0) as usize;
        let col_hi = ((b.x2 - offset) / s).ceil().max(0.0) as usize;
        let row_lo = ((b.y1 - offset) / s).floor().max(0.0) as usize;
        let row_hi = ((b.y2 - offset) / s).ceil().max(0.0) as usize;
        for row in row_lo..=row_hi {
            for col in col_lo..=col_hi {
                let (x, y) = (offset + col as f64 * s, offset + row as f64 * s);
                if b.contains_strict(x, y) {
                    let d = Ltrb {
                        l: x - b.x1,
                        r: b.x2 - x,
                        t: y - b.y1,
                        b: b.y2 - y,
                    };
                    if spec.in_range(d.max_component()) {
                        count += 1;
                    }
                }
            }
        }
    }
    count
}

/// Random COCO-taxonomy annotations on `num_images` canvases, ids from 1.
pub fn random_annotations(num_images: usize, seed: u64, scene: &SceneSpec, config: &Config) -> Result<AnnotationSet> {
    scene.validate()?;
    let levels = config.levels()?;
    let categories = coco_taxonomy();
    let mut set = AnnotationSet {
        categories: categories.clone(),
        ..AnnotationSet::default()
    };
    let mut next_annotation = 1u64;
    for image_id in 1..=num_images as u64 {
        let mut rng = CounterRng::derive(seed, &[0x5CE7E, image_id]);
        let target = rng.range_inclusive(scene.min_boxes as u64, scene.max_boxes as u64) as usize;
        let mut boxes: Vec<BoxXYXY> = Vec::with_capacity(target);
        let mut budget = 0usize;
        for _ in 0..target * 20 {
            if boxes.len() == target {
                break;
            }
            let w = rng.range_inclusive(scene.min_side as u64, scene.max_side as u64);
            let h = rng.range_inclusive(scene.min_side as u64, scene.max_side as u64);
            let x = rng.range_inclusive(0, (scene.width as u64).saturating_sub(w));
            let y = rng.range_inclusive(0, (scene.height as u64).saturating_sub(h));
            let category = categories[rng.range_inclusive(0, categories.len() as u64 - 1) as usize].id;
            let candidate = BoxXYXY::new(x as f64, y as f64, (x + w) as f64, (y + h) as f64)?.with_category(category);
            if boxes.iter().any(|b| iou_xyxy(b, &candidate) > scene.max_pairwise_iou) {
                continue;
            }
            let owned = standalone_foreground(&candidate, &levels);
            if owned == 0 || budget + owned > scene.foreground_budget {
                continue;
            }
            budget += owned;
            boxes.push(candidate);
        }

        // a nested smaller box can take every location of a larger one
        let grids = make_grids(scene.height as usize, scene.width as usize, &levels);
        let assignment = assign_targets(&boxes, &levels, &grids, config.center_radius)?;
        let mut owns = vec![false; boxes.len()];
        for (_, _, fg) in assignment.foreground() {
            owns[fg.gt] = true;
        }

        set.images.push(ImageInfo {
            id: image_id,
            width: scene.width,
            height: scene.height,
            file_name: format!("synthetic_{image_id:06}.png"),
        });
        for (b, _) in boxes.iter().zip(&owns).filter(|(_, &o)| o) {
            set.annotations.push(Annotation {
                id: next_annotation,
                image_id,
                category_id: b.category_id.expect("category assigned above"),
                bbox: BoxXYXY { category_id: None, ..*b },
            });
            next_annotation += 1;
        }
    }
    Ok(set)
}

fn perturb(value: f64, extent: f64, sigma: f64, rng: &mut CounterRng) -> f64 {
    let noisy = value * (1.0 + sigma * rng.gaussian());
    // the floor never lifts a component above its true value
    noisy.max((0.01 * extent).min(value))
}

/// Fake network output for one image.
pub fn synthesize_predictions(
    set: &AnnotationSet,
    image_id: u64,
    config: &Config,
    noise: &NoiseSpec,
) -> Result<DensePredictions> {
    noise.validate()?;
    let image = set
        .image(image_id)
        .ok_or_else(|| Error::Invalid(format!("image {image_id} not in annotation set")))?;
    let levels = config.levels()?;
    let grids = make_grids(image.height as usize, image.width as usize, &levels);
    let boxes = set.boxes_for(image_id);
    let assignment = assign_targets(&boxes, &levels, &grids, config.center_radius)?;
    let class_ids = set.class_ids();
    let num_classes = class_ids.len();
    let image_key = CounterRng::derive(noise.seed, &[image_id]).next_u64();
    let bg = noise.background_score_level;

    let mut out = Vec::with_capacity(levels.len());
    for (k, la) in assignment.levels.iter().enumerate() {
        let g = la.grid;
        let mut level = LevelPredictions::zeros(g.stride, g.height, g.width, num_classes);
        for (i, cell) in la.cells.iter().enumerate() {
            let mut rng = CounterRng::derive(image_key, &[k as u64, i as u64]);
            let classes = &mut level.classification[i * num_classes..(i + 1) * num_classes];
            match cell {
                Some(fg) => {
                    let gt = boxes[fg.gt];
                    let t = fg.regression;
                    let sigma = noise.regression_sigma;
                    let reg = [
                        perturb(t.l, gt.width(), sigma, &mut rng) as f32,
                        perturb(t.r, gt.width(), sigma, &mut rng) as f32,
                        perturb(t.t, gt.height(), sigma, &mut rng) as f32,
                        perturb(t.b, gt.height(), sigma, &mut rng) as f32,
                    ];
                    level.regression[i] = reg;
                    let stored = Ltrb::from_array(reg.map(f64::from));
                    let iou = iou_ltrb(&stored, &t)?;
                    let iou_noise = noise.objectness_noise * rng.gaussian();
                    let ctr_noise = noise.objectness_noise * rng.gaussian();
                    level.iou[i] = (iou + iou_noise).clamp(0.0, 1.0) as f32;
                    level.centerness[i] = (centerness_target(&t)? + ctr_noise).clamp(0.0, 1.0) as f32;
                    classes.fill(bg as f32);
                    let category = gt.category_id.expect("annotation boxes carry categories");
                    let channel = class_ids.binary_search(&category).expect("category listed");
                    classes[channel] = noise.classification_confidence as f32;
                }
                None => {
                    let s = g.stride as f64;
                    level.regression[i] = std::array::from_fn(|_| (s * (0.5 + rng.next_f64())) as f32);
                    level.centerness[i] = (bg * rng.next_f64()) as f32;
                    level.iou[i] = (bg * rng.next_f64()) as f32;
                    for c in classes.iter_mut() {
                        *c = (bg * rng.next_f64()) as f32;
                    }
                }
            }
        }
        out.push(level);
    }
    Ok(DensePredictions { levels: out })
}

/// Synthesized maps for every image, in ascending image-id order.
pub fn synthesize_all(set: &AnnotationSet, config: &Config, noise: &NoiseSpec) -> Result<Vec<(u64, DensePredictions)>> {
    let mut ids: Vec<u64> = set.images.iter().map(|i| i.id).collect();
    ids.sort_unstable();
    ids.par_iter()
        .map(|&id| synthesize_predictions(set, id, config, noise).map(|p| (id, p)))
        .collect()
}

/// IoU-map values at every foreground location of every image.
pub fn foreground_iou_scores(set: &AnnotationSet, config: &Config, noise: &NoiseSpec) -> Result<Vec<f64>> {
    let levels = config.levels()?;
    let mut scores = Vec::new();
    for (id, preds) in synthesize_all(set, config, noise)? {
        let image = set.image(id).expect("image listed");
        let grids = make_grids(image.height as usize, image.width as usize, &levels);
        let assignment = assign_targets(&set.boxes_for(id), &levels, &grids, config.center_radius)?;
        for (k, i, _) in assignment.foreground() {
            scores.push(preds.levels[k].iou[i] as f64);
        }
    }
    Ok(scores)
}

/// Pipeline parameters for one image of `set`.
pub fn image_params(set: &AnnotationSet, image_id: u64, config: &Config) -> PipelineParams {
    let mut params = config.pipeline_params();
    if let Some(im) = set.image(image_id) {
        params.image_size = Some((im.width as f64, im.height as f64));
    }
    params.class_ids = Some(set.class_ids());
    params
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioResult {
    pub mode: ScoringMode,
    pub novel_recall: EvalReport,
    pub base_precision: EvalReport,
}

/// Synthesizes every image, runs the proposal pipeline under each scoring
/// mode, and evaluates the result.
pub fn run_scenario(
    set: &AnnotationSet,
    split: &ClassSplit,
    config: &Config,
    noise: &NoiseSpec,
    modes: &[ScoringMode],
) -> Result<Vec<ScenarioResult>> {
    let preds = synthesize_all(set, config, noise)?;
    let per_mode: Vec<BTreeMap<u64, Vec<Proposal>>> = modes
        .iter()
        .map(|&mode| {
            preds
                .par_iter()
                .map(|(id, p)| run_pipeline(p, mode, &image_params(set, *id, config)).map(|props| (*id, props)))
                .collect::<Result<Vec<_>>>()
                .map(|v| v.into_iter().collect())
        })
        .collect::<Result<_>>()?;
    modes
        .iter()
        .zip(&per_mode)
        .map(|(&mode, props)| {
            Ok(ScenarioResult {
                mode,
                novel_recall: evaluate(set, props, split, Task::NovelRecall, &config.ar_n, config.max_dets)?,
                base_precision: evaluate(set, props, split, Task::BasePrecision, &config.ar_n, config.max_dets)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_scene() -> SceneSpec {
        SceneSpec {
            width: 256,
            height: 192,
            max_boxes: 12,
            max_side: 96,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn generator_invariants() {
        let config = Config::default();
        let set = random_annotations(5, 11, &small_scene(), &config).unwrap();
        set.validate().unwrap();
        assert_eq!(set.images.len(), 5);
        for im in &set.images {
            let boxes = set.boxes_for(im.id);
            assert!(!boxes.is_empty());
            for (i, a) in boxes.iter().enumerate() {
                assert_eq!(a.x1.fract(), 0.0);
                for b in &boxes[i + 1..] {
                    assert!(iou_xyxy(a, b) <= 0.5);
                }
            }
        }
        assert_eq!(set, random_annotations(5, 11, &small_scene(), &config).unwrap());
    }

    #[test]
    fn zero_noise_iou_is_one() {
        let config = Config::default();
        let set = random_annotations(2, 3, &small_scene(), &config).unwrap();
        let noise = NoiseSpec {
            regression_sigma: 0.0,
            ..NoiseSpec::default()
        };
        let scores = foreground_iou_scores(&set, &config, &noise).unwrap();
        assert!(!scores.is_empty());
        assert!(scores.iter().all(|&s| s == 1.0));
    }

    #[test]
    fn same_seed_same_maps() {
        let config = Config::default();
        let set = random_annotations(1, 5, &small_scene(), &config).unwrap();
        let noise = NoiseSpec {
            objectness_noise: 0.05,
            seed: 99,
            ..NoiseSpec::default()
        };
        let a = synthesize_predictions(&set, 1, &config, &noise).unwrap();
        let b = synthesize_predictions(&set, 1, &config, &noise).unwrap();
        assert_eq!(crate::densefile::encode_dense_maps(&a), crate::densefile::encode_dense_maps(&b));
        let other = NoiseSpec { seed: 100, ..noise };
        assert_ne!(a, synthesize_predictions(&set, 1, &config, &other).unwrap());
    }

    #[test]
    fn iou_map_consistent_with_regression() {
        let config = Config::default();
        let set = random_annotations(1, 8, &small_scene(), &config).unwrap();
        let noise = NoiseSpec {
            regression_sigma: 0.2,
            ..NoiseSpec::default()
        };
        let preds = synthesize_predictions(&set, 1, &config, &noise).unwrap();
        let levels = config.levels().unwrap();
        let grids = make_grids(192, 256, &levels);
        let a = assign_targets(&set.boxes_for(1), &levels, &grids, 1.5).unwrap();
        let mut checked = 0;
        for (k, i, fg) in a.foreground() {
            let expected = iou_ltrb(&preds.levels[k].regression_at(i), &fg.regression).unwrap();
            assert_eq!(preds.levels[k].iou[i], expected as f32);
            checked += 1;
        }
        assert!(checked > 0);
    }

    #[test]
    fn scores_cluster_high_at_ten_percent_noise() {
        let config = Config::default();
        let set = random_annotations(10, 21, &small_scene(), &config).unwrap();
        let scores = foreground_iou_scores(&set, &config, &NoiseSpec::default()).unwrap();
        assert!(scores.len() >= 1000, "{}", scores.len());
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        assert!(sorted[sorted.len() / 2] > 0.85);
    }

    #[test]
    fn unknown_image_is_error() {
        let config = Config::default();
        let set = random_annotations(1, 1, &small_scene(), &config).unwrap();
        assert!(synthesize_predictions(&set, 77, &config, &NoiseSpec::default()).is_err());
    }

    #[test]
    fn empty_set_reports_absent() {
        let config = Config::default();
        let set = AnnotationSet {
            categories: coco_taxonomy(),
            ..AnnotationSet::default()
        };
        let r = run_scenario(&set, &ClassSplit::coco_voc(), &config, &NoiseSpec::default(), &[ScoringMode::Iou])
            .unwrap();
        assert!(r[0].novel_recall.ar_at.values().all(Option::is_none));
    }

    #[test]
    fn zero_noise_scenario_recalls_everything() {
        let config = Config::default();
        let set = random_annotations(3, 4, &small_scene(), &config).unwrap();
        let noise = NoiseSpec {
            regression_sigma: 0.0,
            ..NoiseSpec::default()
        };
        let r = run_scenario(&set, &ClassSplit::coco_voc(), &config, &noise, &[ScoringMode::Iou]).unwrap();
        assert_eq!(r[0].novel_recall.ar_at[&100], Some(1.0));
    }
}
