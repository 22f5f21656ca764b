//! Dense maps to a ranked proposal list.
//!
//! Every stage emits proposals sorted by descending score, ties broken by
//! `(level, row, col)` ascending, so identical inputs give identical output.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou_xyxy, ltrb_to_box, BoxXYXY};
use crate::maps::{DenseMap, DensePredictions, LevelMaps};

pub const DEFAULT_PRE_NMS_K: usize = 2000;
pub const DEFAULT_PRE_NMS_THRESHOLD: f64 = 0.05;
pub const DEFAULT_NMS_IOU: f64 = 0.6;
pub const COCO_POST_NMS_N: usize = 100;
pub const LVIS_POST_NMS_N: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectnessKind {
    Centerness,
    Iou,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoringMode {
    Centerness,
    Iou,
    /// `sqrt(centerness * iou)`
    Geomean,
    /// Best class probability times an objectness map.
    LogitsTimesObjectness(ObjectnessKind),
}

impl ScoringMode {
    pub const NAMES: [&'static str; 5] = ["centerness", "iou", "geomean", "logits-centerness", "logits-iou"];

    pub fn is_class_aware(&self) -> bool {
        matches!(self, ScoringMode::LogitsTimesObjectness(_))
    }
}

impl FromStr for ScoringMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "centerness" => Ok(ScoringMode::Centerness),
            "iou" => Ok(ScoringMode::Iou),
            "geomean" => Ok(ScoringMode::Geomean),
            "logits-centerness" => Ok(ScoringMode::LogitsTimesObjectness(ObjectnessKind::Centerness)),
            "logits-iou" => Ok(ScoringMode::LogitsTimesObjectness(ObjectnessKind::Iou)),
            _ => Err(Error::Invalid(format!(
                "unknown scoring mode {s:?}; valid modes: {}",
                Self::NAMES.join(", ")
            ))),
        }
    }
}

impl fmt::Display for ScoringMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ScoringMode::Centerness => "centerness",
            ScoringMode::Iou => "iou",
            ScoringMode::Geomean => "geomean",
            ScoringMode::LogitsTimesObjectness(ObjectnessKind::Centerness) => "logits-centerness",
            ScoringMode::LogitsTimesObjectness(ObjectnessKind::Iou) => "logits-iou",
        };
        f.write_str(name)
    }
}

impl Serialize for ScoringMode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ScoringMode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub bbox: BoxXYXY,
    pub score: f64,
    pub class_id: Option<u64>,
    pub level: usize,
    pub row: usize,
    pub col: usize,
}

/// Descending score, then `(level, row, col)` ascending.
pub fn ranking(a: &Proposal, b: &Proposal) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.level.cmp(&b.level))
        .then(a.row.cmp(&b.row))
        .then(a.col.cmp(&b.col))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMaps {
    pub scores: LevelMaps<f64>,
    /// Argmax class channel, only for class-aware modes.
    pub classes: Option<LevelMaps<usize>>,
}

pub fn score_map(preds: &DensePredictions, mode: ScoringMode) -> Result<ScoreMaps> {
    preds.validate()?;
    if mode.is_class_aware() && preds.num_classes() == 0 && !preds.levels.is_empty() {
        return Err(Error::MissingMap(format!("mode {mode} needs classification maps")));
    }
    let mut scores = Vec::with_capacity(preds.levels.len());
    let mut classes = Vec::with_capacity(preds.levels.len());
    for level in &preds.levels {
        let n = level.locations();
        let mut s = Vec::with_capacity(n);
        let mut c = Vec::new();
        for i in 0..n {
            let centerness = level.centerness[i] as f64;
            let iou = level.iou[i] as f64;
            let value = match mode {
                ScoringMode::Centerness => centerness,
                ScoringMode::Iou => iou,
                ScoringMode::Geomean => (centerness * iou).sqrt(),
                ScoringMode::LogitsTimesObjectness(kind) => {
                    let (best, p) = level
                        .class_scores(i)
                        .iter()
                        .enumerate()
                        .fold((0usize, f32::NEG_INFINITY), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc });
                    c.push(best);
                    let objectness = match kind {
                        ObjectnessKind::Centerness => centerness,
                        ObjectnessKind::Iou => iou,
                    };
                    p as f64 * objectness
                }
            };
            s.push(value);
        }
        scores.push(DenseMap::from_vec(level.height, level.width, s)?);
        if mode.is_class_aware() {
            classes.push(DenseMap::from_vec(level.height, level.width, c)?);
        }
    }
    Ok(ScoreMaps {
        scores,
        classes: mode.is_class_aware().then_some(classes),
    })
}

/// Decodes every location scoring above `score_threshold` and keeps the `k`
/// best across all levels. Boxes are clipped to `image_size` (width, height);
/// locations whose clipped box has no area are dropped. `class_ids` maps class
/// channels to category ids; without it the channel index is used.
pub fn select_pre_nms(
    scores: &ScoreMaps,
    preds: &DensePredictions,
    k: usize,
    score_threshold: f64,
    image_size: (f64, f64),
    class_ids: Option<&[u64]>,
) -> Result<Vec<Proposal>> {
    if k == 0 {
        return Err(Error::Invalid("pre-NMS k must be positive".into()));
    }
    if scores.scores.len() != preds.levels.len() {
        return Err(Error::Shape("score maps and predictions differ in level count".into()));
    }
    let (image_w, image_h) = image_size;
    let mut candidates = Vec::new();
    for (level, (map, lp)) in scores.scores.iter().zip(&preds.levels).enumerate() {
        if map.height != lp.height || map.width != lp.width {
            return Err(Error::Shape(format!("level {level}: score map shape differs from predictions")));
        }
        let half = (lp.stride / 2) as f64;
        let stride = lp.stride as f64;
        for (i, &score) in map.data.iter().enumerate() {
            if !(score > score_threshold) {
                continue;
            }
            let (row, col) = (i / lp.width, i % lp.width);
            let (x, y) = (half + col as f64 * stride, half + row as f64 * stride);
            let Some(bbox) = ltrb_to_box(x, y, &lp.regression_at(i))
                .ok()
                .and_then(|b| b.clip(image_w, image_h))
            else {
                continue;
            };
            let class_id = match &scores.classes {
                Some(classes) => {
                    let channel = classes[level].data[i];
                    Some(match class_ids {
                        Some(ids) => *ids.get(channel).ok_or_else(|| {
                            Error::Invalid(format!("class channel {channel} has no category id"))
                        })?,
                        None => channel as u64,
                    })
                }
                None => None,
            };
            candidates.push(Proposal {
                bbox,
                score,
                class_id,
                level,
                row,
                col,
            });
        }
    }
    if candidates.len() > k {
        candidates.select_nth_unstable_by(k - 1, ranking);
        candidates.truncate(k);
    }
    candidates.sort_by(ranking);
    Ok(candidates)
}

/// Greedy NMS. With `class_aware`, proposals only suppress others of the same class.
pub fn nms(proposals: &[Proposal], iou_threshold: f64, class_aware: bool) -> Vec<Proposal> {
    let mut order: Vec<Proposal> = proposals.to_vec();
    order.sort_by(ranking);
    let mut suppressed = vec![false; order.len()];
    let mut keep = Vec::new();
    for i in 0..order.len() {
        if suppressed[i] {
            continue;
        }
        let kept = order[i];
        keep.push(kept);
        for (j, other) in order.iter().enumerate().skip(i + 1) {
            if suppressed[j] || (class_aware && other.class_id != kept.class_id) {
                continue;
            }
            if iou_xyxy(&kept.bbox, &other.bbox) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    keep
}

/// Drops proposals scoring below `post_threshold`, then keeps the best `n`.
pub fn select_post_nms(proposals: &[Proposal], n: usize, post_threshold: f64) -> Vec<Proposal> {
    let mut out: Vec<Proposal> = proposals.iter().filter(|p| p.score >= post_threshold).copied().collect();
    out.sort_by(ranking);
    out.truncate(n);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineParams {
    pub pre_nms_k: usize,
    pub pre_nms_threshold: f64,
    pub nms_iou: f64,
    pub post_nms_n: usize,
    pub post_nms_threshold: f64,
    /// `None` picks per mode: class-aware for logits scoring, agnostic otherwise.
    pub class_agnostic_nms: Option<bool>,
    /// `(width, height)`; defaults to the finest level's lattice extent.
    pub image_size: Option<(f64, f64)>,
    pub class_ids: Option<Vec<u64>>,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            pre_nms_k: DEFAULT_PRE_NMS_K,
            pre_nms_threshold: DEFAULT_PRE_NMS_THRESHOLD,
            nms_iou: DEFAULT_NMS_IOU,
            post_nms_n: COCO_POST_NMS_N,
            post_nms_threshold: 0.0,
            class_agnostic_nms: None,
            image_size: None,
            class_ids: None,
        }
    }
}

pub fn run_pipeline(preds: &DensePredictions, mode: ScoringMode, params: &PipelineParams) -> Result<Vec<Proposal>> {
    if params.post_nms_n == 0 {
        return Err(Error::Invalid("post-NMS n must be positive".into()));
    }
    let scores = score_map(preds, mode)?;
    let image_size = params.image_size.unwrap_or_else(|| preds.lattice_extent());
    let pre = select_pre_nms(
        &scores,
        preds,
        params.pre_nms_k,
        params.pre_nms_threshold,
        image_size,
        params.class_ids.as_deref(),
    )?;
    let class_aware = !params.class_agnostic_nms.unwrap_or(!mode.is_class_aware());
    let kept = nms(&pre, params.nms_iou, class_aware);
    Ok(select_post_nms(&kept, params.post_nms_n, params.post_nms_threshold))
}
