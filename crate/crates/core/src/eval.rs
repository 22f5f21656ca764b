//! Open-world evaluation.
//!
//! Recall is measured class-agnostically on the categories held out from
//! training; precision per category on the categories seen during training.
//! Both average over the IoU thresholds 0.50, 0.55, ..., 0.95 with greedy
//! score-ordered matching.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotations::{Annotation, AnnotationSet, Category, Frequency};
use crate::error::{Error, Result};
use crate::geometry::{iou_xyxy, BoxXYXY};
use crate::proposals::Proposal;

/// The 80 COCO detection categories with their official ids.
pub const COCO_CATEGORIES: [(u64, &str); 80] = [
    (1, "person"), (2, "bicycle"), (3, "car"), (4, "motorcycle"), (5, "airplane"),
    (6, "bus"), (7, "train"), (8, "truck"), (9, "boat"), (10, "traffic light"),
    (11, "fire hydrant"), (13, "stop sign"), (14, "parking meter"), (15, "bench"), (16, "bird"),
    (17, "cat"), (18, "dog"), (19, "horse"), (20, "sheep"), (21, "cow"),
    (22, "elephant"), (23, "bear"), (24, "zebra"), (25, "giraffe"), (27, "backpack"),
    (28, "umbrella"), (31, "handbag"), (32, "tie"), (33, "suitcase"), (34, "frisbee"),
    (35, "skis"), (36, "snowboard"), (37, "sports ball"), (38, "kite"), (39, "baseball bat"),
    (40, "baseball glove"), (41, "skateboard"), (42, "surfboard"), (43, "tennis racket"), (44, "bottle"),
    (46, "wine glass"), (47, "cup"), (48, "fork"), (49, "knife"), (50, "spoon"),
    (51, "bowl"), (52, "banana"), (53, "apple"), (54, "sandwich"), (55, "orange"),
    (56, "broccoli"), (57, "carrot"), (58, "hot dog"), (59, "pizza"), (60, "donut"),
    (61, "cake"), (62, "chair"), (63, "couch"), (64, "potted plant"), (65, "bed"),
    (67, "dining table"), (70, "toilet"), (72, "tv"), (73, "laptop"), (74, "mouse"),
    (75, "remote"), (76, "keyboard"), (77, "cell phone"), (78, "microwave"), (79, "oven"),
    (80, "toaster"), (81, "sink"), (82, "refrigerator"), (84, "book"), (85, "clock"),
    (86, "vase"), (87, "scissors"), (88, "teddy bear"), (89, "hair drier"), (90, "toothbrush"),
];

/// PASCAL VOC classes under their COCO names, followed by VOC spellings.
const VOC_NAMES: [&str; 26] = [
    "airplane", "bicycle", "bird", "boat", "bottle", "bus", "car", "cat", "chair", "cow",
    "dining table", "dog", "horse", "motorcycle", "person", "potted plant", "sheep", "couch",
    "train", "tv", "aeroplane", "diningtable", "motorbike", "pottedplant", "sofa", "tvmonitor",
];

pub const LVIS_SEEN_FREQUENT: usize = 305;
const LVIS_EXPECTED_COUNTS: (usize, usize, usize) = (337, 461, 405);

pub const IOU_THRESHOLDS: [f64; 10] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];

pub fn coco_taxonomy() -> Vec<Category> {
    COCO_CATEGORIES
        .iter()
        .map(|&(id, name)| Category {
            id,
            name: name.to_string(),
            frequency: None,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassSplit {
    pub seen: BTreeSet<u64>,
    pub novel: BTreeSet<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitRule {
    /// Seen = categories that also exist in PASCAL VOC.
    CocoVoc,
    /// Seen = rare + common + the first 305 frequent categories by ascending id.
    Lvis,
}

impl ClassSplit {
    pub fn new(seen: BTreeSet<u64>, novel: BTreeSet<u64>) -> Result<Self> {
        if let Some(id) = seen.intersection(&novel).next() {
            return Err(Error::Invalid(format!("category {id} is both seen and novel")));
        }
        Ok(ClassSplit { seen, novel })
    }

    /// The 20 VOC / 60 non-VOC split of the built-in COCO taxonomy.
    pub fn coco_voc() -> Self {
        build_split(&coco_taxonomy(), SplitRule::CocoVoc).expect("built-in taxonomy is valid")
    }

    /// Reads `{"seen": [...], "novel": [...]}`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: ClassSplit = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        ClassSplit::new(raw.seen, raw.novel).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn contains(&self, id: u64) -> bool {
        self.seen.contains(&id) || self.novel.contains(&id)
    }
}

pub fn build_split(taxonomy: &[Category], rule: SplitRule) -> Result<ClassSplit> {
    let mut ids = BTreeSet::new();
    for c in taxonomy {
        if !ids.insert(c.id) {
            return Err(Error::Invalid(format!("duplicate category id {} in taxonomy", c.id)));
        }
    }
    match rule {
        SplitRule::CocoVoc => {
            let (seen, novel): (Vec<&Category>, Vec<&Category>) = taxonomy
                .iter()
                .partition(|c| VOC_NAMES.contains(&c.name.to_ascii_lowercase().as_str()));
            ClassSplit::new(
                seen.iter().map(|c| c.id).collect(),
                novel.iter().map(|c| c.id).collect(),
            )
        }
        SplitRule::Lvis => {
            let mut seen = BTreeSet::new();
            let mut frequent = Vec::new();
            let (mut rare, mut common) = (0, 0);
            for c in taxonomy {
                match c.frequency {
                    Some(Frequency::Rare) => {
                        rare += 1;
                        seen.insert(c.id);
                    }
                    Some(Frequency::Common) => {
                        common += 1;
                        seen.insert(c.id);
                    }
                    Some(Frequency::Frequent) => frequent.push(c.id),
                    None => {
                        return Err(Error::Invalid(format!(
                            "category {} ({}) has no frequency tag",
                            c.id, c.name
                        )))
                    }
                }
            }
            if (rare, common, frequent.len()) != LVIS_EXPECTED_COUNTS {
                log::warn!(
                    "LVIS taxonomy has {rare}/{common}/{} rare/common/frequent categories, expected {}/{}/{}",
                    frequent.len(),
                    LVIS_EXPECTED_COUNTS.0,
                    LVIS_EXPECTED_COUNTS.1,
                    LVIS_EXPECTED_COUNTS.2
                );
            }
            frequent.sort_unstable();
            let cut = LVIS_SEEN_FREQUENT.min(frequent.len());
            seen.extend(&frequent[..cut]);
            ClassSplit::new(seen, frequent[cut..].iter().copied().collect())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    NovelRecall,
    BasePrecision,
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "novel-recall" | "novel_recall" => Ok(Task::NovelRecall),
            "base-precision" | "base_precision" => Ok(Task::BasePrecision),
            _ => Err(Error::Invalid(format!(
                "unknown task {s:?}; expected novel-recall or base-precision"
            ))),
        }
    }
}

/// Keeps novel-class annotations for recall and seen-class ones for precision.
pub fn filter_annotations(annotations: &[Annotation], split: &ClassSplit, task: Task) -> Result<Vec<Annotation>> {
    let keep = match task {
        Task::NovelRecall => &split.novel,
        Task::BasePrecision => &split.seen,
    };
    let mut out = Vec::new();
    for a in annotations {
        if !split.contains(a.category_id) {
            return Err(Error::UnknownCategory(a.category_id));
        }
        if keep.contains(&a.category_id) {
            out.push(a.clone());
        }
    }
    Ok(out)
}

/// Number of ground-truth boxes recalled at `tau`. Proposals are visited in
/// the given order; each takes the unmatched box it overlaps most, if that
/// overlap reaches `tau`.
pub fn greedy_match_count(proposals: &[BoxXYXY], gt: &[BoxXYXY], tau: f64) -> usize {
    let mut taken = vec![false; gt.len()];
    let mut matched = 0;
    for p in proposals {
        let mut best: Option<(usize, f64)> = None;
        for (g, b) in gt.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let iou = iou_xyxy(p, b);
            if iou >= tau && best.is_none_or(|(_, v)| iou > v) {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            matched += 1;
        }
    }
    matched
}

/// Class-agnostic recall over the top `n` proposals per image, averaged over
/// [`IOU_THRESHOLDS`]. Proposals must already be sorted by descending score.
/// `None` when there is no ground truth at all.
pub fn average_recall(proposals: &[Vec<BoxXYXY>], gt: &[Vec<BoxXYXY>], n: usize) -> Option<f64> {
    let total: usize = gt.iter().map(Vec::len).sum();
    if total == 0 {
        return None;
    }
    let mut recall_sum = 0.0;
    for tau in IOU_THRESHOLDS {
        let matched: usize = gt
            .iter()
            .enumerate()
            .filter(|(_, g)| !g.is_empty())
            .map(|(i, g)| {
                let props = proposals.get(i).map_or(&[][..], |p| &p[..p.len().min(n)]);
                greedy_match_count(props, g, tau)
            })
            .sum();
        recall_sum += matched as f64 / total as f64;
    }
    Some(recall_sum / IOU_THRESHOLDS.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApResult {
    pub ap: f64,
    pub per_category: BTreeMap<u64, f64>,
}

/// Per-category AP with 101-point interpolation, averaged over
/// [`IOU_THRESHOLDS`] and then over categories holding any ground truth.
/// Only categories in `categories` are scored; each image contributes at
/// most `max_dets` detections.
pub fn average_precision(
    detections: &[Vec<Proposal>],
    gt: &[Vec<BoxXYXY>],
    categories: &BTreeSet<u64>,
    max_dets: usize,
) -> Option<ApResult> {
    let mut per_category = BTreeMap::new();
    for &cat in categories {
        let gt_c: Vec<Vec<BoxXYXY>> = gt
            .iter()
            .map(|g| g.iter().filter(|b| b.category_id == Some(cat)).copied().collect())
            .collect();
        let n_gt: usize = gt_c.iter().map(Vec::len).sum();
        if n_gt == 0 {
            continue;
        }
        let det_c: Vec<Vec<Proposal>> = (0..gt.len())
            .map(|i| {
                let mut d: Vec<Proposal> = detections
                    .get(i)
                    .map(|d| d.iter().filter(|p| p.class_id == Some(cat)).copied().collect())
                    .unwrap_or_default();
                d.sort_by(|a, b| b.score.total_cmp(&a.score));
                d.truncate(max_dets);
                d
            })
            .collect();
        let ap = IOU_THRESHOLDS
            .iter()
            .map(|&tau| ap_at_threshold(&det_c, &gt_c, n_gt, tau))
            .sum::<f64>()
            / IOU_THRESHOLDS.len() as f64;
        per_category.insert(cat, ap);
    }
    if per_category.is_empty() {
        return None;
    }
    let ap = per_category.values().sum::<f64>() / per_category.len() as f64;
    Some(ApResult { ap, per_category })
}

fn ap_at_threshold(dets: &[Vec<Proposal>], gt: &[Vec<BoxXYXY>], n_gt: usize, tau: f64) -> f64 {
    // (score, true positive) for every detection
    let mut marks: Vec<(f64, bool)> = Vec::new();
    for (d, g) in dets.iter().zip(gt) {
        let mut taken = vec![false; g.len()];
        for p in d {
            let mut best: Option<(usize, f64)> = None;
            for (k, b) in g.iter().enumerate() {
                let iou = iou_xyxy(&p.bbox, b);
                if !taken[k] && iou >= tau && best.is_none_or(|(_, v)| iou > v) {
                    best = Some((k, iou));
                }
            }
            if let Some((k, _)) = best {
                taken[k] = true;
            }
            marks.push((p.score, best.is_some()));
        }
    }
    // stable: equal scores keep image order
    marks.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut precision = Vec::with_capacity(marks.len());
    let mut recall = Vec::with_capacity(marks.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &(_, hit) in &marks {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        precision.push(tp as f64 / (tp + fp) as f64);
        recall.push(tp as f64 / n_gt as f64);
    }
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let points = 101;
    (0..points)
        .map(|k| {
            let r = k as f64 / (points - 1) as f64;
            let idx = recall.partition_point(|&v| v < r);
            precision.get(idx).copied().unwrap_or(0.0)
        })
        .sum::<f64>()
        / points as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub counts: Vec<usize>,
    pub total: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    /// Population skewness `m3 / m2^1.5`; absent below 3 samples or with zero spread.
    pub skewness: Option<f64>,
}

impl Histogram {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn bin_edges(&self, bin: usize) -> (f64, f64) {
        let w = 1.0 / self.bins() as f64;
        (bin as f64 * w, (bin + 1) as f64 * w)
    }

    /// `bin_start,bin_end,count` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_start,bin_end,count\n");
        for (k, c) in self.counts.iter().enumerate() {
            let (lo, hi) = self.bin_edges(k);
            let _ = writeln!(out, "{lo:.4},{hi:.4},{c}");
        }
        out
    }
}

/// Equal-width histogram over `[0, 1]`; a score of exactly 1 lands in the last bin.
pub fn score_histogram(scores: &[f64], bins: usize) -> Result<Histogram> {
    if bins < 2 {
        return Err(Error::Invalid(format!("need at least 2 bins, got {bins}")));
    }
    let mut counts = vec![0usize; bins];
    for &s in scores {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::Invalid(format!("score {s} outside [0,1]")));
        }
        counts[((s * bins as f64) as usize).min(bins - 1)] += 1;
    }
    let n = scores.len() as f64;
    let mean = (!scores.is_empty()).then(|| scores.iter().sum::<f64>() / n);
    let median = (!scores.is_empty()).then(|| {
        let mut sorted = scores.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        if sorted.len() % 2 == 0 {
            (sorted[mid - 1] + sorted[mid]) / 2.0
        } else {
            sorted[mid]
        }
    });
    let skewness = mean.filter(|_| scores.len() >= 3).and_then(|mu| {
        let m2 = scores.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n;
        let m3 = scores.iter().map(|x| (x - mu).powi(3)).sum::<f64>() / n;
        (m2 > 0.0).then(|| m3 / m2.powf(1.5))
    });
    Ok(Histogram {
        counts,
        total: scores.len(),
        mean,
        median,
        skewness,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub task: String,
    pub seen_classes: usize,
    pub novel_classes: usize,
    /// Images holding at least one evaluated ground-truth box.
    pub images: usize,
    pub ground_truth: usize,
    pub proposals: usize,
    pub mean_proposals_per_image: f64,
    pub ar_at: BTreeMap<usize, Option<f64>>,
    pub ap: Option<f64>,
    pub per_category_ap: BTreeMap<u64, f64>,
}

fn metric(v: Option<f64>) -> String {
    v.map_or_else(|| "absent".to_string(), |x| format!("{x:?}"))
}

impl EvalReport {
    /// One metric per line, `name value`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "task {}", self.task);
        let _ = writeln!(out, "seen {} novel {}", self.seen_classes, self.novel_classes);
        let _ = writeln!(out, "images {}", self.images);
        let _ = writeln!(out, "ground_truth {}", self.ground_truth);
        let _ = writeln!(out, "proposals {}", self.proposals);
        let _ = writeln!(out, "proposals_per_image {:?}", self.mean_proposals_per_image);
        for (n, v) in &self.ar_at {
            let _ = writeln!(out, "AR{n} {}", metric(*v));
        }
        if self.task == "base-precision" {
            let _ = writeln!(out, "AP {}", metric(self.ap));
            for (cat, ap) in &self.per_category_ap {
                let _ = writeln!(out, "AP/{cat} {ap:?}");
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Scores per-image proposals (keyed by image id) against an annotation set.
pub fn evaluate(
    gt: &AnnotationSet,
    proposals: &BTreeMap<u64, Vec<Proposal>>,
    split: &ClassSplit,
    task: Task,
    ar_ns: &[usize],
    max_dets: usize,
) -> Result<EvalReport> {
    let kept = filter_annotations(&gt.annotations, split, task)?;
    let mut by_image: BTreeMap<u64, Vec<BoxXYXY>> = BTreeMap::new();
    for a in &kept {
        by_image
            .entry(a.image_id)
            .or_default()
            .push(a.bbox.with_category(a.category_id));
    }
    for id in proposals.keys() {
        if gt.image(*id).is_none() {
            log::warn!("proposals for image {id} have no ground-truth image; ignored");
        }
    }

    let image_ids: Vec<u64> = by_image.keys().copied().collect();
    let gt_lists: Vec<Vec<BoxXYXY>> = image_ids.iter().map(|id| by_image[id].clone()).collect();
    let sorted: Vec<Vec<Proposal>> = image_ids
        .iter()
        .map(|id| {
            let mut p = proposals.get(id).cloned().unwrap_or_default();
            p.sort_by(|a, b| b.score.total_cmp(&a.score));
            p
        })
        .collect();
    let boxes: Vec<Vec<BoxXYXY>> = sorted.iter().map(|p| p.iter().map(|q| q.bbox).collect()).collect();

    let ar_at = ar_ns
        .iter()
        .map(|&n| (n, average_recall(&boxes, &gt_lists, n)))
        .collect();
    let (ap, per_category_ap) = match task {
        Task::BasePrecision => match average_precision(&sorted, &gt_lists, &split.seen, max_dets) {
            Some(r) => (Some(r.ap), r.per_category),
            None => (None, BTreeMap::new()),
        },
        Task::NovelRecall => (None, BTreeMap::new()),
    };

    let evaluated_images: BTreeSet<u64> = gt.images.iter().map(|i| i.id).collect();
    let proposal_total: usize = proposals
        .iter()
        .filter(|(id, _)| evaluated_images.contains(id))
        .map(|(_, p)| p.len())
        .sum();
    Ok(EvalReport {
        task: match task {
            Task::NovelRecall => "novel-recall".into(),
            Task::BasePrecision => "base-precision".into(),
        },
        seen_classes: split.seen.len(),
        novel_classes: split.novel.len(),
        images: image_ids.len(),
        ground_truth: kept.len(),
        proposals: proposal_total,
        mean_proposals_per_image: if gt.images.is_empty() {
            0.0
        } else {
            proposal_total as f64 / gt.images.len() as f64
        },
        ar_at,
        ap,
        per_category_ap,
    })
}
