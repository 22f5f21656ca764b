//! JSON configuration with defaults for every field.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assign::{default_levels, validate_levels, FpnLevelSpec};
use crate::error::{Error, Result};
use crate::masking::{MaskVariant, ObjectnessSource, MASK_START_ITERATIONS};
use crate::proposals::{
    PipelineParams, ScoringMode, COCO_POST_NMS_N, DEFAULT_NMS_IOU, DEFAULT_PRE_NMS_K, DEFAULT_PRE_NMS_THRESHOLD,
    LVIS_POST_NMS_N,
};
use crate::sampling::{SamplingMode, DEFAULT_IOU_SAMPLING_THRESHOLD, DEFAULT_POSITIVE_CUT};
use crate::synth::{NoiseSpec, SceneSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub strides: Vec<u32>,
    /// `[min, max]` per level; `null` max means unbounded.
    pub ranges: Vec<(f64, Option<f64>)>,
    pub center_radius: f64,
    pub iou_sampling_threshold: f64,
    pub positive_cut: f64,
    pub sampling_mode: SamplingMode,
    pub scoring_mode: ScoringMode,
    pub pre_nms_k: usize,
    pub pre_nms_threshold: f64,
    pub nms_iou: f64,
    pub post_nms_n: usize,
    pub post_nms_threshold: f64,
    /// `null` follows the scoring mode.
    pub class_agnostic_nms: Option<bool>,
    pub unknown_mask_threshold: f64,
    pub mask_start_iteration: u64,
    pub mask_variant: MaskVariant,
    pub mask_objectness: ObjectnessSource,
    /// IoU threshold for NMS over area-mask triggers; `null` disables it.
    pub area_mask_nms: Option<f64>,
    pub ar_n: Vec<usize>,
    pub max_dets: usize,
    pub bins: usize,
    pub jobs: Option<usize>,
    pub noise: NoiseSpec,
    pub scene: SceneSpec,
}

impl Default for Config {
    fn default() -> Self {
        let levels = default_levels();
        Config {
            strides: levels.iter().map(|l| l.stride).collect(),
            ranges: levels
                .iter()
                .map(|l| (l.range_min, l.range_max.is_finite().then_some(l.range_max)))
                .collect(),
            center_radius: 1.5,
            iou_sampling_threshold: DEFAULT_IOU_SAMPLING_THRESHOLD,
            positive_cut: DEFAULT_POSITIVE_CUT,
            sampling_mode: SamplingMode::CsIs,
            scoring_mode: ScoringMode::Iou,
            pre_nms_k: DEFAULT_PRE_NMS_K,
            pre_nms_threshold: DEFAULT_PRE_NMS_THRESHOLD,
            nms_iou: DEFAULT_NMS_IOU,
            post_nms_n: COCO_POST_NMS_N,
            post_nms_threshold: 0.0,
            class_agnostic_nms: None,
            unknown_mask_threshold: 0.95,
            mask_start_iteration: MASK_START_ITERATIONS[0],
            mask_variant: MaskVariant::Pixel,
            mask_objectness: ObjectnessSource::Iou,
            area_mask_nms: None,
            ar_n: vec![10, 100],
            max_dets: COCO_POST_NMS_N,
            bins: 20,
            jobs: None,
            noise: NoiseSpec::default(),
            scene: SceneSpec::default(),
        }
    }
}

fn unit_open(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::Invalid(format!("{name} must be in (0,1), got {v}")))
    }
}

impl Config {
    /// Defaults with 300 post-NMS proposals and AR@300.
    pub fn lvis() -> Self {
        Config {
            post_nms_n: LVIS_POST_NMS_N,
            max_dets: LVIS_POST_NMS_N,
            ar_n: vec![10, 100, 300],
            ..Config::default()
        }
    }

    pub fn levels(&self) -> Result<Vec<FpnLevelSpec>> {
        if self.strides.len() != self.ranges.len() {
            return Err(Error::Invalid(format!(
                "{} strides but {} ranges",
                self.strides.len(),
                self.ranges.len()
            )));
        }
        let levels: Vec<FpnLevelSpec> = self
            .strides
            .iter()
            .zip(&self.ranges)
            .map(|(&stride, &(min, max))| FpnLevelSpec {
                stride,
                range_min: min,
                range_max: max.unwrap_or(f64::INFINITY),
            })
            .collect();
        validate_levels(&levels)?;
        Ok(levels)
    }

    pub fn validate(&self) -> Result<()> {
        self.levels()?;
        if !(self.center_radius > 0.0) {
            return Err(Error::Invalid(format!("center_radius must be positive, got {}", self.center_radius)));
        }
        unit_open("iou_sampling_threshold", self.iou_sampling_threshold)?;
        unit_open("positive_cut", self.positive_cut)?;
        unit_open("unknown_mask_threshold", self.unknown_mask_threshold)?;
        if !(0.0..=1.0).contains(&self.nms_iou) {
            return Err(Error::Invalid(format!("nms_iou must be in [0,1], got {}", self.nms_iou)));
        }
        if self.pre_nms_k == 0 || self.post_nms_n == 0 || self.max_dets == 0 {
            return Err(Error::Invalid("pre_nms_k, post_nms_n and max_dets must be positive".into()));
        }
        if self.ar_n.contains(&0) {
            return Err(Error::Invalid("ar_n entries must be positive".into()));
        }
        if self.bins < 2 {
            return Err(Error::Invalid("bins must be at least 2".into()));
        }
        if self.jobs == Some(0) {
            return Err(Error::Invalid("jobs must be positive".into()));
        }
        self.noise.validate()?;
        self.scene.validate()?;
        Ok(())
    }

    pub fn pipeline_params(&self) -> PipelineParams {
        PipelineParams {
            pre_nms_k: self.pre_nms_k,
            pre_nms_threshold: self.pre_nms_threshold,
            nms_iou: self.nms_iou,
            post_nms_n: self.post_nms_n,
            post_nms_threshold: self.post_nms_threshold,
            class_agnostic_nms: self.class_agnostic_nms,
            image_size: None,
            class_ids: None,
        }
    }

    /// Parses a JSON object. Unknown keys are dropped and reported in the
    /// returned warnings; type mismatches and invalid values are errors.
    pub fn from_json_str(text: &str) -> Result<(Config, Vec<String>)> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Invalid(e.to_string()))?;
        let serde_json::Value::Object(mut map) = value else {
            return Err(Error::Invalid("configuration must be a JSON object".into()));
        };
        let known = serde_json::to_value(Config::default()).expect("config serializes");
        let known = known.as_object().expect("config is an object");
        let mut warnings = Vec::new();
        map.retain(|key, _| {
            let ok = known.contains_key(key);
            if !ok {
                warnings.push(format!("unknown configuration key {key:?} ignored"));
            }
            ok
        });
        let config: Config =
            serde_json::from_value(serde_json::Value::Object(map)).map_err(|e| Error::Invalid(e.to_string()))?;
        config.validate()?;
        Ok((config, warnings))
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<Config> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (config, warnings) = Config::from_json_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    for w in warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(config)
}
