//! Objectness training-set construction.
//!
//! Three regimes are supported: foreground locations inside the center radius
//! with raw targets, the same locations after IoU sampling zeroes low-quality
//! targets, and every location with background carrying 0.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::assign::AssignmentResult;
use crate::error::{Error, Result};
use crate::maps::{check_level_shapes, DenseMap, LevelMaps};

pub const DEFAULT_IOU_SAMPLING_THRESHOLD: f64 = 0.3;
pub const DEFAULT_POSITIVE_CUT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// Center-sampled foreground, raw targets.
    FcosDefault,
    /// Center-sampled foreground, IoU-sampled targets.
    CsIs,
    /// Every location on every level.
    All,
}

impl SamplingMode {
    pub const NAMES: [&'static str; 3] = ["fcos_default", "cs_is", "all"];
}

impl FromStr for SamplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "fcos_default" | "fcos" => Ok(SamplingMode::FcosDefault),
            "cs_is" => Ok(SamplingMode::CsIs),
            "all" => Ok(SamplingMode::All),
            _ => Err(Error::Invalid(format!(
                "unknown sampling mode {s:?}; expected one of {}",
                Self::NAMES.join(", ")
            ))),
        }
    }
}

impl fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            SamplingMode::FcosDefault => "fcos_default",
            SamplingMode::CsIs => "cs_is",
            SamplingMode::All => "all",
        };
        f.write_str(name)
    }
}

/// Zeroes foreground targets strictly below `threshold`. Background and
/// targets at or above the threshold are left alone.
pub fn iou_sampling(
    iou_targets: &[DenseMap<f64>],
    assignment: &AssignmentResult,
    threshold: f64,
) -> Result<LevelMaps<f64>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Invalid(format!("IoU sampling threshold must be in (0,1), got {threshold}")));
    }
    check_shapes(iou_targets, assignment)?;
    Ok(iou_targets
        .iter()
        .zip(&assignment.levels)
        .map(|(map, level)| DenseMap {
            height: map.height,
            width: map.width,
            data: map
                .data
                .iter()
                .zip(&level.cells)
                .map(|(&v, cell)| if cell.is_some() && v < threshold { 0.0 } else { v })
                .collect(),
        })
        .collect())
}

fn check_shapes(targets: &[DenseMap<f64>], assignment: &AssignmentResult) -> Result<()> {
    let shapes: Vec<DenseMap<()>> = assignment
        .levels
        .iter()
        .map(|l| DenseMap::filled(l.grid.height, l.grid.width, ()))
        .collect();
    check_level_shapes(targets, &shapes, "objectness targets")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub level: usize,
    pub index: usize,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObjectnessTrainingSet {
    pub samples: Vec<Sample>,
    pub foreground: usize,
    pub background: usize,
}

impl ObjectnessTrainingSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn targets(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.target)
    }
}

/// Builds the sample set for one image. `targets` are the branch targets
/// (IoU or centerness) with background at 0; `iou_threshold` only matters
/// for [`SamplingMode::CsIs`].
pub fn build_objectness_training_set(
    assignment: &AssignmentResult,
    targets: &[DenseMap<f64>],
    mode: SamplingMode,
    iou_threshold: f64,
) -> Result<ObjectnessTrainingSet> {
    check_shapes(targets, assignment)?;
    let sampled;
    let source: &[DenseMap<f64>] = if mode == SamplingMode::CsIs {
        sampled = iou_sampling(targets, assignment, iou_threshold)?;
        &sampled
    } else {
        targets
    };

    let mut set = ObjectnessTrainingSet::default();
    for (level, (map, la)) in source.iter().zip(&assignment.levels).enumerate() {
        for (index, (&v, cell)) in map.data.iter().zip(&la.cells).enumerate() {
            let keep = match mode {
                SamplingMode::All => true,
                SamplingMode::FcosDefault | SamplingMode::CsIs => cell.is_some_and(|fg| fg.center_sampled),
            };
            if !keep {
                continue;
            }
            let target = if cell.is_some() { v } else { 0.0 };
            if !(0.0..=1.0).contains(&target) {
                return Err(Error::Domain(format!("objectness target {target} outside [0,1]")));
            }
            if cell.is_some() {
                set.foreground += 1;
            } else {
                set.background += 1;
            }
            set.samples.push(Sample { level, index, target });
        }
    }
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct BalanceStats {
    pub positives: usize,
    pub negatives: usize,
    /// positives / negatives; infinite with no negatives, 0 for an empty set.
    pub ratio: f64,
}

pub fn sample_balance_stats(set: &ObjectnessTrainingSet, positive_cut: f64) -> Result<BalanceStats> {
    if !(positive_cut > 0.0 && positive_cut < 1.0) {
        return Err(Error::Invalid(format!("positive cut must be in (0,1), got {positive_cut}")));
    }
    Ok(balance_of(set.targets(), positive_cut))
}

pub(crate) fn balance_of(targets: impl Iterator<Item = f64>, positive_cut: f64) -> BalanceStats {
    let (mut positives, mut negatives) = (0usize, 0usize);
    for t in targets {
        if t > positive_cut {
            positives += 1;
        } else {
            negatives += 1;
        }
    }
    let ratio = match (positives, negatives) {
        (0, 0) => 0.0,
        (_, 0) => f64::INFINITY,
        (p, n) => p as f64 / n as f64,
    };
    BalanceStats {
        positives,
        negatives,
        ratio,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assign::{assign_targets, make_grids, FpnLevelSpec};
    use crate::geometry::BoxXYXY;

    fn level() -> Vec<FpnLevelSpec> {
        vec![FpnLevelSpec {
            stride: 8,
            range_min: 0.0,
            range_max: f64::INFINITY,
        }]
    }

    /// 2x2 grid, one box covering location 0 only, center-sampled.
    fn fixture() -> AssignmentResult {
        let levels = level();
        let grids = make_grids(16, 16, &levels);
        let b = BoxXYXY::new(1.0, 1.0, 7.0, 7.0).unwrap();
        assign_targets(&[b], &levels, &grids, 1.5).unwrap()
    }

    fn map(values: [f64; 4]) -> Vec<DenseMap<f64>> {
        vec![DenseMap::from_vec(2, 2, values.to_vec()).unwrap()]
    }

    #[test]
    fn iou_sampling_examples() {
        let a = fixture();
        assert_eq!(iou_sampling(&map([0.2, 0.0, 0.0, 0.0]), &a, 0.3).unwrap()[0].data[0], 0.0);
        assert_eq!(iou_sampling(&map([0.95, 0.0, 0.0, 0.0]), &a, 0.3).unwrap()[0].data[0], 0.95);
        assert_eq!(iou_sampling(&map([0.3, 0.0, 0.0, 0.0]), &a, 0.3).unwrap()[0].data[0], 0.3);
    }

    #[test]
    fn iou_sampling_leaves_background() {
        let a = fixture();
        let out = iou_sampling(&map([0.1, 0.2, 0.1, 0.05]), &a, 0.3).unwrap();
        assert_eq!(out[0].data, vec![0.0, 0.2, 0.1, 0.05]);
    }

    #[test]
    fn iou_sampling_threshold_domain() {
        let a = fixture();
        assert!(iou_sampling(&map([0.0; 4]), &a, 0.0).is_err());
        assert!(iou_sampling(&map([0.0; 4]), &a, 1.0).is_err());
    }

    #[test]
    fn training_set_modes() {
        let a = fixture();
        let t = map([0.1, 0.0, 0.0, 0.0]);
        let all = build_objectness_training_set(&a, &t, SamplingMode::All, 0.3).unwrap();
        assert_eq!(all.len(), 4);
        assert_eq!((all.foreground, all.background), (1, 3));

        let cs_is = build_objectness_training_set(&a, &t, SamplingMode::CsIs, 0.3).unwrap();
        assert_eq!(cs_is.samples, vec![Sample { level: 0, index: 0, target: 0.0 }]);

        let fcos = build_objectness_training_set(&a, &t, SamplingMode::FcosDefault, 0.3).unwrap();
        assert_eq!(fcos.samples, vec![Sample { level: 0, index: 0, target: 0.1 }]);
    }

    #[test]
    fn default_mode_on_background_image_is_empty() {
        let levels = level();
        let grids = make_grids(16, 16, &levels);
        let a = assign_targets(&[], &levels, &grids, 1.5).unwrap();
        let set = build_objectness_training_set(&a, &map([0.0; 4]), SamplingMode::FcosDefault, 0.3).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn balance_examples() {
        let set = ObjectnessTrainingSet {
            samples: [0.9, 0.8, 0.1, 0.0]
                .iter()
                .enumerate()
                .map(|(i, &t)| Sample { level: 0, index: i, target: t })
                .collect(),
            foreground: 4,
            background: 0,
        };
        let s = sample_balance_stats(&set, 0.5).unwrap();
        assert_eq!((s.positives, s.negatives, s.ratio), (2, 2, 1.0));

        let ones = ObjectnessTrainingSet {
            samples: vec![Sample { level: 0, index: 0, target: 1.0 }],
            foreground: 1,
            background: 0,
        };
        assert_eq!(sample_balance_stats(&ones, 0.5).unwrap().ratio, f64::INFINITY);

        let empty = sample_balance_stats(&ObjectnessTrainingSet::default(), 0.5).unwrap();
        assert_eq!(empty, BalanceStats::default());
    }

    #[test]
    fn mode_names_round_trip() {
        for name in SamplingMode::NAMES {
            let mode: SamplingMode = name.parse().unwrap();
            assert_eq!(mode.to_string(), name);
        }
        assert!("bogus".parse::<SamplingMode>().is_err());
    }
}
