//! Background locations to exclude from classification supervision.
//!
//! The pixel variant excludes confident background locations themselves. The
//! area variant decodes each confident background location's predicted box
//! and excludes every background location inside it, on all levels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::assign::AssignmentResult;
use crate::error::{Error, Result};
use crate::geometry::ltrb_to_box;
use crate::maps::{check_level_shapes, DenseMap, DensePredictions, LevelMaps};
use crate::proposals::{nms, Proposal};

/// Thresholds studied for unknown-object masking.
pub const MASK_THRESHOLDS: [f64; 2] = [0.925, 0.95];
/// Iterations at which masking was switched on.
pub const MASK_START_ITERATIONS: [u64; 4] = [5_000, 10_000, 30_000, 60_000];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskVariant {
    Pixel,
    Area,
}

impl FromStr for MaskVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pixel" => Ok(MaskVariant::Pixel),
            "area" => Ok(MaskVariant::Area),
            _ => Err(Error::Invalid(format!("unknown mask variant {s:?}; expected pixel or area"))),
        }
    }
}

impl fmt::Display for MaskVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskVariant::Pixel => "pixel",
            MaskVariant::Area => "area",
        })
    }
}

/// Which prediction map acts as objectness for masking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectnessSource {
    #[default]
    Iou,
    Centerness,
    Geomean,
}

impl FromStr for ObjectnessSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "iou" => Ok(ObjectnessSource::Iou),
            "centerness" => Ok(ObjectnessSource::Centerness),
            "geomean" => Ok(ObjectnessSource::Geomean),
            _ => Err(Error::Invalid(format!(
                "unknown objectness source {s:?}; expected iou, centerness or geomean"
            ))),
        }
    }
}

pub fn objectness_maps(preds: &DensePredictions, source: ObjectnessSource) -> LevelMaps<f64> {
    preds
        .levels
        .iter()
        .map(|l| DenseMap {
            height: l.height,
            width: l.width,
            data: l
                .centerness
                .iter()
                .zip(&l.iou)
                .map(|(&c, &i)| match source {
                    ObjectnessSource::Iou => i as f64,
                    ObjectnessSource::Centerness => c as f64,
                    ObjectnessSource::Geomean => (c as f64 * i as f64).sqrt(),
                })
                .collect(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackgroundMask {
    /// Per level, row-major; `true` means excluded from background supervision.
    pub excluded: Vec<Vec<bool>>,
}

impl BackgroundMask {
    pub fn count(&self) -> usize {
        self.excluded.iter().flatten().filter(|&&e| e).count()
    }

    pub fn is_subset_of(&self, other: &BackgroundMask) -> bool {
        self.excluded.len() == other.excluded.len()
            && self
                .excluded
                .iter()
                .zip(&other.excluded)
                .all(|(a, b)| a.len() == b.len() && a.iter().zip(b).all(|(&x, &y)| !x || y))
    }
}

fn check_shapes(objectness: &[DenseMap<f64>], assignment: &AssignmentResult) -> Result<()> {
    let shapes: Vec<DenseMap<()>> = assignment
        .levels
        .iter()
        .map(|l| DenseMap::filled(l.grid.height, l.grid.width, ()))
        .collect();
    check_level_shapes(objectness, &shapes, "objectness")
}

fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(Error::Invalid(format!("mask threshold must be in (0,1), got {threshold}")))
    }
}

/// Background locations with objectness strictly above `threshold`.
pub fn unknown_object_mask(
    objectness: &[DenseMap<f64>],
    assignment: &AssignmentResult,
    threshold: f64,
) -> Result<BackgroundMask> {
    check_threshold(threshold)?;
    check_shapes(objectness, assignment)?;
    Ok(BackgroundMask {
        excluded: objectness
            .iter()
            .zip(&assignment.levels)
            .map(|(map, level)| {
                map.data
                    .iter()
                    .zip(&level.cells)
                    .map(|(&o, cell)| cell.is_none() && o > threshold)
                    .collect()
            })
            .collect(),
    })
}

/// Box-level masking. Each trigger (background, objectness above threshold)
/// is always excluded itself; when its predicted box decodes to a positive
/// area, every background location inside that box (edges included) is
/// excluded too. `trigger_nms` thins overlapping trigger boxes first.
pub fn unknown_area_mask(
    objectness: &[DenseMap<f64>],
    regression: &DensePredictions,
    assignment: &AssignmentResult,
    threshold: f64,
    trigger_nms: Option<f64>,
) -> Result<BackgroundMask> {
    let mut mask = unknown_object_mask(objectness, assignment, threshold)?;
    if regression.levels.len() != assignment.levels.len()
        || regression
            .levels
            .iter()
            .zip(&assignment.levels)
            .any(|(r, a)| r.height != a.grid.height || r.width != a.grid.width)
    {
        return Err(Error::Shape("regression maps differ from the assignment grid".into()));
    }

    let mut triggers = Vec::new();
    for (level, (excluded, la)) in mask.excluded.iter().zip(&assignment.levels).enumerate() {
        for (index, _) in excluded.iter().enumerate().filter(|(_, &e)| e) {
            let (x, y) = la.grid.coords_of(index);
            // degenerate predictions contribute only the trigger location
            if let Ok(bbox) = ltrb_to_box(x, y, &regression.levels[level].regression_at(index)) {
                triggers.push(Proposal {
                    bbox,
                    score: objectness[level].data[index],
                    class_id: None,
                    level,
                    row: index / la.grid.width,
                    col: index % la.grid.width,
                });
            }
        }
    }
    if let Some(iou) = trigger_nms {
        triggers = nms(&triggers, iou, false);
    }

    for trigger in &triggers {
        let b = trigger.bbox;
        for (excluded, la) in mask.excluded.iter_mut().zip(&assignment.levels) {
            let g = la.grid;
            let s = g.stride as f64;
            let offset = (g.stride / 2) as f64;
            // column/row span whose lattice coordinates can fall in [x1, x2]
            let col_lo = ((b.x1 - offset) / s).ceil().max(0.0) as usize;
            let col_hi = ((b.x2 - offset) / s).floor();
            let row_lo = ((b.y1 - offset) / s).ceil().max(0.0) as usize;
            let row_hi = ((b.y2 - offset) / s).floor();
            if col_hi < 0.0 || row_hi < 0.0 {
                continue;
            }
            let col_hi = (col_hi as usize).min(g.width.saturating_sub(1));
            let row_hi = (row_hi as usize).min(g.height.saturating_sub(1));
            for row in row_lo..=row_hi {
                for col in col_lo..=col_hi {
                    let index = row * g.width + col;
                    let (x, y) = g.coords(row, col);
                    if la.cells[index].is_none() && b.contains(x, y) {
                        excluded[index] = true;
                    }
                }
            }
        }
    }
    Ok(mask)
}

/// True once masking is active.
pub fn masking_schedule(iteration: u64, start_iteration: u64) -> bool {
    iteration >= start_iteration
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assign::{assign_targets, make_grids, FpnLevelSpec};
    use crate::geometry::BoxXYXY;
    use crate::maps::LevelPredictions;

    fn level8() -> Vec<FpnLevelSpec> {
        vec![FpnLevelSpec {
            stride: 8,
            range_min: 0.0,
            range_max: f64::INFINITY,
        }]
    }

    #[test]
    fn pixel_mask_examples() {
        let levels = level8();
        let grids = make_grids(16, 16, &levels);
        let fg = BoxXYXY::new(1.0, 1.0, 7.0, 7.0).unwrap();
        let a = assign_targets(&[fg], &levels, &grids, 1.5).unwrap();
        let obj = vec![DenseMap::from_vec(2, 2, vec![0.99, 0.96, 0.2, 0.95]).unwrap()];
        let m = unknown_object_mask(&obj, &a, 0.95).unwrap();
        // foreground never excluded; 0.95 is not above 0.95
        assert_eq!(m.excluded[0], vec![false, true, false, false]);
    }

    #[test]
    fn pixel_mask_shape_mismatch() {
        let levels = level8();
        let grids = make_grids(16, 16, &levels);
        let a = assign_targets(&[], &levels, &grids, 1.5).unwrap();
        let obj = vec![DenseMap::filled(3, 3, 0.0)];
        assert!(unknown_object_mask(&obj, &a, 0.95).is_err());
    }

    #[test]
    fn area_mask_example() {
        let levels = level8();
        let grids = make_grids(48, 48, &levels);
        let a = assign_targets(&[], &levels, &grids, 1.5).unwrap();
        let mut level = LevelPredictions::zeros(8, 6, 6, 0);
        // trigger at (20, 20): row 2, col 2
        let trigger = 2 * 6 + 2;
        level.iou[trigger] = 0.99;
        level.regression[trigger] = [10.0, 10.0, 10.0, 10.0];
        let preds = DensePredictions { levels: vec![level] };
        let obj = objectness_maps(&preds, ObjectnessSource::Iou);

        let m = unknown_area_mask(&obj, &preds, &a, 0.95, None).unwrap();
        // brute force: lattice coords 4,12,20,28,... inside [10,30]
        let mut expected = vec![false; 36];
        for (i, e) in expected.iter_mut().enumerate() {
            let (x, y) = grids[0].coords_of(i);
            *e = (10.0..=30.0).contains(&x) && (10.0..=30.0).contains(&y);
        }
        assert_eq!(m.excluded[0], expected);
        assert_eq!(m.count(), 9);

        let pixel = unknown_object_mask(&obj, &a, 0.95).unwrap();
        assert!(pixel.is_subset_of(&m));
    }

    #[test]
    fn area_mask_degenerate_trigger_keeps_itself() {
        let levels = level8();
        let grids = make_grids(16, 16, &levels);
        let a = assign_targets(&[], &levels, &grids, 1.5).unwrap();
        let mut level = LevelPredictions::zeros(8, 2, 2, 0);
        level.iou[3] = 0.99;
        let preds = DensePredictions { levels: vec![level] };
        let obj = objectness_maps(&preds, ObjectnessSource::Iou);
        let m = unknown_area_mask(&obj, &preds, &a, 0.95, None).unwrap();
        assert_eq!(m.excluded[0], vec![false, false, false, true]);
    }

    #[test]
    fn area_mask_spares_foreground() {
        let levels = level8();
        let grids = make_grids(32, 32, &levels);
        let fg = BoxXYXY::new(1.0, 1.0, 7.0, 7.0).unwrap();
        let a = assign_targets(&[fg], &levels, &grids, 1.5).unwrap();
        let mut level = LevelPredictions::zeros(8, 4, 4, 0);
        level.iou[5] = 0.99;
        level.regression[5] = [100.0; 4];
        let preds = DensePredictions { levels: vec![level] };
        let obj = objectness_maps(&preds, ObjectnessSource::Iou);
        let m = unknown_area_mask(&obj, &preds, &a, 0.95, Some(0.6)).unwrap();
        assert_eq!(m.count(), 15);
        assert!(!m.excluded[0][0]);
    }

    #[test]
    fn empty_when_nothing_confident() {
        let levels = level8();
        let grids = make_grids(16, 16, &levels);
        let a = assign_targets(&[], &levels, &grids, 1.5).unwrap();
        let preds = DensePredictions { levels: vec![LevelPredictions::zeros(8, 2, 2, 0)] };
        let obj = objectness_maps(&preds, ObjectnessSource::Geomean);
        assert_eq!(unknown_area_mask(&obj, &preds, &a, 0.95, None).unwrap().count(), 0);
    }

    #[test]
    fn schedule() {
        assert!(!masking_schedule(4999, 5000));
        assert!(masking_schedule(5000, 5000));
        assert!(masking_schedule(0, 0));
        assert!(masking_schedule(123, 0));
    }
}
