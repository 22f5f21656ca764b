//! Location lattices and per-location ground-truth assignment.
//!
//! Each pyramid level owns a lattice of locations spaced `stride` pixels apart
//! with offset `floor(stride / 2)`. A location is foreground when it lies
//! strictly inside a box and the largest component of its LTRB target falls in
//! the level's `[range_min, range_max)` band. Overlaps go to the smallest box,
//! lowest index on exact area ties.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{box_to_ltrb, centerness_target, iou_ltrb, BoxXYXY, Ltrb};
use crate::maps::{check_level_shapes, DenseMap, LevelMaps};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpnLevelSpec {
    pub stride: u32,
    pub range_min: f64,
    /// May be `f64::INFINITY` for the coarsest level.
    pub range_max: f64,
}

impl FpnLevelSpec {
    pub fn in_range(&self, max_distance: f64) -> bool {
        max_distance >= self.range_min && max_distance < self.range_max
    }
}

/// Strides 8..128 with regression bands `[0,64), [64,128), [128,256), [256,512), [512,inf)`.
pub fn default_levels() -> Vec<FpnLevelSpec> {
    let bounds = [0.0, 64.0, 128.0, 256.0, 512.0, f64::INFINITY];
    [8u32, 16, 32, 64, 128]
        .iter()
        .enumerate()
        .map(|(k, &stride)| FpnLevelSpec {
            stride,
            range_min: bounds[k],
            range_max: bounds[k + 1],
        })
        .collect()
}

/// Checks increasing strides and contiguous, non-overlapping ranges.
pub fn validate_levels(levels: &[FpnLevelSpec]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::Invalid("at least one pyramid level is required".into()));
    }
    for (k, level) in levels.iter().enumerate() {
        if level.stride == 0 {
            return Err(Error::Invalid(format!("level {k}: stride must be positive")));
        }
        if level.range_min.is_nan() || level.range_max.is_nan() || level.range_min >= level.range_max {
            return Err(Error::Invalid(format!(
                "level {k}: empty range [{}, {})",
                level.range_min, level.range_max
            )));
        }
    }
    for (k, pair) in levels.windows(2).enumerate() {
        if pair[1].stride <= pair[0].stride {
            return Err(Error::Invalid(format!("level {}: strides must strictly increase", k + 1)));
        }
        if pair[0].range_max != pair[1].range_min {
            return Err(Error::Invalid(format!(
                "levels {k} and {}: ranges are not contiguous ({} vs {})",
                k + 1,
                pair[0].range_max,
                pair[1].range_min
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocationGrid {
    pub level: usize,
    pub stride: u32,
    pub height: usize,
    pub width: usize,
}

impl LocationGrid {
    /// Image coordinates `(x, y)` of cell `(row, col)`.
    pub fn coords(&self, row: usize, col: usize) -> (f64, f64) {
        let offset = (self.stride / 2) as f64;
        let s = self.stride as f64;
        (offset + col as f64 * s, offset + row as f64 * s)
    }

    pub fn coords_of(&self, index: usize) -> (f64, f64) {
        self.coords(index / self.width, index % self.width)
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn make_locations(image_h: usize, image_w: usize, level: usize, spec: &FpnLevelSpec) -> LocationGrid {
    let s = spec.stride as usize;
    LocationGrid {
        level,
        stride: spec.stride,
        height: image_h.div_ceil(s),
        width: image_w.div_ceil(s),
    }
}

pub fn make_grids(image_h: usize, image_w: usize, levels: &[FpnLevelSpec]) -> Vec<LocationGrid> {
    levels
        .iter()
        .enumerate()
        .map(|(k, spec)| make_locations(image_h, image_w, k, spec))
        .collect()
}

/// Targets for one foreground location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Foreground {
    /// Index into the box list passed to [`assign_targets`].
    pub gt: usize,
    pub regression: Ltrb,
    pub centerness: f64,
    pub center_sampled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelAssignment {
    pub grid: LocationGrid,
    /// Row-major; `None` is background.
    pub cells: Vec<Option<Foreground>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentResult {
    pub levels: Vec<LevelAssignment>,
}

impl AssignmentResult {
    pub fn total_locations(&self) -> usize {
        self.levels.iter().map(|l| l.cells.len()).sum()
    }

    pub fn foreground_count(&self) -> usize {
        self.foreground().count()
    }

    pub fn center_sampled_count(&self) -> usize {
        self.foreground().filter(|(_, _, fg)| fg.center_sampled).count()
    }

    /// `(level, index, target)` for every foreground location in level then row-major order.
    pub fn foreground(&self) -> impl Iterator<Item = (usize, usize, &Foreground)> {
        self.levels.iter().enumerate().flat_map(|(k, level)| {
            level
                .cells
                .iter()
                .enumerate()
                .filter_map(move |(i, c)| c.as_ref().map(|fg| (k, i, fg)))
        })
    }

    pub fn is_foreground(&self, level: usize, index: usize) -> bool {
        self.levels[level].cells[index].is_some()
    }

    pub fn grids(&self) -> Vec<LocationGrid> {
        self.levels.iter().map(|l| l.grid).collect()
    }

    /// Centerness targets as dense maps, background 0.
    pub fn centerness_targets(&self) -> LevelMaps<f64> {
        self.levels
            .iter()
            .map(|l| DenseMap {
                height: l.grid.height,
                width: l.grid.width,
                data: l.cells.iter().map(|c| c.map_or(0.0, |fg| fg.centerness)).collect(),
            })
            .collect()
    }
}

pub fn assign_targets(
    boxes: &[BoxXYXY],
    levels: &[FpnLevelSpec],
    grids: &[LocationGrid],
    center_radius: f64,
) -> Result<AssignmentResult> {
    if !(center_radius > 0.0) {
        return Err(Error::Invalid(format!("center radius must be positive, got {center_radius}")));
    }
    if levels.len() != grids.len() {
        return Err(Error::Shape(format!(
            "{} level specs for {} grids",
            levels.len(),
            grids.len()
        )));
    }
    for b in boxes {
        b.validate()?;
    }

    let levels = levels
        .iter()
        .zip(grids)
        .map(|(spec, grid)| {
            let half_side = center_radius * spec.stride as f64;
            let cells = (0..grid.len())
                .map(|index| {
                    let (x, y) = grid.coords_of(index);
                    assign_location(boxes, spec, half_side, x, y)
                })
                .collect();
            LevelAssignment { grid: *grid, cells }
        })
        .collect();
    Ok(AssignmentResult { levels })
}

fn assign_location(
    boxes: &[BoxXYXY],
    spec: &FpnLevelSpec,
    half_side: f64,
    x: f64,
    y: f64,
) -> Option<Foreground> {
    let mut best: Option<(usize, Ltrb, f64)> = None;
    for (gt, b) in boxes.iter().enumerate() {
        let Some(d) = box_to_ltrb(x, y, b) else {
            continue;
        };
        if !spec.in_range(d.max_component()) {
            continue;
        }
        let area = b.area();
        // strict < keeps the lowest index on exact ties
        if best.is_none_or(|(_, _, best_area)| area < best_area) {
            best = Some((gt, d, area));
        }
    }
    let (gt, regression, _) = best?;
    let (cx, cy) = boxes[gt].center();
    let center_sampled = (x - cx).abs() < half_side && (y - cy).abs() < half_side;
    Some(Foreground {
        gt,
        regression,
        centerness: centerness_target(&regression).expect("strict interior gives positive extents"),
        center_sampled,
    })
}

/// IoU between the predicted and target regression at each foreground
/// location; background carries 0.
pub fn compute_iou_targets(
    assignment: &AssignmentResult,
    predicted: &[DenseMap<Ltrb>],
) -> Result<LevelMaps<f64>> {
    let shapes: Vec<DenseMap<()>> = assignment
        .levels
        .iter()
        .map(|l| DenseMap::filled(l.grid.height, l.grid.width, ()))
        .collect();
    check_level_shapes(&shapes, predicted, "iou targets")?;
    assignment
        .levels
        .iter()
        .zip(predicted)
        .map(|(level, pred)| {
            let data = level
                .cells
                .iter()
                .zip(&pred.data)
                .map(|(cell, p)| match cell {
                    Some(fg) => iou_ltrb(p, &fg.regression),
                    None => Ok(0.0),
                })
                .collect::<Result<Vec<f64>>>()?;
            DenseMap::from_vec(pred.height, pred.width, data)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ltrb_to_box;

    fn single_level(stride: u32) -> Vec<FpnLevelSpec> {
        vec![FpnLevelSpec {
            stride,
            range_min: 0.0,
            range_max: f64::INFINITY,
        }]
    }

    #[test]
    fn lattice_examples() {
        let spec = single_level(8)[0];
        let g = make_locations(16, 16, 0, &spec);
        assert_eq!((g.height, g.width), (2, 2));
        assert_eq!(g.coords(0, 0), (4.0, 4.0));
        assert_eq!(g.coords(1, 1), (12.0, 12.0));
        assert_eq!(g.coords(0, 1), (12.0, 4.0));

        let g = make_locations(17, 17, 0, &spec);
        assert_eq!((g.height, g.width), (3, 3));

        let unit = FpnLevelSpec { stride: 1, ..spec };
        let g = make_locations(3, 5, 0, &unit);
        assert_eq!((g.height, g.width), (3, 5));
        assert_eq!(g.coords(2, 4), (4.0, 2.0));
    }

    #[test]
    fn default_levels_are_valid() {
        let levels = default_levels();
        validate_levels(&levels).unwrap();
        assert_eq!(levels.iter().map(|l| l.stride).collect::<Vec<_>>(), [8, 16, 32, 64, 128]);
        assert_eq!(levels[4].range_max, f64::INFINITY);
    }

    #[test]
    fn level_validation_rejects_gaps_and_order() {
        let mut levels = default_levels();
        levels[1].range_min = 70.0;
        assert!(validate_levels(&levels).is_err());
        let mut levels = default_levels();
        levels.swap(0, 1);
        assert!(validate_levels(&levels).is_err());
        assert!(validate_levels(&[]).is_err());
    }

    #[test]
    fn whole_image_box_matches_every_interior_location() {
        let levels = single_level(8);
        let grids = make_grids(32, 32, &levels);
        let b = BoxXYXY::new(0.0, 0.0, 32.0, 32.0).unwrap();
        let a = assign_targets(&[b], &levels, &grids, 1.5).unwrap();
        assert_eq!(a.foreground_count(), 16);
        assert!(a.foreground().all(|(_, _, fg)| fg.gt == 0));
    }

    #[test]
    fn empty_boxes_give_background() {
        let levels = default_levels();
        let grids = make_grids(64, 64, &levels);
        let a = assign_targets(&[], &levels, &grids, 1.5).unwrap();
        assert_eq!(a.foreground_count(), 0);
        assert_eq!(a.total_locations(), 64 + 16 + 4 + 1 + 1);
    }

    #[test]
    fn outside_location_is_background() {
        let levels = single_level(8);
        let grids = make_grids(32, 32, &levels);
        let b = BoxXYXY::new(0.0, 0.0, 10.0, 10.0).unwrap();
        let a = assign_targets(&[b], &levels, &grids, 1.5).unwrap();
        // only (4,4) is inside
        assert_eq!(a.foreground_count(), 1);
        assert!(a.levels[0].cells[0].is_some());
        assert!(a.levels[0].cells[1].is_none());
    }

    #[test]
    fn nested_boxes_go_to_smaller() {
        let levels = single_level(1);
        let grids = make_grids(30, 30, &levels);
        let outer = BoxXYXY::new(0.0, 0.0, 20.0, 20.0).unwrap();
        let inner = BoxXYXY::new(8.0, 8.0, 13.0, 13.0).unwrap();
        assert_eq!(inner.area(), 25.0);
        assert_eq!(outer.area(), 400.0);
        let a = assign_targets(&[outer, inner], &levels, &grids, 1.5).unwrap();
        // location (10, 10) is row 10, col 10 at stride 1 (offset 0)
        let fg = a.levels[0].cells[10 * 30 + 10].unwrap();
        assert_eq!(fg.gt, 1);
        let fg = a.levels[0].cells[3 * 30 + 3].unwrap();
        assert_eq!(fg.gt, 0);
    }

    #[test]
    fn equal_area_tie_goes_to_lowest_index() {
        let levels = single_level(1);
        let grids = make_grids(10, 10, &levels);
        let a_box = BoxXYXY::new(0.0, 0.0, 6.0, 4.0).unwrap();
        let b_box = BoxXYXY::new(0.0, 0.0, 4.0, 6.0).unwrap();
        let a = assign_targets(&[a_box, b_box], &levels, &grids, 1.5).unwrap();
        assert_eq!(a.levels[0].cells[10 + 1].unwrap().gt, 0);
    }

    #[test]
    fn range_excludes_out_of_band_locations() {
        let levels = vec![
            FpnLevelSpec { stride: 8, range_min: 0.0, range_max: 8.0 },
            FpnLevelSpec { stride: 16, range_min: 8.0, range_max: f64::INFINITY },
        ];
        let grids = make_grids(64, 64, &levels);
        let b = BoxXYXY::new(0.0, 0.0, 40.0, 40.0).unwrap();
        let a = assign_targets(&[b], &levels, &grids, 1.5).unwrap();
        // stride-8 locations inside a 40px box have max distance >= 20
        assert!(a.levels[0].cells.iter().all(Option::is_none));
        assert!(a.levels[1].cells.iter().any(Option::is_some));
    }

    #[test]
    fn center_sampling_radius() {
        let levels = single_level(8);
        let grids = make_grids(64, 64, &levels);
        let b = BoxXYXY::new(0.0, 0.0, 64.0, 64.0).unwrap();
        // half side 8 around (32,32): lattice x in {28, 36} only
        let a = assign_targets(&[b], &levels, &grids, 1.0).unwrap();
        assert_eq!(a.center_sampled_count(), 4);
        assert_eq!(a.foreground_count(), 64);
    }

    #[test]
    fn decoded_targets_reproduce_gt() {
        let levels = default_levels();
        let grids = make_grids(256, 256, &levels);
        let boxes = [
            BoxXYXY::new(10.0, 12.0, 90.0, 70.0).unwrap(),
            BoxXYXY::new(30.5, 40.5, 200.0, 250.0).unwrap(),
        ];
        let a = assign_targets(&boxes, &levels, &grids, 1.5).unwrap();
        assert!(a.foreground_count() > 0);
        for (k, i, fg) in a.foreground() {
            let (x, y) = a.levels[k].grid.coords_of(i);
            let d = ltrb_to_box(x, y, &fg.regression).unwrap();
            let gt = boxes[fg.gt];
            assert_eq!((d.x1, d.y1, d.x2, d.y2), (gt.x1, gt.y1, gt.x2, gt.y2));
            assert_eq!(fg.centerness, centerness_target(&fg.regression).unwrap());
        }
    }

    #[test]
    fn invalid_radius_rejected() {
        let levels = single_level(8);
        let grids = make_grids(8, 8, &levels);
        assert!(assign_targets(&[], &levels, &grids, 0.0).is_err());
    }

    #[test]
    fn iou_targets_examples() {
        let levels = single_level(8);
        let grids = make_grids(16, 16, &levels);
        let b = BoxXYXY::new(2.0, 2.0, 6.0, 6.0).unwrap();
        let a = assign_targets(&[b], &levels, &grids, 1.5).unwrap();
        let mut pred = DenseMap::filled(2, 2, Ltrb { l: 1.0, r: 1.0, t: 1.0, b: 1.0 });
        let t = compute_iou_targets(&a, &[pred.clone()]).unwrap();
        assert_eq!(t[0].data, vec![0.25, 0.0, 0.0, 0.0]);

        pred.data[0] = a.levels[0].cells[0].unwrap().regression;
        let t = compute_iou_targets(&a, &[pred]).unwrap();
        assert_eq!(t[0].data[0], 1.0);

        let empty = assign_targets(&[], &levels, &grids, 1.5).unwrap();
        let t = compute_iou_targets(&empty, &[DenseMap::filled(2, 2, Ltrb::default())]).unwrap();
        assert!(t[0].data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn iou_targets_shape_mismatch() {
        let levels = single_level(8);
        let grids = make_grids(16, 16, &levels);
        let a = assign_targets(&[], &levels, &grids, 1.5).unwrap();
        assert!(compute_iou_targets(&a, &[DenseMap::filled(3, 2, Ltrb::default())]).is_err());
        assert!(compute_iou_targets(&a, &[]).is_err());
    }
}
