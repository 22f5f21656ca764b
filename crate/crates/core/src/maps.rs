//! Row-major per-level maps and the dense prediction bundle.

use crate::error::{Error, Result};
use crate::geometry::Ltrb;

/// One H x W map, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMap<T> {
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Clone> DenseMap<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        DenseMap {
            height,
            width,
            data: vec![value; height * width],
        }
    }
}

impl<T> DenseMap<T> {
    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "{}x{} map needs {} values, got {}",
                height,
                width,
                height * width,
                data.len()
            )));
        }
        Ok(DenseMap { height, width, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> &T {
        &self.data[row * self.width + col]
    }

    pub fn same_shape<U>(&self, other: &DenseMap<U>) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// Dense maps for every pyramid level.
pub type LevelMaps<T> = Vec<DenseMap<T>>;

pub(crate) fn check_level_shapes<A, B>(a: &[DenseMap<A>], b: &[DenseMap<B>], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "{what}: {} levels vs {} levels",
            a.len(),
            b.len()
        )));
    }
    for (level, (ma, mb)) in a.iter().zip(b).enumerate() {
        if !ma.same_shape(mb) {
            return Err(Error::Shape(format!(
                "{what}: level {level} is {}x{} vs {}x{}",
                ma.height, ma.width, mb.height, mb.width
            )));
        }
    }
    Ok(())
}

/// Network outputs for one pyramid level, stored as 32-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelPredictions {
    pub stride: u32,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    /// `height * width * num_classes`, channels-last.
    pub classification: Vec<f32>,
    /// Per location `[l, r, t, b]`.
    pub regression: Vec<[f32; 4]>,
    pub centerness: Vec<f32>,
    pub iou: Vec<f32>,
}

impl LevelPredictions {
    pub fn zeros(stride: u32, height: usize, width: usize, num_classes: usize) -> Self {
        let n = height * width;
        LevelPredictions {
            stride,
            height,
            width,
            num_classes,
            classification: vec![0.0; n * num_classes],
            regression: vec![[0.0; 4]; n],
            centerness: vec![0.0; n],
            iou: vec![0.0; n],
        }
    }

    pub fn locations(&self) -> usize {
        self.height * self.width
    }

    pub fn regression_at(&self, index: usize) -> Ltrb {
        let [l, r, t, b] = self.regression[index];
        Ltrb {
            l: l as f64,
            r: r as f64,
            t: t as f64,
            b: b as f64,
        }
    }

    pub fn class_scores(&self, index: usize) -> &[f32] {
        &self.classification[index * self.num_classes..(index + 1) * self.num_classes]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.locations();
        if self.classification.len() != n * self.num_classes
            || self.regression.len() != n
            || self.centerness.len() != n
            || self.iou.len() != n
        {
            return Err(Error::Shape(format!(
                "stride-{} level: map sizes disagree with {}x{}x{}",
                self.stride, self.height, self.width, self.num_classes
            )));
        }
        let score_ok = |v: &f32| v.is_finite() && (0.0..=1.0).contains(v);
        if !self.classification.iter().all(score_ok)
            || !self.centerness.iter().all(score_ok)
            || !self.iou.iter().all(score_ok)
        {
            return Err(Error::Invalid(format!("stride-{} level: score outside [0,1]", self.stride)));
        }
        if !self.regression.iter().flatten().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::Invalid(format!(
                "stride-{} level: negative or non-finite regression",
                self.stride
            )));
        }
        Ok(())
    }

    pub fn centerness_map(&self) -> DenseMap<f32> {
        DenseMap {
            height: self.height,
            width: self.width,
            data: self.centerness.clone(),
        }
    }

    pub fn iou_map(&self) -> DenseMap<f32> {
        DenseMap {
            height: self.height,
            width: self.width,
            data: self.iou.clone(),
        }
    }

    pub fn regression_map(&self) -> DenseMap<Ltrb> {
        DenseMap {
            height: self.height,
            width: self.width,
            data: (0..self.locations()).map(|i| self.regression_at(i)).collect(),
        }
    }
}

/// All pyramid levels of one image.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DensePredictions {
    pub levels: Vec<LevelPredictions>,
}

impl DensePredictions {
    pub fn validate(&self) -> Result<()> {
        let classes = self.levels.first().map(|l| l.num_classes);
        for level in &self.levels {
            level.validate()?;
            if Some(level.num_classes) != classes {
                return Err(Error::Shape("class count differs between levels".into()));
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.levels.first().map_or(0, |l| l.num_classes)
    }

    pub fn regression_maps(&self) -> LevelMaps<Ltrb> {
        self.levels.iter().map(LevelPredictions::regression_map).collect()
    }

    /// Extent covered by the finest level's lattice; a stand-in for the image
    /// size when only the prediction maps are known.
    pub fn lattice_extent(&self) -> (f64, f64) {
        self.levels.first().map_or((0.0, 0.0), |l| {
            (
                (l.width * l.stride as usize) as f64,
                (l.height * l.stride as usize) as f64,
            )
        })
    }
}
