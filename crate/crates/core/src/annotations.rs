//! COCO-style annotation files. LVIS files use the same schema plus a
//! per-category `frequency` tag.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoxXYXY;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frequency {
    #[serde(rename = "r", alias = "rare")]
    Rare,
    #[serde(rename = "c", alias = "common")]
    Common,
    #[serde(rename = "f", alias = "frequent")]
    Frequent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: u64,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency: Option<Frequency>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub id: u64,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub file_name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: BoxXYXY,
}

#[derive(Serialize, Deserialize)]
struct RawAnnotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
}

#[derive(Serialize, Deserialize)]
struct RawFile {
    images: Vec<ImageInfo>,
    annotations: Vec<RawAnnotation>,
    categories: Vec<Category>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnotationSet {
    pub images: Vec<ImageInfo>,
    pub annotations: Vec<Annotation>,
    pub categories: Vec<Category>,
}

impl AnnotationSet {
    pub fn image(&self, id: u64) -> Option<&ImageInfo> {
        self.images.iter().find(|i| i.id == id)
    }

    pub fn boxes_for(&self, image_id: u64) -> Vec<BoxXYXY> {
        self.annotations
            .iter()
            .filter(|a| a.image_id == image_id)
            .map(|a| a.bbox.with_category(a.category_id))
            .collect()
    }

    /// Ground-truth boxes grouped by image id, every image present.
    pub fn boxes_by_image(&self) -> BTreeMap<u64, Vec<BoxXYXY>> {
        let mut out: BTreeMap<u64, Vec<BoxXYXY>> = self.images.iter().map(|i| (i.id, Vec::new())).collect();
        for a in &self.annotations {
            out.entry(a.image_id)
                .or_default()
                .push(a.bbox.with_category(a.category_id));
        }
        out
    }

    /// Category ids in ascending order; the class-channel order of dense maps.
    pub fn class_ids(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self.categories.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        ids
    }

    pub fn from_json_str(text: &str, path: &Path) -> Result<Self> {
        let raw: RawFile = serde_json::from_str(text).map_err(|e| Error::format(path, e.to_string()))?;
        let set = AnnotationSet {
            annotations: raw
                .annotations
                .iter()
                .enumerate()
                .map(|(k, a)| {
                    let bbox = BoxXYXY::from_xywh(a.bbox)
                        .map_err(|e| Error::format(path, format!("annotations[{k}] (id {}): {e}", a.id)))?;
                    Ok(Annotation {
                        id: a.id,
                        image_id: a.image_id,
                        category_id: a.category_id,
                        bbox,
                    })
                })
                .collect::<Result<_>>()?,
            images: raw.images,
            categories: raw.categories,
        };
        set.validate().map_err(|e| Error::format(path, e.to_string()))?;
        Ok(set)
    }

    pub fn to_json_string(&self) -> String {
        let raw = RawFile {
            images: self.images.clone(),
            annotations: self
                .annotations
                .iter()
                .map(|a| RawAnnotation {
                    id: a.id,
                    image_id: a.image_id,
                    category_id: a.category_id,
                    bbox: a.bbox.to_xywh(),
                })
                .collect(),
            categories: self.categories.clone(),
        };
        serde_json::to_string_pretty(&raw).expect("annotation set serializes")
    }

    /// Unique ids and resolvable references.
    pub fn validate(&self) -> Result<()> {
        let mut image_ids = HashSet::new();
        for (k, im) in self.images.iter().enumerate() {
            if !image_ids.insert(im.id) {
                return Err(Error::Invalid(format!("images[{k}]: duplicate image id {}", im.id)));
            }
            if im.width == 0 || im.height == 0 {
                return Err(Error::Invalid(format!("images[{k}]: image {} has zero size", im.id)));
            }
        }
        let mut category_ids = HashSet::new();
        for (k, c) in self.categories.iter().enumerate() {
            if !category_ids.insert(c.id) {
                return Err(Error::Invalid(format!("categories[{k}]: duplicate category id {}", c.id)));
            }
        }
        let mut annotation_ids = HashSet::new();
        for (k, a) in self.annotations.iter().enumerate() {
            if !annotation_ids.insert(a.id) {
                return Err(Error::Invalid(format!("annotations[{k}]: duplicate annotation id {}", a.id)));
            }
            if !image_ids.contains(&a.image_id) {
                return Err(Error::Invalid(format!(
                    "annotations[{k}] (id {}): image id {} not found",
                    a.id, a.image_id
                )));
            }
            if !category_ids.contains(&a.category_id) {
                return Err(Error::Invalid(format!(
                    "annotations[{k}] (id {}): category id {} not found",
                    a.id, a.category_id
                )));
            }
            a.bbox
                .validate()
                .map_err(|e| Error::Invalid(format!("annotations[{k}] (id {}): {e}", a.id)))?;
        }
        Ok(())
    }

    pub fn category_names(&self) -> HashMap<u64, &str> {
        self.categories.iter().map(|c| (c.id, c.name.as_str())).collect()
    }
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<AnnotationSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    AnnotationSet::from_json_str(&text, path)
}

pub fn write_annotations(path: impl AsRef<Path>, set: &AnnotationSet) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, set.to_json_string()).map_err(|e| Error::io(path, e))
}
