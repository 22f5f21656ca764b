//! Detection-results files: a JSON array of
//! `{"image_id", "bbox": [x, y, w, h], "score", "category_id"?}` records.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoxXYXY;
use crate::proposals::Proposal;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Record {
    image_id: u64,
    bbox: [f64; 4],
    score: f32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    category_id: Option<u64>,
}

/// Serializes proposals grouped by image id, images in ascending id order.
pub fn proposals_to_json(per_image: &BTreeMap<u64, Vec<Proposal>>) -> String {
    let records: Vec<Record> = per_image
        .iter()
        .flat_map(|(&image_id, props)| {
            props.iter().map(move |p| Record {
                image_id,
                bbox: p.bbox.to_xywh(),
                score: p.score as f32,
                category_id: p.class_id,
            })
        })
        .collect();
    serde_json::to_string(&records).expect("records serialize")
}

pub fn write_proposals(path: impl AsRef<Path>, per_image: &BTreeMap<u64, Vec<Proposal>>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, proposals_to_json(per_image)).map_err(|e| Error::io(path, e))
}

/// Parses a results array. Record order within an image is preserved; the
/// location fields of each proposal carry the record's position.
pub fn proposals_from_json(text: &str, path: &Path) -> Result<BTreeMap<u64, Vec<Proposal>>> {
    let records: Vec<Record> = serde_json::from_str(text).map_err(|e| Error::format(path, e.to_string()))?;
    let mut out: BTreeMap<u64, Vec<Proposal>> = BTreeMap::new();
    for (k, r) in records.into_iter().enumerate() {
        let bbox = BoxXYXY::from_xywh(r.bbox).map_err(|e| Error::format(path, format!("record {k}: {e}")))?;
        if !(0.0..=1.0).contains(&r.score) {
            return Err(Error::format(path, format!("record {k}: score {} outside [0,1]", r.score)));
        }
        out.entry(r.image_id).or_default().push(Proposal {
            bbox,
            score: r.score as f64,
            class_id: r.category_id,
            level: 0,
            row: 0,
            col: k,
        });
    }
    Ok(out)
}

pub fn read_proposals(path: impl AsRef<Path>) -> Result<BTreeMap<u64, Vec<Proposal>>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    proposals_from_json(&text, path)
}
