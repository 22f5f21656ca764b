//! Binary container for dense prediction maps.
//!
//! Layout, all integers and reals little-endian:
//!
//! ```text
//! magic "OWPD" | version u32 = 1 | level count u32
//! per level:
//!   stride u32 | H u32 | W u32 | class channels C u32
//!   classification  H*W*C f32
//!   regression      H*W*4 f32   (l, r, t, b)
//!   centerness      H*W   f32
//!   iou             H*W   f32
//! ```
//!
//! Every map is row-major, channels-last.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::maps::{DensePredictions, LevelPredictions};

pub const MAGIC: &[u8; 4] = b"OWPD";
pub const VERSION: u32 = 1;

pub fn encode_dense_maps(preds: &DensePredictions) -> Vec<u8> {
    let payload: usize = preds
        .levels
        .iter()
        .map(|l| 16 + 4 * l.locations() * (l.num_classes + 6))
        .sum();
    let mut out = Vec::with_capacity(12 + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(preds.levels.len() as u32).to_le_bytes());
    for level in &preds.levels {
        for v in [level.stride, level.height as u32, level.width as u32, level.num_classes as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let floats = level
            .classification
            .iter()
            .chain(level.regression.iter().flatten())
            .chain(&level.centerness)
            .chain(&level.iou);
        for v in floats {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> std::result::Result<&[u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            format!(
                "truncated at byte {} reading {what} ({n} bytes needed, {} left)",
                self.pos,
                self.bytes.len() - self.pos
            )
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> std::result::Result<u32, String> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, count: usize, what: &str) -> std::result::Result<Vec<f32>, String> {
        let n = count.checked_mul(4).ok_or_else(|| format!("{what}: size overflow"))?;
        let b = self.take(n, what)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

pub fn decode_dense_maps(bytes: &[u8]) -> std::result::Result<DensePredictions, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err("bad magic, expected OWPD".into());
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let count = r.u32("level count")?;
    let mut levels = Vec::new();
    for k in 0..count {
        let stride = r.u32("stride")?;
        let height = r.u32("height")? as usize;
        let width = r.u32("width")? as usize;
        let num_classes = r.u32("channel count")? as usize;
        let n = height
            .checked_mul(width)
            .ok_or_else(|| format!("level {k}: size overflow"))?;
        let classification = r.f32s(
            n.checked_mul(num_classes).ok_or_else(|| format!("level {k}: size overflow"))?,
            "classification",
        )?;
        let regression = r
            .f32s(n * 4, "regression")?
            .chunks_exact(4)
            .map(|c| [c[0], c[1], c[2], c[3]])
            .collect();
        let centerness = r.f32s(n, "centerness")?;
        let iou = r.f32s(n, "iou")?;
        levels.push(LevelPredictions {
            stride,
            height,
            width,
            num_classes,
            classification,
            regression,
            centerness,
            iou,
        });
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes after last level", bytes.len() - r.pos));
    }
    Ok(DensePredictions { levels })
}

pub fn write_dense_maps(path: impl AsRef<Path>, preds: &DensePredictions) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_dense_maps(preds)).map_err(|e| Error::io(path, e))
}

pub fn read_dense_maps(path: impl AsRef<Path>) -> Result<DensePredictions> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dense_maps(&bytes).map_err(|m| Error::format(path, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> DensePredictions {
        let mut level = LevelPredictions::zeros(8, 2, 2, 1);
        level.classification = vec![0.1, 0.2, 0.3, 0.4];
        level.regression[1] = [1.0, 2.0, 3.0, 4.0];
        level.iou[3] = 0.75;
        DensePredictions { levels: vec![level] }
    }

    #[test]
    fn single_level_size() {
        let bytes = encode_dense_maps(&sample());
        assert_eq!(bytes.len(), 12 + 16 + 4 * (1 + 4 + 1 + 1) * 4);
        assert_eq!(&bytes[..4], b"OWPD");
        assert_eq!(decode_dense_maps(&bytes).unwrap(), sample());
    }

    #[test]
    fn rejects_corruption() {
        let bytes = encode_dense_maps(&sample());
        assert!(decode_dense_maps(&bytes[..bytes.len() - 1]).unwrap_err().contains("truncated"));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_dense_maps(&bad).unwrap_err().contains("magic"));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(decode_dense_maps(&bad).unwrap_err().contains("version"));
        let mut long = bytes;
        long.push(0);
        assert!(decode_dense_maps(&long).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.owpd");
        write_dense_maps(&path, &sample()).unwrap();
        assert_eq!(read_dense_maps(&path).unwrap(), sample());
        assert!(matches!(read_dense_maps(dir.path().join("missing")), Err(Error::Io { .. })));
    }

    fn arb_level() -> impl Strategy<Value = LevelPredictions> {
        (1u32..64, 0usize..5, 0usize..5, 0usize..4).prop_flat_map(|(stride, h, w, c)| {
            let n = h * w;
            (
                prop::collection::vec(any::<f32>(), n * c),
                prop::collection::vec(any::<[f32; 4]>(), n),
                prop::collection::vec(any::<f32>(), n),
                prop::collection::vec(any::<f32>(), n),
            )
                .prop_map(move |(classification, regression, centerness, iou)| LevelPredictions {
                    stride,
                    height: h,
                    width: w,
                    num_classes: c,
                    classification,
                    regression,
                    centerness,
                    iou,
                })
        })
    }

    proptest! {
        #[test]
        fn encode_decode_is_bit_identical(levels in prop::collection::vec(arb_level(), 0..4)) {
            let preds = DensePredictions { levels };
            let bytes = encode_dense_maps(&preds);
            let back = decode_dense_maps(&bytes).unwrap();
            prop_assert_eq!(encode_dense_maps(&back), bytes);
        }
    }
}
