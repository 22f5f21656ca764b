//! Box and LTRB arithmetic.
//!
//! An [`Ltrb`] is the anchor-free regression unit: the distances from a
//! location to the left, right, top and bottom sides of a box. Every
//! objectness formula in the crate (centerness, LTRB-space IoU) is defined
//! here and consumed elsewhere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in corner form, input-image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxXYXY {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub category_id: Option<u64>,
}

impl BoxXYXY {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = BoxXYXY {
            x1,
            y1,
            x2,
            y2,
            category_id: None,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn with_category(mut self, category_id: u64) -> Self {
        self.category_id = Some(category_id);
        self
    }

    /// Checks finiteness and strictly positive area.
    pub fn validate(&self) -> Result<()> {
        let coords = [self.x1, self.y1, self.x2, self.y2];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidBox(format!("non-finite coordinate in {self:?}")));
        }
        if !(self.x1 < self.x2 && self.y1 < self.y2) {
            return Err(Error::InvalidBox(format!(
                "({}, {}, {}, {}) has non-positive area",
                self.x1, self.y1, self.x2, self.y2
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) * 0.5, (self.y1 + self.y2) * 0.5)
    }

    /// Strict interior test; points on an edge are outside.
    pub fn contains_strict(&self, x: f64, y: f64) -> bool {
        x > self.x1 && x < self.x2 && y > self.y1 && y < self.y2
    }

    /// Closed containment, edges included.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x1 && x <= self.x2 && y >= self.y1 && y <= self.y2
    }

    /// Clips to `[0, width] x [0, height]`. `None` when nothing with positive area remains.
    pub fn clip(&self, width: f64, height: f64) -> Option<BoxXYXY> {
        let clipped = BoxXYXY {
            x1: self.x1.clamp(0.0, width),
            y1: self.y1.clamp(0.0, height),
            x2: self.x2.clamp(0.0, width),
            y2: self.y2.clamp(0.0, height),
            category_id: self.category_id,
        };
        clipped.validate().ok().map(|_| clipped)
    }

    /// `[x, y, w, h]`, the annotation-file convention.
    pub fn to_xywh(&self) -> [f64; 4] {
        [self.x1, self.y1, self.width(), self.height()]
    }

    pub fn from_xywh(xywh: [f64; 4]) -> Result<Self> {
        let [x, y, w, h] = xywh;
        if !(w > 0.0 && h > 0.0) {
            return Err(Error::InvalidBox(format!("width/height must be positive, got w={w} h={h}")));
        }
        BoxXYXY::new(x, y, x + w, y + h)
    }
}

/// Distances from a location to the left, right, top and bottom box sides.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Ltrb {
    pub l: f64,
    pub r: f64,
    pub t: f64,
    pub b: f64,
}

impl Ltrb {
    pub fn new(l: f64, r: f64, t: f64, b: f64) -> Result<Self> {
        let d = Ltrb { l, r, t, b };
        d.validate()?;
        Ok(d)
    }

    /// All components finite and non-negative.
    pub fn validate(&self) -> Result<()> {
        let parts = self.to_array();
        if parts.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain(format!(
                "LTRB components must be finite and non-negative, got {parts:?}"
            )));
        }
        Ok(())
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.l, self.r, self.t, self.b]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Ltrb {
            l: a[0],
            r: a[1],
            t: a[2],
            b: a[3],
        }
    }

    pub fn max_component(&self) -> f64 {
        self.l.max(self.r).max(self.t).max(self.b)
    }

    /// Area of the box this tuple describes.
    pub fn area(&self) -> f64 {
        (self.l + self.r) * (self.t + self.b)
    }

    pub fn scaled(&self, s: f64) -> Ltrb {
        Ltrb {
            l: self.l * s,
            r: self.r * s,
            t: self.t * s,
            b: self.b * s,
        }
    }
}

/// Centerness target: `sqrt(min(l,r)/max(l,r) * min(t,b)/max(t,b))`.
pub fn centerness_target(target: &Ltrb) -> Result<f64> {
    target.validate()?;
    let (lr, tb) = (target.l + target.r, target.t + target.b);
    if lr <= 0.0 || tb <= 0.0 {
        return Err(Error::Domain(format!(
            "degenerate centerness target {:?}",
            target.to_array()
        )));
    }
    let horizontal = target.l.min(target.r) / target.l.max(target.r);
    let vertical = target.t.min(target.b) / target.t.max(target.b);
    Ok((horizontal * vertical).sqrt())
}

/// IoU of two LTRB tuples measured from the same location.
pub fn iou_ltrb(pred: &Ltrb, target: &Ltrb) -> Result<f64> {
    pred.validate()?;
    target.validate()?;
    let intersection =
        (pred.l.min(target.l) + pred.r.min(target.r)) * (pred.b.min(target.b) + pred.t.min(target.t));
    let union = target.area() + pred.area() - intersection;
    if union <= 0.0 {
        return Err(Error::Domain(format!(
            "non-positive union for {:?} vs {:?}",
            pred.to_array(),
            target.to_array()
        )));
    }
    Ok(intersection / union)
}

/// Intersection over union of two corner-form boxes; 0 when disjoint.
pub fn iou_xyxy(a: &BoxXYXY, b: &BoxXYXY) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Decodes a regression tuple at a location into a box.
pub fn ltrb_to_box(x: f64, y: f64, d: &Ltrb) -> Result<BoxXYXY> {
    d.validate()?;
    BoxXYXY::new(x - d.l, y - d.t, x + d.r, y + d.b)
}

/// Regression target for a location. `None` unless the location is strictly
/// inside the box; boundary locations are background.
pub fn box_to_ltrb(x: f64, y: f64, b: &BoxXYXY) -> Option<Ltrb> {
    if !b.contains_strict(x, y) {
        return None;
    }
    Some(Ltrb {
        l: x - b.x1,
        r: b.x2 - x,
        t: y - b.y1,
        b: b.y2 - y,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ltrb(l: f64, r: f64, t: f64, b: f64) -> Ltrb {
        Ltrb::new(l, r, t, b).unwrap()
    }

    #[test]
    fn centerness_examples() {
        assert_eq!(centerness_target(&ltrb(5.0, 5.0, 5.0, 5.0)).unwrap(), 1.0);
        assert_eq!(centerness_target(&ltrb(0.0, 8.0, 4.0, 4.0)).unwrap(), 0.0);
        assert!((centerness_target(&ltrb(1.0, 4.0, 2.0, 2.0)).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn centerness_rejects_degenerate() {
        assert!(centerness_target(&Ltrb { l: 0.0, r: 0.0, t: 1.0, b: 1.0 }).is_err());
        assert!(centerness_target(&Ltrb { l: 1.0, r: 1.0, t: 0.0, b: 0.0 }).is_err());
        assert!(centerness_target(&Ltrb { l: -1.0, r: 3.0, t: 1.0, b: 1.0 }).is_err());
    }

    #[test]
    fn iou_ltrb_examples() {
        let a = ltrb(1.0, 1.0, 1.0, 1.0);
        assert_eq!(iou_ltrb(&a, &a).unwrap(), 1.0);
        assert_eq!(iou_ltrb(&a, &ltrb(2.0, 2.0, 2.0, 2.0)).unwrap(), 0.25);
        assert_eq!(iou_ltrb(&ltrb(2.0, 2.0, 2.0, 2.0), &ltrb(2.0, 2.0, 1.0, 1.0)).unwrap(), 0.5);
    }

    #[test]
    fn iou_ltrb_zero_union_is_error() {
        let z = Ltrb::default();
        assert!(iou_ltrb(&z, &z).is_err());
    }

    #[test]
    fn iou_xyxy_examples() {
        let a = BoxXYXY::new(0.0, 0.0, 2.0, 2.0).unwrap();
        let b = BoxXYXY::new(1.0, 0.0, 3.0, 2.0).unwrap();
        let far = BoxXYXY::new(10.0, 10.0, 12.0, 12.0).unwrap();
        assert_eq!(iou_xyxy(&a, &a), 1.0);
        assert_eq!(iou_xyxy(&a, &far), 0.0);
        assert!((iou_xyxy(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn decode_examples() {
        let b = ltrb_to_box(5.0, 5.0, &ltrb(1.0, 1.0, 1.0, 1.0)).unwrap();
        assert_eq!((b.x1, b.y1, b.x2, b.y2), (4.0, 4.0, 6.0, 6.0));
        let b = ltrb_to_box(10.0, 4.0, &ltrb(2.0, 6.0, 1.0, 3.0)).unwrap();
        assert_eq!((b.x1, b.y1, b.x2, b.y2), (8.0, 3.0, 16.0, 7.0));
        assert!(ltrb_to_box(5.0, 5.0, &ltrb(0.0, 0.0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn encode_examples() {
        let b = BoxXYXY::new(0.0, 0.0, 10.0, 10.0).unwrap();
        assert_eq!(box_to_ltrb(5.0, 5.0, &b), Some(ltrb(5.0, 5.0, 5.0, 5.0)));
        assert_eq!(box_to_ltrb(2.0, 3.0, &b), Some(ltrb(2.0, 8.0, 3.0, 7.0)));
        assert_eq!(box_to_ltrb(0.0, 5.0, &b), None);
        assert_eq!(box_to_ltrb(11.0, 5.0, &b), None);
    }

    #[test]
    fn box_validation() {
        assert!(BoxXYXY::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BoxXYXY::new(0.0, f64::NAN, 1.0, 1.0).is_err());
        assert!(BoxXYXY::from_xywh([1.0, 1.0, 0.0, 2.0]).is_err());
        let b = BoxXYXY::from_xywh([10.0, 20.0, 30.0, 40.0]).unwrap();
        assert_eq!((b.x1, b.y1, b.x2, b.y2), (10.0, 20.0, 40.0, 60.0));
        assert_eq!(b.to_xywh(), [10.0, 20.0, 30.0, 40.0]);
    }

    #[test]
    fn clip_to_image() {
        let b = BoxXYXY::new(-5.0, 2.0, 50.0, 8.0).unwrap();
        let c = b.clip(20.0, 20.0).unwrap();
        assert_eq!((c.x1, c.y1, c.x2, c.y2), (0.0, 2.0, 20.0, 8.0));
        assert!(BoxXYXY::new(30.0, 30.0, 40.0, 40.0).unwrap().clip(20.0, 20.0).is_none());
    }

    fn positive() -> impl Strategy<Value = f64> {
        0.01f64..100.0
    }

    fn arb_ltrb() -> impl Strategy<Value = Ltrb> {
        (positive(), positive(), positive(), positive()).prop_map(|(l, r, t, b)| Ltrb { l, r, t, b })
    }

    proptest! {
        #[test]
        fn centerness_in_unit_interval_and_symmetric(d in arb_ltrb()) {
            let c = centerness_target(&d).unwrap();
            prop_assert!((0.0..=1.0).contains(&c));
            let swapped = Ltrb { l: d.r, r: d.l, t: d.b, b: d.t };
            prop_assert!((centerness_target(&swapped).unwrap() - c).abs() < 1e-12);
        }

        #[test]
        fn iou_paths_agree(p in arb_ltrb(), t in arb_ltrb(), x in -50.0f64..50.0, y in -50.0f64..50.0) {
            let direct = iou_ltrb(&p, &t).unwrap();
            let decoded = iou_xyxy(&ltrb_to_box(x, y, &p).unwrap(), &ltrb_to_box(x, y, &t).unwrap());
            prop_assert!((direct - decoded).abs() < 1e-9);
            prop_assert!((direct - iou_ltrb(&t, &p).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn scale_invariance(p in arb_ltrb(), t in arb_ltrb(), s in 0.1f64..10.0) {
            let a = iou_ltrb(&p, &t).unwrap();
            let b = iou_ltrb(&p.scaled(s), &t.scaled(s)).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
            let c0 = centerness_target(&t).unwrap();
            let c1 = centerness_target(&t.scaled(s)).unwrap();
            prop_assert!((c0 - c1).abs() < 1e-9);
        }

        #[test]
        fn round_trip_interior(x1 in -100.0f64..100.0, y1 in -100.0f64..100.0,
                               w in 1.0f64..100.0, h in 1.0f64..100.0,
                               fx in 0.01f64..0.99, fy in 0.01f64..0.99) {
            let b = BoxXYXY::new(x1, y1, x1 + w, y1 + h).unwrap();
            let (x, y) = (x1 + fx * w, y1 + fy * h);
            let d = box_to_ltrb(x, y, &b).unwrap();
            let back = ltrb_to_box(x, y, &d).unwrap();
            prop_assert!((back.x1 - b.x1).abs() < 1e-9 && (back.x2 - b.x2).abs() < 1e-9);
            prop_assert!((back.y1 - b.y1).abs() < 1e-9 && (back.y2 - b.y2).abs() < 1e-9);
        }
    }
}
