//! Reference loss values. Inputs are probabilities; applying the sigmoid is
//! the caller's job.

use crate::error::{Error, Result};
use crate::geometry::{iou_ltrb, Ltrb};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        FocalParams {
            alpha: 0.25,
            gamma: 2.0,
        }
    }
}

fn check_probability(pred: f64) -> Result<()> {
    if pred > 0.0 && pred < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("prediction must lie strictly in (0,1), got {pred}")))
    }
}

pub fn bce_loss(pred: f64, target: f64) -> Result<f64> {
    check_probability(pred)?;
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::Domain(format!("BCE target must lie in [0,1], got {target}")));
    }
    Ok(-(target * pred.ln() + (1.0 - target) * (1.0 - pred).ln()))
}

/// `-ln(IoU)` between predicted and target regression.
pub fn iou_loss(pred: &Ltrb, target: &Ltrb) -> Result<f64> {
    let iou = iou_ltrb(pred, target)?;
    if iou <= 0.0 {
        return Err(Error::Domain("IoU loss undefined at zero overlap".into()));
    }
    Ok(-iou.ln())
}

pub fn focal_loss(pred: f64, label: bool, params: FocalParams) -> Result<f64> {
    check_probability(pred)?;
    if !(params.alpha > 0.0 && params.alpha < 1.0) || !(params.gamma >= 0.0) {
        return Err(Error::Domain(format!("invalid focal parameters {params:?}")));
    }
    let (p_t, alpha_t) = if label {
        (pred, params.alpha)
    } else {
        (1.0 - pred, 1.0 - params.alpha)
    };
    Ok(-alpha_t * (1.0 - p_t).powf(params.gamma) * p_t.ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    #[test]
    fn bce_examples() {
        assert!((bce_loss(0.5, 1.0).unwrap() - LN_2).abs() < 1e-12);
        assert!((bce_loss(0.5, 0.5).unwrap() - LN_2).abs() < 1e-12);
        assert!(bce_loss(1.0 - 1e-12, 1.0).unwrap() < 1e-9);
        assert!(bce_loss(1e-12, 0.0).unwrap() < 1e-9);
        assert!(bce_loss(0.0, 0.0).is_err());
        assert!(bce_loss(1.0, 1.0).is_err());
    }

    #[test]
    fn iou_loss_examples() {
        let t = Ltrb { l: 2.0, r: 2.0, t: 2.0, b: 2.0 };
        assert_eq!(iou_loss(&t, &t).unwrap(), 0.0);
        let p = Ltrb { l: 1.0, r: 1.0, t: 1.0, b: 1.0 };
        assert!((iou_loss(&p, &t).unwrap() - 1.3862943611198906).abs() < 1e-12);
        let zero = Ltrb { l: 0.0, r: 0.0, t: 1.0, b: 1.0 };
        assert!(iou_loss(&zero, &t).is_err());
    }

    #[test]
    fn focal_examples() {
        let p = FocalParams::default();
        assert!((focal_loss(0.5, true, p).unwrap() - 0.25 * 0.25 * LN_2).abs() < 1e-12);
        assert!((focal_loss(0.5, true, p).unwrap() - 0.04332).abs() < 1e-5);
        assert!(focal_loss(1.0 - 1e-9, true, p).unwrap() < 1e-12);
        assert!(focal_loss(0.0, false, p).is_err());
    }

    proptest! {
        #[test]
        fn focal_gamma_zero_is_weighted_bce(pred in 0.001f64..0.999, label: bool, alpha in 0.01f64..0.99) {
            let params = FocalParams { alpha, gamma: 0.0 };
            let weight = if label { alpha } else { 1.0 - alpha };
            let bce = bce_loss(pred, if label { 1.0 } else { 0.0 }).unwrap();
            prop_assert!((focal_loss(pred, label, params).unwrap() - weight * bce).abs() < 1e-12);
        }

        #[test]
        fn losses_non_negative(pred in 0.001f64..0.999, target in 0.0f64..=1.0, label: bool) {
            prop_assert!(bce_loss(pred, target).unwrap() >= 0.0);
            prop_assert!(focal_loss(pred, label, FocalParams::default()).unwrap() >= 0.0);
        }

        #[test]
        fn iou_loss_decreases_with_iou(s1 in 0.1f64..1.0, s2 in 0.1f64..1.0) {
            // shrinking a centered prediction lowers its IoU monotonically
            let t = Ltrb { l: 4.0, r: 4.0, t: 4.0, b: 4.0 };
            let (lo, hi) = if s1 < s2 { (s1, s2) } else { (s2, s1) };
            prop_assume!(hi - lo > 1e-6);
            let iou_lo = iou_ltrb(&t.scaled(lo), &t).unwrap();
            let iou_hi = iou_ltrb(&t.scaled(hi), &t).unwrap();
            prop_assert!(iou_lo < iou_hi);
            prop_assert!(iou_loss(&t.scaled(lo), &t).unwrap() > iou_loss(&t.scaled(hi), &t).unwrap());
        }
    }
}
