//! Non-learned machinery of one-stage open-world proposal generation.
//!
//! * [`geometry`]: LTRB and box arithmetic, centerness and IoU formulas
//! * [`assign`]: pyramid lattices and per-location target assignment
//! * [`sampling`]: objectness training sets and IoU sampling
//! * [`losses`]: reference BCE, IoU and focal loss values
//! * [`masking`]: unknown-object and unknown-area background masks
//! * [`proposals`]: scoring, pre-NMS selection, NMS, post-NMS selection
//! * [`eval`]: class splits, AR@N, AP, score histograms
//! * [`annotations`], [`densefile`], [`results`], [`config`]: file formats
//! * [`synth`]: seeded synthetic detector and scenario driver

pub mod annotations;
pub mod assign;
pub mod config;
pub mod densefile;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod losses;
pub mod maps;
pub mod masking;
pub mod proposals;
pub mod results;
pub mod rng;
pub mod sampling;
pub mod synth;

pub use error::{Error, Result};
pub use geometry::{BoxXYXY, Ltrb};
