//! Inpainting-augmentation planning: ROI-avoiding mask placement, the
//! 10%..200% sweep ladder, dataset assembly, and auto-annotation.

mod annotate;
mod dataset;
mod mask;
mod plan;

pub use annotate::{auto_annotate, Jitter};
pub use dataset::{
    assemble_dataset, load_manifest, read_label_file, save_manifest, write_label_file,
    DatasetManifest, ManifestItem, Provenance,
};
pub use mask::{generate_mask, MaskSpec};
pub use plan::{plan_sweep, SweepPlan, SWEEP_PERCENTS};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("mask placement exhausted after {0} attempts")]
    PlacementExhausted(u32),
    #[error("mask size range {0}x{1} does not fit image {2}x{3}")]
    SizeRangeTooLarge(u32, u32, u32, u32),
    #[error("invalid size range: {0}")]
    InvalidSizeRange(String),
    #[error("synthetic pool too small: need {need}, have {have}")]
    InsufficientPool { need: usize, have: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
}

/// Axis-aligned box with a class label. Coordinates are continuous with the
/// top-left origin; area is `w * h` (no +1 pixel convention). Grid-aligned
/// placements simply use integer-valued fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub class_id: u32,
}

impl RoiBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64, class_id: u32) -> Self {
        Self { x, y, w, h, class_id }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    /// True when the boxes overlap with positive area; shared edges do not
    /// count as intersection.
    pub fn intersects(&self, other: &RoiBox) -> bool {
        self.x < other.right()
            && other.x < self.right()
            && self.y < other.bottom()
            && other.y < self.bottom()
    }

    pub fn contains_box(&self, inner: &RoiBox) -> bool {
        inner.x >= self.x
            && inner.y >= self.y
            && inner.right() <= self.right()
            && inner.bottom() <= self.bottom()
    }

    /// Center/size representation normalized by image dims, the label-file layout.
    pub fn to_normalized(&self, img_w: f64, img_h: f64) -> (u32, f64, f64, f64, f64) {
        (
            self.class_id,
            (self.x + self.w / 2.0) / img_w,
            (self.y + self.h / 2.0) / img_h,
            self.w / img_w,
            self.h / img_h,
        )
    }

    pub fn from_normalized(class_id: u32, cx: f64, cy: f64, w: f64, h: f64, img_w: f64, img_h: f64) -> Self {
        Self {
            x: cx * img_w - w * img_w / 2.0,
            y: cy * img_h - h * img_h / 2.0,
            w: w * img_w,
            h: h * img_h,
            class_id,
        }
    }
}
