//! Auto-annotation of synthetic images.
//!
//! Labels come from the known mask placement plus an optional jitter model
//! that emulates an imperfect automated annotator: uniform translation and
//! size noise, clipped back into the image.

use rand::Rng;

use super::{MaskSpec, RoiBox};
use crate::rng;

/// Uniform annotation noise, in pixels. Zero everywhere means exact labels.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Jitter {
    /// Translation bound: dx, dy ~ U[-translate, translate].
    pub translate: f64,
    /// Size bound: dw, dh ~ U[-resize, resize].
    pub resize: f64,
}

impl Jitter {
    pub const NONE: Jitter = Jitter {
        translate: 0.0,
        resize: 0.0,
    };
}

/// Produces the label box for a synthetic placement. The result always lies
/// inside the image and keeps at least a 1x1 extent.
pub fn auto_annotate(mask: &MaskSpec, jitter: Jitter, dims: (u32, u32), seed: u64) -> RoiBox {
    let (img_w, img_h) = (dims.0 as f64, dims.1 as f64);
    let p = mask.placement;
    let mut label = if jitter == Jitter::NONE {
        p
    } else {
        let mut rng = rng::stream(seed, "augment:annotate");
        let dx = rng.random_range(-jitter.translate..=jitter.translate);
        let dy = rng.random_range(-jitter.translate..=jitter.translate);
        let dw = rng.random_range(-jitter.resize..=jitter.resize);
        let dh = rng.random_range(-jitter.resize..=jitter.resize);
        RoiBox::new(p.x + dx, p.y + dy, (p.w + dw).max(1.0), (p.h + dh).max(1.0), p.class_id)
    };
    label.class_id = mask.target_class;
    // Clip to image bounds, shrinking before shifting so the box stays valid.
    label.w = label.w.min(img_w);
    label.h = label.h.min(img_h);
    label.x = label.x.clamp(0.0, img_w - label.w);
    label.y = label.y.clamp(0.0, img_h - label.h);
    label
}
