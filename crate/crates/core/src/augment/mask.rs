//! ROI-avoiding mask placement by rejection sampling.

use rand::Rng;

use super::{AugmentError, RoiBox};
use crate::rng;
use crate::tensor::Tensor;

/// A chosen inpainting region: where to synthesize, what class to put there,
/// and the seed that produced the placement.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MaskSpec {
    pub placement: RoiBox,
    pub target_class: u32,
    pub seed: u64,
}

impl MaskSpec {
    /// Rasterizes the placement to a binary `[H, W]` tensor (1 = synthesize).
    pub fn to_tensor(&self, dims: (u32, u32)) -> Tensor {
        let (w, h) = dims;
        Tensor::from_fn(vec![h as usize, w as usize], |i| {
            let y = (i / w as usize) as f64;
            let x = (i % w as usize) as f64;
            let inside = x >= self.placement.x
                && x < self.placement.right()
                && y >= self.placement.y
                && y < self.placement.bottom();
            if inside {
                1.0
            } else {
                0.0
            }
        })
    }
}

/// Rejection-samples an axis-aligned rectangle on the pixel grid that lies
/// inside the image and overlaps none of the excluded ROIs.
///
/// `dims` is `(width, height)`, `size_range` bounds both mask extents
/// (inclusive). Fails with `PlacementExhausted` once `max_attempts` samples
/// were rejected, which signals an over-constrained image.
pub fn generate_mask(
    dims: (u32, u32),
    excluded: &[RoiBox],
    size_range: (u32, u32),
    target_class: u32,
    seed: u64,
    max_attempts: u32,
) -> Result<MaskSpec, AugmentError> {
    let (img_w, img_h) = dims;
    let (lo, hi) = size_range;
    if lo == 0 || lo > hi {
        return Err(AugmentError::InvalidSizeRange(format!("[{lo}, {hi}]")));
    }
    if hi > img_w || hi > img_h {
        return Err(AugmentError::SizeRangeTooLarge(hi, hi, img_w, img_h));
    }
    let mut rng = rng::stream(seed, "augment:mask");
    for _ in 0..max_attempts {
        let w = rng.random_range(lo..=hi);
        let h = rng.random_range(lo..=hi);
        let x = rng.random_range(0..=img_w - w);
        let y = rng.random_range(0..=img_h - h);
        let candidate = RoiBox::new(x as f64, y as f64, w as f64, h as f64, target_class);
        if excluded.iter().all(|roi| !candidate.intersects(roi)) {
            return Ok(MaskSpec {
                placement: candidate,
                target_class,
                seed,
            });
        }
    }
    Err(AugmentError::PlacementExhausted(max_attempts))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_image_accepts_first_sample() {
        let spec = generate_mask((16, 16), &[], (4, 4), 1, 99, 1).unwrap();
        assert_eq!(spec.seed, 99);
        assert_eq!(spec.placement.w, 4.0);
        assert!(spec.placement.right() <= 16.0);
        assert!(spec.placement.bottom() <= 16.0);
    }

    #[test]
    fn fully_blocked_image_exhausts() {
        let wall = RoiBox::new(0.0, 0.0, 8.0, 8.0, 0);
        let err = generate_mask((8, 8), &[wall], (2, 2), 1, 0, 500).unwrap_err();
        assert!(matches!(err, AugmentError::PlacementExhausted(500)));
    }

    #[test]
    fn placements_avoid_rois_and_cover_the_feasible_set() {
        // 8x8 grid, one 4x4 ROI at (2,2), 2x2 masks. Brute-force the feasible
        // top-left cells, then check sampled placements collectively land on
        // every one of them and nowhere else.
        let roi = RoiBox::new(2.0, 2.0, 4.0, 4.0, 0);
        let mut feasible = std::collections::BTreeSet::new();
        for y in 0..=6u32 {
            for x in 0..=6u32 {
                let cand = RoiBox::new(x as f64, y as f64, 2.0, 2.0, 1);
                if !cand.intersects(&roi) {
                    feasible.insert((x, y));
                }
            }
        }
        assert!(!feasible.is_empty());

        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..10_000u64 {
            let spec = generate_mask((8, 8), &[roi], (2, 2), 1, seed, 1000).unwrap();
            let cell = (spec.placement.x as u32, spec.placement.y as u32);
            assert!(feasible.contains(&cell), "infeasible placement {cell:?}");
            seen.insert(cell);
        }
        assert_eq!(seen, feasible, "sampler did not cover the feasible set");
    }

    #[test]
    fn rasterized_mask_matches_placement() {
        let spec = MaskSpec {
            placement: RoiBox::new(1.0, 2.0, 2.0, 3.0, 7),
            target_class: 7,
            seed: 0,
        };
        let m = spec.to_tensor((4, 6));
        assert_eq!(m.shape(), &[6, 4]);
        assert_eq!(m.sum(), 6.0);
        assert_eq!(m.at2(2, 1), 1.0);
        assert_eq!(m.at2(4, 2), 1.0);
        assert_eq!(m.at2(5, 1), 0.0);
        assert_eq!(m.at2(2, 3), 0.0);
    }
}
