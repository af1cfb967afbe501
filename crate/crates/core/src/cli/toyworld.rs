//! Synthetic scene generation for the desk-scale experiments.
//!
//! Two deliberately confusable object classes (a filled disc and a ring of
//! the same radius) are rendered into noisy grayscale images. Per-instance
//! intensity jitter and pixel noise keep the template detector away from
//! perfect scores, which is what makes precision effects visible.

use rand::Rng;
use rand_distr::StandardNormal;

use super::config::WorldConfig;
use crate::augment::RoiBox;
use crate::rng;
use crate::tensor::Tensor;
use crate::toydet::LabeledImage;

#[derive(Debug)]
pub struct ToyWorld {
    pub train: Vec<LabeledImage>,
    pub val: Vec<LabeledImage>,
    /// Flattened object patches cropped from the training set, the
    /// class-conditional dataset for the diffusion model.
    pub patches: Vec<(Tensor, Option<u32>)>,
}

const BACKGROUND: f64 = 0.1;

/// Renders one object patch: class 0 is a filled disc, class 1 a ring with
/// the same outer radius. `amp` is the peak intensity above background.
pub fn render_patch(class: u32, size: usize, amp: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let outer = 0.42 * size as f64;
    let inner = 0.22 * size as f64;
    let mut out = vec![BACKGROUND; size * size];
    for y in 0..size {
        for x in 0..size {
            let r = ((y as f64 - c).powi(2) + (x as f64 - c).powi(2)).sqrt();
            let lit = match class {
                0 => r <= outer,
                _ => r <= outer && r >= inner,
            };
            if lit {
                out[y * size + x] = (BACKGROUND + amp).min(1.0);
            }
        }
    }
    out
}

fn paste(canvas: &mut [f64], img_size: usize, patch: &[f64], size: usize, y0: usize, x0: usize) {
    for y in 0..size {
        for x in 0..size {
            canvas[(y0 + y) * img_size + (x0 + x)] = patch[y * size + x];
        }
    }
}

fn non_overlapping_spot(
    rng: &mut impl Rng,
    img_size: usize,
    patch: usize,
    taken: &[RoiBox],
) -> Option<(usize, usize)> {
    for _ in 0..200 {
        let y = rng.random_range(0..=img_size - patch);
        let x = rng.random_range(0..=img_size - patch);
        let cand = RoiBox::new(x as f64, y as f64, patch as f64, patch as f64, 0);
        if taken.iter().all(|b| !cand.intersects(b)) {
            return Some((y, x));
        }
    }
    None
}

fn make_image(
    rng: &mut impl Rng,
    cfg: &WorldConfig,
    object_classes: &[u32],
    clutter: usize,
) -> LabeledImage {
    let n = cfg.image_size;
    let mut canvas = vec![BACKGROUND; n * n];
    let mut boxes: Vec<RoiBox> = Vec::new();
    for &class in object_classes {
        let amp = 0.55 + cfg.intensity_jitter * (rng.random::<f64>() * 2.0 - 1.0);
        let patch = render_patch(class, cfg.patch_size, amp);
        if let Some((y, x)) = non_overlapping_spot(rng, n, cfg.patch_size, &boxes) {
            paste(&mut canvas, n, &patch, cfg.patch_size, y, x);
            boxes.push(RoiBox::new(
                x as f64,
                y as f64,
                cfg.patch_size as f64,
                cfg.patch_size as f64,
                class,
            ));
        }
    }
    // unlabeled clutter: dim square blobs that are none of the classes
    for _ in 0..clutter {
        let side = cfg.patch_size / 2;
        if let Some((y, x)) = non_overlapping_spot(rng, n, side, &boxes) {
            let amp = 0.3 + 0.1 * rng.random::<f64>();
            for dy in 0..side {
                for dx in 0..side {
                    canvas[(y + dy) * n + (x + dx)] = (BACKGROUND + amp).min(1.0);
                }
            }
        }
    }
    for v in canvas.iter_mut() {
        let noise: f64 = rng.sample(StandardNormal);
        *v = (*v + cfg.pixel_noise * noise).clamp(0.0, 1.0);
    }
    LabeledImage {
        image: Tensor::from_vec(vec![n, n], canvas).expect("canvas dims"),
        boxes,
    }
}

/// Builds the deterministic toy world for a root seed.
pub fn build_world(cfg: &WorldConfig, root_seed: u64) -> ToyWorld {
    let mut rng = rng::stream(root_seed, "world:gen");
    let mut train = Vec::with_capacity(cfg.train_images);
    for i in 0..cfg.train_images {
        let class = (i as u32) % cfg.classes;
        train.push(make_image(&mut rng, cfg, &[class], 0));
    }
    let mut val = Vec::with_capacity(cfg.val_images);
    for _ in 0..cfg.val_images {
        let classes: Vec<u32> = (0..cfg.classes).collect();
        val.push(make_image(&mut rng, cfg, &classes, cfg.clutter_per_val_image));
    }
    let mut patches = Vec::new();
    for item in &train {
        for b in &item.boxes {
            let (x0, y0) = (b.x as usize, b.y as usize);
            let s = cfg.patch_size;
            let flat = Tensor::from_fn(vec![s * s], |i| {
                item.image.at2(y0 + i / s, x0 + i % s)
            });
            patches.push((flat, Some(b.class_id)));
        }
    }
    ToyWorld { train, val, patches }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classes_render_differently() {
        let disc = render_patch(0, 8, 0.5);
        let ring = render_patch(1, 8, 0.5);
        assert_ne!(disc, ring);
        // the ring has a hole at the center
        assert_eq!(ring[3 * 8 + 3], BACKGROUND);
        assert!(disc[3 * 8 + 3] > BACKGROUND);
    }

    #[test]
    fn world_is_deterministic_per_seed() {
        let cfg = WorldConfig::default();
        let a = build_world(&cfg, 4);
        let b = build_world(&cfg, 4);
        assert_eq!(a.train.len(), b.train.len());
        for (x, y) in a.train.iter().zip(&b.train) {
            assert_eq!(x.image.data(), y.image.data());
            assert_eq!(x.boxes, y.boxes);
        }
        let c = build_world(&cfg, 5);
        assert_ne!(a.train[0].image.data(), c.train[0].image.data());
    }

    #[test]
    fn every_class_has_training_patches() {
        let cfg = WorldConfig::default();
        let world = build_world(&cfg, 9);
        for class in 0..cfg.classes {
            assert!(
                world
                    .patches
                    .iter()
                    .any(|(_, c)| *c == Some(class)),
                "class {class} missing"
            );
        }
        assert_eq!(world.val.len(), cfg.val_images);
        // validation images carry one box per class
        for item in &world.val {
            assert_eq!(item.boxes.len(), cfg.classes as usize);
        }
    }
}
