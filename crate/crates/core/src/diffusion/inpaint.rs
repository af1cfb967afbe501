//! Mask-conditioned inpainting.
//!
//! The request's strength controls how far the original image is noised
//! before denoising begins (`t_start = round(strength * steps)` sub-steps
//! run). At every step the unmasked region is replaced by the
//! forward-diffused original at the step's noise level, so context pixels
//! keep pinning the trajectory; the final blend copies them bit-exactly.

use rand_chacha::ChaCha12Rng;

use super::sample::{run_sampler, sample_timesteps};
use super::{forward_diffuse, randn, DiffusionError, GuidedPredictor, NoisePredictor};
use super::{NoiseSchedule, SamplerKind};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct InpaintRequest {
    /// Image in data space, any shape whose element count matches the model.
    pub image: Tensor,
    /// Binary mask, same shape as the image; 1 marks pixels to synthesize.
    pub mask: Tensor,
    /// Class condition for guidance; `None` samples unconditionally.
    pub condition: Option<u32>,
    /// Fraction of the noising trajectory applied before denoising, in [0,1].
    pub strength: f64,
    /// Number of sampler steps over the full trajectory.
    pub steps: usize,
    /// Classifier-free guidance weight (1 = plain conditional).
    pub guidance: f64,
}

impl InpaintRequest {
    fn validate(&self, model_dim: usize, t_max: usize) -> Result<(), DiffusionError> {
        if self.mask.shape() != self.image.shape() {
            return Err(DiffusionError::MaskShapeMismatch {
                mask: self.mask.shape().to_vec(),
                image: self.image.shape().to_vec(),
            });
        }
        if self.image.len() != model_dim {
            return Err(DiffusionError::ShapeMismatch(format!(
                "image has {} elements, model wants {model_dim}",
                self.image.len()
            )));
        }
        if self.mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(DiffusionError::InvalidRequest(
                "mask must be binary".to_string(),
            ));
        }
        if !(0.0..=1.0).contains(&self.strength) {
            return Err(DiffusionError::InvalidRequest(format!(
                "strength {} outside [0, 1]",
                self.strength
            )));
        }
        if self.steps == 0 || self.steps > t_max {
            return Err(DiffusionError::InvalidRequest(format!(
                "steps {} outside 1..={t_max}",
                self.steps
            )));
        }
        if self.guidance < 0.0 {
            return Err(DiffusionError::InvalidRequest(format!(
                "guidance {} must be nonnegative",
                self.guidance
            )));
        }
        Ok(())
    }
}

/// Synthesizes the masked region of the request's image.
///
/// With an all-ones mask and strength 1 the call consumes the rng exactly
/// like the plain sampler, so the output equals unconditional/conditional
/// sampling under the same seed.
pub fn inpaint(
    req: &InpaintRequest,
    model: &dyn NoisePredictor,
    sched: &NoiseSchedule,
    kind: SamplerKind,
    rng: &mut ChaCha12Rng,
) -> Result<Tensor, DiffusionError> {
    req.validate(model.dim(), sched.t_max())?;
    let shape = req.image.shape().to_vec();
    let d = req.image.len();

    let active_steps = (req.strength * req.steps as f64).round() as usize;
    let mask_zero = req.mask.data().iter().all(|&m| m == 0.0);
    if active_steps == 0 || mask_zero {
        return Ok(req.image.clone());
    }
    let mask_full = req.mask.data().iter().all(|&m| m == 1.0);

    let taus_all = sample_timesteps(sched.t_max(), req.steps)?;
    let start = req.steps - active_steps;
    let taus = &taus_all[start..];

    let image_flat = req.image.reshape(vec![1, d])?;
    let mask_flat = req.mask.reshape(vec![1, d])?;

    let x_init = if taus[0] == sched.t_max() {
        // full-strength start: pure noise, exactly like the samplers
        randn(rng, vec![1, d])
    } else {
        let eps = randn(rng, vec![1, d]);
        forward_diffuse(&image_flat, taus[0], &eps, sched)?
    };

    let guided = GuidedPredictor {
        model,
        condition: req.condition,
        guidance: req.guidance,
    };

    let blend = |x: &mut Tensor, tau: usize, rng: &mut ChaCha12Rng| {
        if mask_full {
            return;
        }
        let reference = if tau == 0 {
            image_flat.clone()
        } else {
            let eps = randn(rng, vec![1, d]);
            forward_diffuse(&image_flat, tau, &eps, sched).expect("tau within schedule")
        };
        let blended = Tensor::from_fn(vec![1, d], |i| {
            if mask_flat.data()[i] == 1.0 {
                x.data()[i]
            } else {
                reference.data()[i]
            }
        });
        *x = blended;
    };

    let out = run_sampler(kind, &guided, sched, taus, x_init, rng, None, blend);
    // the last blend already restored unmasked pixels bit-exactly at tau = 0;
    // enforce it explicitly so the contract cannot drift
    let final_img = Tensor::from_fn(vec![1, d], |i| {
        if mask_flat.data()[i] == 1.0 {
            out.data()[i]
        } else {
            image_flat.data()[i]
        }
    });
    final_img.reshape(shape).map_err(Into::into)
}
