//! Toy denoising-diffusion engine.
//!
//! Forward noising, the epsilon-parameterized posterior mean, ancestral
//! reverse steps, small trainable denoisers (MLP for flat data, a two-level
//! conv net for patches), DDIM / Euler / Euler-ancestral samplers, and
//! mask-blended inpainting.

mod denoiser;
mod inpaint;
mod sample;
mod schedule;
mod train;

pub use denoiser::{
    load_checkpoint, save_checkpoint, BackboneKind, Denoiser, DenoiserConfig, GuidedPredictor,
    NoisePredictor,
};
pub use inpaint::{inpaint, InpaintRequest};
pub use sample::{
    sample_ddim, sample_euler, sample_euler_ancestral, sample_timesteps, SamplerKind,
};
pub use schedule::{make_schedule, NoiseSchedule, ScheduleKind};
pub use train::{train_toy_denoiser, TrainConfig, TrainOutcome};

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("step {t} outside schedule range 1..={t_max}")]
    StepOutOfRange { t: usize, t_max: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("mask shape {mask:?} does not match image {image:?}")]
    MaskShapeMismatch { mask: Vec<usize>, image: Vec<usize> },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("non-finite loss {loss} at training step {step}")]
    NonFiniteLoss { loss: f64, step: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Quant(#[from] crate::quant::QuantError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
}

/// Standard-normal tensor draw.
pub fn randn(rng: &mut impl Rng, shape: Vec<usize>) -> Tensor {
    Tensor::from_fn(shape, |_| rng.sample(StandardNormal))
}

/// Closed-form forward noising: `x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps`.
pub fn forward_diffuse(
    x0: &Tensor,
    t: usize,
    eps: &Tensor,
    sched: &NoiseSchedule,
) -> Result<Tensor, DiffusionError> {
    if t < 1 || t > sched.t_max() {
        return Err(DiffusionError::StepOutOfRange {
            t,
            t_max: sched.t_max(),
        });
    }
    let ab = sched.alpha_bar(t);
    let a = ab.sqrt();
    let b = (1.0 - ab).sqrt();
    Ok(x0
        .zip_map(eps, |x, e| a * x + b * e)
        .map_err(|_| DiffusionError::ShapeMismatch(format!(
            "x0 {:?} vs eps {:?}",
            x0.shape(),
            eps.shape()
        )))?)
}

/// Epsilon-parameterized reverse-process mean:
/// `(1/sqrt(1 - beta_t)) * (x_t - (beta_t / sqrt(1 - ab_t)) * eps_hat)`.
pub fn posterior_mean(
    x_t: &Tensor,
    eps_hat: &Tensor,
    t: usize,
    sched: &NoiseSchedule,
) -> Result<Tensor, DiffusionError> {
    if t < 1 || t > sched.t_max() {
        return Err(DiffusionError::StepOutOfRange {
            t,
            t_max: sched.t_max(),
        });
    }
    let beta = sched.beta(t);
    let ab = sched.alpha_bar(t);
    let inv = 1.0 / (1.0 - beta).sqrt();
    let coef = beta / (1.0 - ab).sqrt();
    x_t.zip_map(eps_hat, |x, e| inv * (x - coef * e))
        .map_err(|_| DiffusionError::ShapeMismatch(format!(
            "x_t {:?} vs eps_hat {:?}",
            x_t.shape(),
            eps_hat.shape()
        )))
}

/// One ancestral reverse step with the fixed-variance choice
/// `sigma_t^2 = beta_t`; the final step (t == 1) is deterministic.
pub fn reverse_step(
    x_t: &Tensor,
    t: usize,
    model: &dyn NoisePredictor,
    sched: &NoiseSchedule,
    rng: &mut impl Rng,
    condition: Option<u32>,
) -> Result<Tensor, DiffusionError> {
    let flat = x_t.reshape(vec![1, x_t.len()])?;
    let eps_hat = model.predict(&flat, t, condition).reshape(x_t.shape().to_vec())?;
    let mean = posterior_mean(x_t, &eps_hat, t, sched)?;
    if t == 1 {
        return Ok(mean);
    }
    let sigma = sched.beta(t).sqrt();
    let z = randn(rng, x_t.shape().to_vec());
    Ok(mean
        .zip_map(&z, |m, n| m + sigma * n)
        .expect("shapes match by construction"))
}

/// Monte-Carlo training objective: mean squared error between the injected
/// and predicted noise.
pub fn mse_loss(eps: &Tensor, eps_hat: &Tensor) -> Result<f64, DiffusionError> {
    if eps.shape() != eps_hat.shape() {
        return Err(DiffusionError::ShapeMismatch(format!(
            "{:?} vs {:?}",
            eps.shape(),
            eps_hat.shape()
        )));
    }
    let n = eps.len() as f64;
    Ok(eps
        .data()
        .iter()
        .zip(eps_hat.data())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn sched() -> NoiseSchedule {
        make_schedule(100, 1e-4, 0.02, ScheduleKind::Linear).unwrap()
    }

    #[test]
    fn forward_diffuse_interpolates_signal_and_noise() {
        let s = sched();
        let x0 = Tensor::from_vec(vec![2], vec![1.0, -1.0]).unwrap();
        let eps = Tensor::from_vec(vec![2], vec![0.5, 0.25]).unwrap();
        let xt = forward_diffuse(&x0, 10, &eps, &s).unwrap();
        let ab = s.alpha_bar(10);
        assert_relative_eq!(xt.data()[0], ab.sqrt() * 1.0 + (1.0 - ab).sqrt() * 0.5);

        // boundary errors
        assert!(forward_diffuse(&x0, 0, &eps, &s).is_err());
        assert!(forward_diffuse(&x0, 101, &eps, &s).is_err());
        let bad = Tensor::zeros(vec![3]);
        assert!(forward_diffuse(&x0, 1, &bad, &s).is_err());
    }

    #[test]
    fn forward_diffuse_limits() {
        // near t=1 with a tiny beta the output is essentially x0; at t=T with
        // alpha_bar ~ 0 it is essentially eps
        let s = make_schedule(2000, 1e-4, 0.02, ScheduleKind::Linear).unwrap();
        let x0 = Tensor::from_vec(vec![1], vec![0.7]).unwrap();
        let eps = Tensor::from_vec(vec![1], vec![-0.3]).unwrap();
        let early = forward_diffuse(&x0, 1, &eps, &s).unwrap();
        assert_relative_eq!(early.data()[0], 0.7, epsilon = 1e-3);
        let late = forward_diffuse(&x0, 2000, &eps, &s).unwrap();
        assert_relative_eq!(late.data()[0], -0.3, epsilon = 1e-3);
    }

    #[test]
    fn posterior_mean_scalar_case() {
        // beta = 0.19, alpha_bar = 0.19: (1/sqrt(0.81)) * (1 - (0.19/sqrt(0.81)) * 0.9) = 0.9
        let s = make_schedule(1, 0.19, 0.19, ScheduleKind::Linear).unwrap();
        let x = Tensor::scalar(1.0);
        let e = Tensor::scalar(0.9);
        let mu = posterior_mean(&x, &e, 1, &s).unwrap();
        assert_relative_eq!(mu.data()[0], 0.9, epsilon = 1e-12);
    }

    #[test]
    fn posterior_mean_zero_prediction() {
        let s = sched();
        let x = Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap();
        let zero = Tensor::zeros(vec![2]);
        let mu = posterior_mean(&x, &zero, 5, &s).unwrap();
        let scale = 1.0 / (1.0 - s.beta(5)).sqrt();
        assert_relative_eq!(mu.data()[0], scale);
        assert_relative_eq!(mu.data()[1], 2.0 * scale);
    }

    #[test]
    fn posterior_mean_is_linear() {
        let s = sched();
        let x1 = Tensor::from_vec(vec![2], vec![0.3, -0.2]).unwrap();
        let x2 = Tensor::from_vec(vec![2], vec![-1.0, 0.5]).unwrap();
        let e1 = Tensor::from_vec(vec![2], vec![0.1, 0.7]).unwrap();
        let e2 = Tensor::from_vec(vec![2], vec![0.9, -0.4]).unwrap();
        let sum_inputs = posterior_mean(
            &x1.zip_map(&x2, |a, b| a + b).unwrap(),
            &e1.zip_map(&e2, |a, b| a + b).unwrap(),
            7,
            &s,
        )
        .unwrap();
        let sum_outputs = posterior_mean(&x1, &e1, 7, &s)
            .unwrap()
            .zip_map(&posterior_mean(&x2, &e2, 7, &s).unwrap(), |a, b| a + b)
            .unwrap();
        for (a, b) in sum_inputs.data().iter().zip(sum_outputs.data()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn mse_loss_examples() {
        let a = Tensor::from_vec(vec![2], vec![1.0, 1.0]).unwrap();
        let b = Tensor::zeros(vec![2]);
        assert_relative_eq!(mse_loss(&a, &b).unwrap(), 1.0);
        assert_eq!(mse_loss(&a, &a).unwrap(), 0.0);
        assert!(mse_loss(&a, &Tensor::zeros(vec![3])).is_err());
    }

    struct ZeroPredictor(usize);
    impl NoisePredictor for ZeroPredictor {
        fn predict(&self, x: &Tensor, _t: usize, _c: Option<u32>) -> Tensor {
            Tensor::zeros(x.shape().to_vec())
        }
        fn dim(&self) -> usize {
            self.0
        }
    }

    #[test]
    fn reverse_step_is_deterministic_at_t1_and_seeded() {
        let s = sched();
        let model = ZeroPredictor(2);
        let x = Tensor::from_vec(vec![2], vec![0.4, -0.6]).unwrap();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(3);
        let out1 = reverse_step(&x, 1, &model, &s, &mut rng, None).unwrap();
        let mu = posterior_mean(&x, &Tensor::zeros(vec![2]), 1, &s).unwrap();
        assert_eq!(out1.data(), mu.data());

        let mut r1 = rand_chacha::ChaCha12Rng::seed_from_u64(9);
        let mut r2 = rand_chacha::ChaCha12Rng::seed_from_u64(9);
        let a = reverse_step(&x, 50, &model, &s, &mut r1, None).unwrap();
        let b = reverse_step(&x, 50, &model, &s, &mut r2, None).unwrap();
        assert_eq!(a.data(), b.data());
    }
}
