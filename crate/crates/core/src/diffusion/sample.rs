//! Samplers over a strided sub-schedule.
//!
//! DDIM runs the deterministic (eta = 0) update in the variance-preserving
//! parameterization. The Euler variants integrate the same probability-flow
//! step in sigma space, where sigma_t = sqrt((1 - ab_t)/ab_t); the ancestral
//! variant re-injects noise with the standard split
//! `sigma_up^2 = sigma_lo^2 * (sigma_hi^2 - sigma_lo^2) / sigma_hi^2`,
//! `sigma_down^2 = sigma_lo^2 - sigma_up^2`. All trajectories are
//! reproducible from (seed, request).

use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::{randn, DiffusionError, NoisePredictor, NoiseSchedule};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    Ddim,
    Euler,
    EulerAncestral,
}

impl std::str::FromStr for SamplerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "ddim" => Ok(SamplerKind::Ddim),
            "euler" => Ok(SamplerKind::Euler),
            "euler_ancestral" | "euler_ancestral_discrete" => Ok(SamplerKind::EulerAncestral),
            other => Err(format!("unknown sampler '{other}'")),
        }
    }
}

/// Strided timestep ladder T = tau_0 > tau_1 > ... > tau_steps = 0.
pub fn sample_timesteps(t_max: usize, steps: usize) -> Result<Vec<usize>, DiffusionError> {
    if steps == 0 || steps > t_max {
        return Err(DiffusionError::InvalidRequest(format!(
            "steps {steps} outside 1..={t_max}"
        )));
    }
    let mut taus: Vec<usize> = (0..steps).map(|k| t_max - k * t_max / steps).collect();
    taus.push(0);
    Ok(taus)
}

/// Walks the sub-schedule from the state `x` given at `taus[0]` down to
/// `taus.last()`. After each update the hook sees the state at the new tau
/// (in data space once tau reaches 0).
pub(crate) fn run_sampler(
    kind: SamplerKind,
    model: &dyn NoisePredictor,
    sched: &NoiseSchedule,
    taus: &[usize],
    x: Tensor,
    rng: &mut ChaCha12Rng,
    condition: Option<u32>,
    mut after_step: impl FnMut(&mut Tensor, usize, &mut ChaCha12Rng),
) -> Tensor {
    match kind {
        SamplerKind::Ddim => {
            let mut x = x;
            for pair in taus.windows(2) {
                let (t_hi, t_lo) = (pair[0], pair[1]);
                let eps = model.predict(&x, t_hi, condition);
                let ab_hi = sched.alpha_bar(t_hi);
                let ab_lo = sched.alpha_bar(t_lo);
                let (sq_hi, cq_hi) = (ab_hi.sqrt(), (1.0 - ab_hi).sqrt());
                let (sq_lo, cq_lo) = (ab_lo.sqrt(), (1.0 - ab_lo).sqrt());
                x = x
                    .zip_map(&eps, |xt, e| {
                        let x0 = (xt - cq_hi * e) / sq_hi;
                        sq_lo * x0 + cq_lo * e
                    })
                    .expect("model preserves shape");
                after_step(&mut x, t_lo, rng);
            }
            x
        }
        SamplerKind::Euler | SamplerKind::EulerAncestral => {
            let ancestral = kind == SamplerKind::EulerAncestral;
            // sigma space: x_sig = x_vp / sqrt(ab); the model still sees the
            // VP-space state, i.e. x_sig / sqrt(1 + sigma^2).
            let mut x_sig = {
                let scale = 1.0 / sched.alpha_bar(taus[0]).sqrt();
                x.map(|v| v * scale)
            };
            for pair in taus.windows(2) {
                let (t_hi, t_lo) = (pair[0], pair[1]);
                let sig_hi = sched.sigma(t_hi);
                let sig_lo = sched.sigma(t_lo);
                let vp_scale = 1.0 / (1.0 + sig_hi * sig_hi).sqrt();
                let x_vp = x_sig.map(|v| v * vp_scale);
                let eps = model.predict(&x_vp, t_hi, condition);
                let (sig_down, sig_up) = if ancestral && sig_lo > 0.0 {
                    let up2 = sig_lo * sig_lo * (sig_hi * sig_hi - sig_lo * sig_lo)
                        / (sig_hi * sig_hi);
                    let up = up2.sqrt();
                    ((sig_lo * sig_lo - up2).max(0.0).sqrt(), up)
                } else {
                    (sig_lo, 0.0)
                };
                let dt = sig_down - sig_hi;
                x_sig = x_sig
                    .zip_map(&eps, |xs, e| xs + e * dt)
                    .expect("model preserves shape");
                if sig_up > 0.0 {
                    let noise = randn(rng, x_sig.shape().to_vec());
                    x_sig = x_sig
                        .zip_map(&noise, |xs, n| xs + sig_up * n)
                        .expect("noise shape matches");
                }
                // hand the hook a VP-space view at the new tau
                let ab_lo = sched.alpha_bar(t_lo);
                let to_vp = ab_lo.sqrt();
                let mut x_vp_lo = x_sig.map(|v| v * to_vp);
                after_step(&mut x_vp_lo, t_lo, rng);
                x_sig = x_vp_lo.map(|v| v / to_vp);
            }
            x_sig
        }
    }
}

fn sample_with(
    kind: SamplerKind,
    model: &dyn NoisePredictor,
    sched: &NoiseSchedule,
    steps: usize,
    rng: &mut ChaCha12Rng,
    condition: Option<u32>,
    n_samples: usize,
) -> Result<Tensor, DiffusionError> {
    let taus = sample_timesteps(sched.t_max(), steps)?;
    let x = randn(rng, vec![n_samples, model.dim()]);
    Ok(run_sampler(
        kind,
        model,
        sched,
        &taus,
        x,
        rng,
        condition,
        |_, _, _| {},
    ))
}

/// Deterministic DDIM (eta = 0) from pure noise; returns `[n_samples, d]` in
/// data space.
pub fn sample_ddim(
    model: &dyn NoisePredictor,
    sched: &NoiseSchedule,
    steps: usize,
    rng: &mut ChaCha12Rng,
    condition: Option<u32>,
    n_samples: usize,
) -> Result<Tensor, DiffusionError> {
    sample_with(SamplerKind::Ddim, model, sched, steps, rng, condition, n_samples)
}

/// Deterministic Euler integration in sigma space; algebraically the same
/// trajectory as DDIM, computed along a different route.
pub fn sample_euler(
    model: &dyn NoisePredictor,
    sched: &NoiseSchedule,
    steps: usize,
    rng: &mut ChaCha12Rng,
    condition: Option<u32>,
    n_samples: usize,
) -> Result<Tensor, DiffusionError> {
    sample_with(SamplerKind::Euler, model, sched, steps, rng, condition, n_samples)
}

/// Euler with ancestral noise injection per step.
pub fn sample_euler_ancestral(
    model: &dyn NoisePredictor,
    sched: &NoiseSchedule,
    steps: usize,
    rng: &mut ChaCha12Rng,
    condition: Option<u32>,
    n_samples: usize,
) -> Result<Tensor, DiffusionError> {
    sample_with(
        SamplerKind::EulerAncestral,
        model,
        sched,
        steps,
        rng,
        condition,
        n_samples,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{make_schedule, ScheduleKind};
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    /// Optimal epsilon for point-mass data at `x0`: with x_t = sqrt(ab) x0 +
    /// sqrt(1-ab) eps, the noise is recoverable exactly.
    struct PointMassOracle {
        x0: f64,
        sched: NoiseSchedule,
    }

    impl NoisePredictor for PointMassOracle {
        fn predict(&self, x: &Tensor, t: usize, _c: Option<u32>) -> Tensor {
            let ab = self.sched.alpha_bar(t);
            x.map(|v| (v - ab.sqrt() * self.x0) / (1.0 - ab).sqrt())
        }
        fn dim(&self) -> usize {
            1
        }
    }

    #[test]
    fn timestep_ladder_shape() {
        assert_eq!(sample_timesteps(1000, 4).unwrap(), vec![1000, 750, 500, 250, 0]);
        let full = sample_timesteps(10, 10).unwrap();
        assert_eq!(full, vec![10, 9, 8, 7, 6, 5, 4, 3, 2, 1, 0]);
        assert!(sample_timesteps(10, 11).is_err());
        assert!(sample_timesteps(10, 0).is_err());
    }

    #[test]
    fn ddim_with_perfect_oracle_recovers_x0() {
        let sched = make_schedule(200, 1e-4, 0.02, ScheduleKind::Linear).unwrap();
        let oracle = PointMassOracle {
            x0: 0.7,
            sched: sched.clone(),
        };
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let out = sample_ddim(&oracle, &sched, 200, &mut rng, None, 16).unwrap();
        for &v in out.data() {
            assert_relative_eq!(v, 0.7, epsilon = 1e-6);
        }
    }

    #[test]
    fn euler_matches_ddim_on_the_oracle() {
        let sched = make_schedule(100, 1e-4, 0.02, ScheduleKind::Linear).unwrap();
        let oracle = PointMassOracle {
            x0: -0.4,
            sched: sched.clone(),
        };
        let mut r1 = ChaCha12Rng::seed_from_u64(9);
        let mut r2 = ChaCha12Rng::seed_from_u64(9);
        let a = sample_ddim(&oracle, &sched, 25, &mut r1, None, 8).unwrap();
        let b = sample_euler(&oracle, &sched, 25, &mut r2, None, 8).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_relative_eq!(x, y, epsilon = 1e-8);
        }
    }

    #[test]
    fn samplers_are_seed_deterministic() {
        let sched = make_schedule(60, 1e-4, 0.02, ScheduleKind::Linear).unwrap();
        let oracle = PointMassOracle {
            x0: 0.2,
            sched: sched.clone(),
        };
        for kind in [SamplerKind::Ddim, SamplerKind::Euler, SamplerKind::EulerAncestral] {
            let mut r1 = ChaCha12Rng::seed_from_u64(3);
            let mut r2 = ChaCha12Rng::seed_from_u64(3);
            let taus = sample_timesteps(60, 15).unwrap();
            let x1 = randn(&mut r1, vec![4, 1]);
            let x2 = randn(&mut r2, vec![4, 1]);
            let a = run_sampler(kind, &oracle, &sched, &taus, x1, &mut r1, None, |_, _, _| {});
            let b = run_sampler(kind, &oracle, &sched, &taus, x2, &mut r2, None, |_, _, _| {});
            assert_eq!(a.data(), b.data(), "{kind:?} not deterministic");
        }
    }

    #[test]
    fn ancestral_noise_still_converges_on_the_oracle() {
        let sched = make_schedule(200, 1e-4, 0.02, ScheduleKind::Linear).unwrap();
        let oracle = PointMassOracle {
            x0: 1.1,
            sched: sched.clone(),
        };
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let out = sample_euler_ancestral(&oracle, &sched, 100, &mut rng, None, 32).unwrap();
        for &v in out.data() {
            // point-mass oracle pins the trajectory; injected noise decays
            assert_relative_eq!(v, 1.1, epsilon = 1e-4);
        }
    }
}
