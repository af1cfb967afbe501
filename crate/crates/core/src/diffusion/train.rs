//! Monte-Carlo training of the toy denoisers: sample (x0, t, eps), noise the
//! data with the closed form, regress the injected noise, update with Adam.
//! Single-threaded and bit-deterministic for a fixed seed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::denoiser::{conv_backward, conv_forward, mlp_backward, mlp_forward, time_embedding};
use super::{BackboneKind, Denoiser, DiffusionError, NoisePredictor, NoiseSchedule};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Probability of dropping the class label, which trains the null slot
    /// used by classifier-free guidance.
    pub uncond_prob: f64,
    /// Window for the smoothed-loss summary.
    pub loss_window: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 32,
            learning_rate: 2e-3,
            uncond_prob: 0.1,
            loss_window: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Denoiser,
    pub losses: Vec<f64>,
    pub initial_smoothed: f64,
    pub final_smoothed: f64,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: usize,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(shapes: &[usize]) -> Self {
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [Tensor], grads: &[Vec<f64>], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        for (slot, p) in params.iter_mut().enumerate() {
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            let g = &grads[slot];
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Trains `model` in place on the dataset of `(flattened sample, class)`
/// pairs. Zero steps leave the initial weights untouched. A non-finite loss
/// aborts with the offending step in the error.
pub fn train_toy_denoiser(
    mut model: Denoiser,
    dataset: &[(Tensor, Option<u32>)],
    sched: &NoiseSchedule,
    config: &TrainConfig,
) -> Result<TrainOutcome, DiffusionError> {
    if dataset.is_empty() {
        return Err(DiffusionError::InvalidRequest("empty dataset".to_string()));
    }
    let d = model.dim();
    for (x, _) in dataset {
        if x.len() != d {
            return Err(DiffusionError::ShapeMismatch(format!(
                "dataset item has {} elements, model wants {d}",
                x.len()
            )));
        }
    }
    let mut rng = crate::rng::stream(config.seed, "diffusion:train");
    let shapes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let mut adam = Adam::new(&shapes);
    let mut losses = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        // assemble the Monte-Carlo batch: per-sample (x0, t, eps, class)
        let mut batch = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            let idx = rng.random_range(0..dataset.len());
            let t = rng.random_range(1..=sched.t_max());
            let keep_class = rng.random::<f64>() >= config.uncond_prob;
            let class = if keep_class { dataset[idx].1 } else { None };
            let eps = super::randn(&mut rng, vec![d]);
            let ab = sched.alpha_bar(t);
            let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
            let x_t: Vec<f64> = dataset[idx]
                .0
                .data()
                .iter()
                .zip(eps.data())
                .map(|(&x, &e)| sa * x + sb * e)
                .collect();
            batch.push((x_t, t, eps, class));
        }

        let loss = match model.config().backbone {
            BackboneKind::Mlp { .. } => train_step_mlp(&mut model, &batch, &mut adam, config),
            BackboneKind::Conv2 { .. } => train_step_conv(&mut model, &batch, &mut adam, config),
        };
        if !loss.is_finite() {
            return Err(DiffusionError::NonFiniteLoss { loss, step });
        }
        losses.push(loss);
    }

    model.sync_exec();
    let window = config.loss_window.max(1).min(losses.len().max(1));
    let smooth = |slice: &[f64]| slice.iter().sum::<f64>() / slice.len().max(1) as f64;
    let (initial_smoothed, final_smoothed) = if losses.is_empty() {
        (0.0, 0.0)
    } else {
        (
            smooth(&losses[..window]),
            smooth(&losses[losses.len() - window..]),
        )
    };
    Ok(TrainOutcome {
        model,
        losses,
        initial_smoothed,
        final_smoothed,
    })
}

type BatchItem = (Vec<f64>, usize, Tensor, Option<u32>);

fn train_step_mlp(
    model: &mut Denoiser,
    batch: &[BatchItem],
    adam: &mut Adam,
    config: &TrainConfig,
) -> f64 {
    let d = model.dim();
    let e = model.config().time_embed_dim;
    let cond_dim = model.config().num_classes as usize + 1;
    let width = d + e + cond_dim;
    let n = batch.len();

    let mut rows = Vec::with_capacity(n * width);
    let mut targets = Vec::with_capacity(n * d);
    for (x_t, t, eps, class) in batch {
        rows.extend_from_slice(x_t);
        rows.extend(time_embedding(*t, e));
        let mut hot = vec![0.0; cond_dim];
        let idx = class
            .map(|c| (c as usize).min(cond_dim - 2))
            .unwrap_or(cond_dim - 1);
        hot[idx] = 1.0;
        rows.extend(hot);
        targets.extend_from_slice(eps.data());
    }
    let z0 = Tensor::from_vec(vec![n, width], rows).expect("batch rows");
    let target = Tensor::from_vec(vec![n, d], targets).expect("batch targets");

    let cache = mlp_forward(model.params(), &z0);
    let count = cache.out.len() as f64;
    let loss = cache
        .out
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / count;
    let dout = cache
        .out
        .zip_map(&target, |o, t| 2.0 * (o - t) / count)
        .expect("shapes match");
    let grads = mlp_backward(model.params(), &cache, &dout);
    let grad_vecs: Vec<Vec<f64>> = grads.into_iter().map(|g| g.data().to_vec()).collect();
    adam.update(model.params_mut(), &grad_vecs, config.learning_rate);
    loss
}

fn train_step_conv(
    model: &mut Denoiser,
    batch: &[BatchItem],
    adam: &mut Adam,
    config: &TrainConfig,
) -> f64 {
    let (h, w) = model.config().spatial.expect("conv config validated");
    let e = model.config().time_embed_dim;
    let num_classes = model.config().num_classes;
    let d = h * w;
    let count = (batch.len() * d) as f64;

    let mut grads: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.len()]).collect();
    let mut loss = 0.0;
    for (x_t, t, eps, class) in batch {
        let temb = time_embedding(*t, e);
        let mut chot = vec![0.0; num_classes as usize + 1];
        let idx = class
            .map(|c| (c as usize).min(num_classes as usize - 1))
            .unwrap_or(num_classes as usize);
        chot[idx] = 1.0;
        let cache = conv_forward(model.params(), x_t, h, w, &temb, &chot);
        let mut dout = vec![0.0; d];
        for p in 0..d {
            let diff = cache.out[p] - eps.data()[p];
            loss += diff * diff;
            dout[p] = 2.0 * diff / count;
        }
        conv_backward(
            model.params(),
            &cache,
            x_t,
            h,
            w,
            &temb,
            &chot,
            &dout,
            &mut grads,
        );
    }
    adam.update(model.params_mut(), &grads, config.learning_rate);
    loss / count
}
