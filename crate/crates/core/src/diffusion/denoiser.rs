//! Trainable epsilon-predictors with sinusoidal time embeddings.
//!
//! Two backbones cover the toy scales: an MLP for flat data and a two-level
//! conv net for small patches. Both are class-conditional through a one-hot
//! slot vector with a reserved null class, which is what classifier-free
//! guidance switches on. Parameters live in canonical f64; FP32/FP16 round
//! the stored weights through the codec, INT8 routes the heavy products
//! through the integer kernels with offline-calibrated activations.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DiffusionError;
use crate::quant::{
    calibrate, calibrate_per_channel, qconv2d, qmatmul, quantize, CalibScheme,
    QuantParams, QuantizedTensor, Symmetry,
};
use crate::tensor::{load_tensor, save_tensor, Precision, Tensor};

/// Batched noise prediction: `x` is `[N, d]`, the result has the same shape.
pub trait NoisePredictor {
    fn predict(&self, x: &Tensor, t: usize, condition: Option<u32>) -> Tensor;
    fn dim(&self) -> usize;
}

/// Classifier-free guidance wrapper: blends conditional and unconditional
/// predictions with the guidance weight, `eps_u + g * (eps_c - eps_u)`.
pub struct GuidedPredictor<'a> {
    pub model: &'a dyn NoisePredictor,
    pub condition: Option<u32>,
    pub guidance: f64,
}

impl NoisePredictor for GuidedPredictor<'_> {
    fn predict(&self, x: &Tensor, t: usize, _condition: Option<u32>) -> Tensor {
        match self.condition {
            None => self.model.predict(x, t, None),
            Some(c) => {
                if self.guidance == 1.0 {
                    return self.model.predict(x, t, Some(c));
                }
                let eps_u = self.model.predict(x, t, None);
                let eps_c = self.model.predict(x, t, Some(c));
                eps_u
                    .zip_map(&eps_c, |u, v| u + self.guidance * (v - u))
                    .expect("model outputs share a shape")
            }
        }
    }

    fn dim(&self) -> usize {
        self.model.dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BackboneKind {
    Mlp { hidden: usize },
    Conv2 { channels: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub backbone: BackboneKind,
    /// Flattened data dimension.
    pub data_dim: usize,
    /// Spatial layout `(h, w)`; required by the conv backbone.
    pub spatial: Option<(usize, usize)>,
    pub num_classes: u32,
    pub time_embed_dim: usize,
}

impl DenoiserConfig {
    fn cond_dim(&self) -> usize {
        self.num_classes as usize + 1
    }

    fn validate(&self) -> Result<(), DiffusionError> {
        if self.time_embed_dim == 0 || self.time_embed_dim % 2 != 0 {
            return Err(DiffusionError::InvalidRequest(
                "time_embed_dim must be even and positive".to_string(),
            ));
        }
        if let BackboneKind::Conv2 { channels } = self.backbone {
            let Some((h, w)) = self.spatial else {
                return Err(DiffusionError::InvalidRequest(
                    "conv backbone needs spatial dims".to_string(),
                ));
            };
            if h * w != self.data_dim {
                return Err(DiffusionError::InvalidRequest(format!(
                    "spatial {h}x{w} != data_dim {}",
                    self.data_dim
                )));
            }
            if channels == 0 || h < 3 || w < 3 {
                return Err(DiffusionError::InvalidRequest(
                    "conv backbone needs channels >= 1 and at least 3x3 patches".to_string(),
                ));
            }
        }
        Ok(())
    }
}

/// Transformer-style sinusoidal embedding of the integer timestep.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut emb = Vec::with_capacity(dim);
    for k in 0..half {
        let freq = 10_000f64.powf(-(k as f64) / half as f64);
        let angle = t as f64 * freq;
        emb.push(angle.sin());
        emb.push(angle.cos());
    }
    emb
}

fn onehot(condition: Option<u32>, num_classes: u32) -> Vec<f64> {
    let mut v = vec![0.0; num_classes as usize + 1];
    let idx = condition
        .map(|c| (c as usize).min(num_classes as usize - 1))
        .unwrap_or(num_classes as usize);
    v[idx] = 1.0;
    v
}

// Parameter slot order per backbone. MLP: W1, b1, W2, b2, W3, b3.
// Conv2: K1 [C,1,3,3], b1 [C], Wt [C,E], Wc [C,cond], K2 [1,C,3,3], b2 [1].
pub(crate) const PARAM_COUNT: usize = 6;

#[derive(Debug, Clone)]
enum ExecState {
    /// Storage round-tripped parameters, f64 compute.
    Fp(Vec<Tensor>),
    Int8(Int8Exec),
}

#[derive(Debug, Clone)]
struct Int8Exec {
    /// MLP: transposed weight matrices quantized per-tensor. Conv2: kernels
    /// quantized per output channel.
    qweights: Vec<QuantizedTensor>,
    /// Per quantized layer input calibration (offline, held-out batch).
    act: Vec<QuantParams>,
    /// Remaining small parameters kept in f64 (biases, embedding projections).
    fp: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct Denoiser {
    config: DenoiserConfig,
    /// Canonical f64 parameters in slot order.
    params: Vec<Tensor>,
    precision: Precision,
    exec: ExecState,
}

fn xavier(rng: &mut impl rand::Rng, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-limit..limit))
}

impl Denoiser {
    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Self, DiffusionError> {
        config.validate()?;
        let mut rng = crate::rng::stream(seed, "diffusion:init");
        let e = config.time_embed_dim;
        let cond = config.cond_dim();
        let d = config.data_dim;
        let params = match config.backbone {
            BackboneKind::Mlp { hidden } => {
                let input = d + e + cond;
                vec![
                    xavier(&mut rng, vec![hidden, input], input, hidden),
                    Tensor::zeros(vec![hidden]),
                    xavier(&mut rng, vec![hidden, hidden], hidden, hidden),
                    Tensor::zeros(vec![hidden]),
                    xavier(&mut rng, vec![d, hidden], hidden, d),
                    Tensor::zeros(vec![d]),
                ]
            }
            BackboneKind::Conv2 { channels } => {
                vec![
                    xavier(&mut rng, vec![channels, 1, 3, 3], 9, channels * 9),
                    Tensor::zeros(vec![channels]),
                    xavier(&mut rng, vec![channels, e], e, channels),
                    xavier(&mut rng, vec![channels, cond], cond, channels),
                    xavier(&mut rng, vec![1, channels, 3, 3], channels * 9, 9),
                    Tensor::zeros(vec![1]),
                ]
            }
        };
        let exec = ExecState::Fp(params.clone());
        Ok(Self {
            config,
            params,
            precision: Precision::Fp32,
            exec,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    pub(crate) fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// Refreshes the execution state after in-place parameter updates.
    pub(crate) fn sync_exec(&mut self) {
        self.exec = ExecState::Fp(match self.precision {
            Precision::Fp32 | Precision::Fp16 => self
                .params
                .iter()
                .map(|p| p.store_round_trip(self.precision))
                .collect(),
            Precision::Int8 => self.params.clone(),
        });
    }

    /// Re-tags the model at a storage precision.
    ///
    /// FP32 and FP16 round-trip every parameter through the codec. INT8
    /// quantizes the weight matrices / kernels and calibrates per-layer
    /// activation ranges min/max over the provided held-out samples
    /// `(x, t, condition)`.
    pub fn with_precision(
        &self,
        precision: Precision,
        calibration: &[(Tensor, usize, Option<u32>)],
    ) -> Result<Denoiser, DiffusionError> {
        let mut out = self.clone();
        out.precision = precision;
        match precision {
            Precision::Fp32 | Precision::Fp16 => {
                out.exec = ExecState::Fp(
                    self.params
                        .iter()
                        .map(|p| p.store_round_trip(precision))
                        .collect(),
                );
            }
            Precision::Int8 => {
                if calibration.is_empty() {
                    return Err(DiffusionError::InvalidRequest(
                        "int8 execution needs a calibration batch".to_string(),
                    ));
                }
                out.exec = ExecState::Int8(self.build_int8_exec(calibration)?);
            }
        }
        Ok(out)
    }

    fn build_int8_exec(
        &self,
        calibration: &[(Tensor, usize, Option<u32>)],
    ) -> Result<Int8Exec, DiffusionError> {
        // collect per-layer input pools by running the canonical forward
        let mut pools: Vec<Vec<f64>> = vec![Vec::new(), Vec::new(), Vec::new()];
        for (x, t, c) in calibration {
            let row = x.reshape(vec![1, x.len()])?;
            match self.config.backbone {
                BackboneKind::Mlp { .. } => {
                    let z0 = self.embed_rows(&row, *t, *c);
                    let cache = mlp_forward(&self.params, &z0);
                    pools[0].extend_from_slice(cache.z0.data());
                    pools[1].extend_from_slice(cache.a1.data());
                    pools[2].extend_from_slice(cache.a2.data());
                }
                BackboneKind::Conv2 { .. } => {
                    let (h, w) = self.config.spatial.expect("validated");
                    let temb = time_embedding(*t, self.config.time_embed_dim);
                    let chot = onehot(*c, self.config.num_classes);
                    let cache =
                        conv_forward(&self.params, x.data(), h, w, &temb, &chot);
                    pools[0].extend_from_slice(x.data());
                    pools[1].extend_from_slice(&cache.a1);
                }
            }
        }
        let act_of = |pool: &Vec<f64>| -> Result<QuantParams, DiffusionError> {
            let t = Tensor::from_vec(vec![pool.len()], pool.clone())?;
            Ok(calibrate(&t, CalibScheme::MinMax, Symmetry::Asymmetric)?)
        };
        match self.config.backbone {
            BackboneKind::Mlp { .. } => {
                let mut qweights = Vec::new();
                for slot in [0usize, 2, 4] {
                    let wt = self.params[slot].transpose()?;
                    let p = calibrate(&wt, CalibScheme::MinMax, Symmetry::Symmetric)?;
                    qweights.push(quantize(&wt, &p)?);
                }
                Ok(Int8Exec {
                    qweights,
                    act: vec![act_of(&pools[0])?, act_of(&pools[1])?, act_of(&pools[2])?],
                    fp: vec![
                        self.params[1].clone(),
                        self.params[3].clone(),
                        self.params[5].clone(),
                    ],
                })
            }
            BackboneKind::Conv2 { .. } => {
                let k1 = &self.params[0];
                let p1 = calibrate_per_channel(k1, 0, CalibScheme::MinMax, Symmetry::Symmetric)?;
                let k2 = &self.params[4];
                let p2 = calibrate_per_channel(k2, 0, CalibScheme::MinMax, Symmetry::Symmetric)?;
                Ok(Int8Exec {
                    qweights: vec![quantize(k1, &p1)?, quantize(k2, &p2)?],
                    act: vec![act_of(&pools[0])?, act_of(&pools[1])?],
                    fp: vec![
                        self.params[1].clone(),
                        self.params[2].clone(),
                        self.params[3].clone(),
                        self.params[5].clone(),
                    ],
                })
            }
        }
    }

    /// Builds the embedded input rows `[x | temb | onehot]` for the MLP.
    fn embed_rows(&self, x: &Tensor, t: usize, condition: Option<u32>) -> Tensor {
        let n = x.shape()[0];
        let d = self.config.data_dim;
        let temb = time_embedding(t, self.config.time_embed_dim);
        let chot = onehot(condition, self.config.num_classes);
        let width = d + temb.len() + chot.len();
        Tensor::from_fn(vec![n, width], |i| {
            let row = i / width;
            let col = i % width;
            if col < d {
                x.at2(row, col)
            } else if col < d + temb.len() {
                temb[col - d]
            } else {
                chot[col - d - temb.len()]
            }
        })
    }

    fn predict_fp(&self, params: &[Tensor], x: &Tensor, t: usize, condition: Option<u32>) -> Tensor {
        match self.config.backbone {
            BackboneKind::Mlp { .. } => {
                let z0 = self.embed_rows(x, t, condition);
                mlp_forward(params, &z0).out
            }
            BackboneKind::Conv2 { .. } => {
                let (h, w) = self.config.spatial.expect("validated");
                let temb = time_embedding(t, self.config.time_embed_dim);
                let chot = onehot(condition, self.config.num_classes);
                let n = x.shape()[0];
                let mut out = Vec::with_capacity(x.len());
                for i in 0..n {
                    let row = &x.data()[i * self.config.data_dim..(i + 1) * self.config.data_dim];
                    let cache = conv_forward(params, row, h, w, &temb, &chot);
                    out.extend_from_slice(&cache.out);
                }
                Tensor::from_vec(vec![n, self.config.data_dim], out).expect("shape preserved")
            }
        }
    }

    fn predict_int8(&self, exec: &Int8Exec, x: &Tensor, t: usize, condition: Option<u32>) -> Tensor {
        match self.config.backbone {
            BackboneKind::Mlp { .. } => {
                let z0 = self.embed_rows(x, t, condition);
                let mut act = z0;
                for layer in 0..3 {
                    let q_in = quantize(&act, &exec.act[layer]).expect("finite activations");
                    let mut y = qmatmul(&q_in, &exec.qweights[layer])
                        .expect("calibrated shapes agree");
                    let bias = &exec.fp[layer];
                    let cols = y.shape()[1];
                    let data: Vec<f64> = y
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, &v)| {
                            let b = bias.data()[i % cols];
                            if layer < 2 {
                                (v + b).tanh()
                            } else {
                                v + b
                            }
                        })
                        .collect();
                    y = Tensor::from_vec(y.shape().to_vec(), data).expect("shape preserved");
                    act = y;
                }
                act
            }
            BackboneKind::Conv2 { channels } => {
                let (h, w) = self.config.spatial.expect("validated");
                let temb = time_embedding(t, self.config.time_embed_dim);
                let chot = onehot(condition, self.config.num_classes);
                let b1 = &exec.fp[0];
                let wt = &exec.fp[1];
                let wc = &exec.fp[2];
                let b2 = &exec.fp[3];
                let n = x.shape()[0];
                let d = self.config.data_dim;
                let mut out = Vec::with_capacity(x.len());
                for i in 0..n {
                    let row = Tensor::from_vec(
                        vec![1, h, w],
                        x.data()[i * d..(i + 1) * d].to_vec(),
                    )
                    .expect("spatial dims validated");
                    let qx = quantize(&row, &exec.act[0]).expect("finite activations");
                    let c1 = qconv2d(&qx, &exec.qweights[0], (1, 1), (1, 1))
                        .expect("conv shapes agree");
                    let mut a1 = vec![0.0; channels * d];
                    for c in 0..channels {
                        let mut shift = b1.data()[c];
                        for (k, &tv) in temb.iter().enumerate() {
                            shift += wt.at2(c, k) * tv;
                        }
                        for (k, &cv) in chot.iter().enumerate() {
                            shift += wc.at2(c, k) * cv;
                        }
                        for p in 0..d {
                            a1[c * d + p] = (c1.data()[c * d + p] + shift).tanh();
                        }
                    }
                    let a1t = Tensor::from_vec(vec![channels, h, w], a1).expect("shape");
                    let qa1 = quantize(&a1t, &exec.act[1]).expect("finite activations");
                    let c2 = qconv2d(&qa1, &exec.qweights[1], (1, 1), (1, 1))
                        .expect("conv shapes agree");
                    out.extend(c2.data().iter().map(|&v| v + b2.data()[0]));
                }
                Tensor::from_vec(vec![n, d], out).expect("shape preserved")
            }
        }
    }
}

impl NoisePredictor for Denoiser {
    fn predict(&self, x: &Tensor, t: usize, condition: Option<u32>) -> Tensor {
        assert_eq!(x.rank(), 2, "predict wants [N, d]");
        assert_eq!(x.shape()[1], self.config.data_dim, "data dim mismatch");
        match &self.exec {
            ExecState::Fp(params) => self.predict_fp(params, x, t, condition),
            ExecState::Int8(exec) => self.predict_int8(exec, x, t, condition),
        }
    }

    fn dim(&self) -> usize {
        self.config.data_dim
    }
}

// ---------------------------------------------------------------------------
// MLP internals (shared by prediction, calibration and training)
// ---------------------------------------------------------------------------

pub(crate) struct MlpCache {
    pub z0: Tensor,
    pub a1: Tensor,
    pub a2: Tensor,
    pub out: Tensor,
}

fn linear_rows(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    // x [N, in] * w [out, in]^T + b
    let wt = w.transpose().expect("weight matrices are rank 2");
    let y = x.matmul(&wt).expect("inner dims agree");
    let cols = y.shape()[1];
    let data: Vec<f64> = y
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| v + b.data()[i % cols])
        .collect();
    Tensor::from_vec(y.shape().to_vec(), data).expect("shape preserved")
}

pub(crate) fn mlp_forward(params: &[Tensor], z0: &Tensor) -> MlpCache {
    let a1 = linear_rows(z0, &params[0], &params[1]).map(f64::tanh);
    let a2 = linear_rows(&a1, &params[2], &params[3]).map(f64::tanh);
    let out = linear_rows(&a2, &params[4], &params[5]);
    MlpCache {
        z0: z0.clone(),
        a1,
        a2,
        out,
    }
}

fn column_sums(x: &Tensor) -> Tensor {
    let (n, cols) = (x.shape()[0], x.shape()[1]);
    let mut sums = vec![0.0; cols];
    for i in 0..n {
        for j in 0..cols {
            sums[j] += x.at2(i, j);
        }
    }
    Tensor::from_vec(vec![cols], sums).expect("column count")
}

/// Gradients in parameter slot order given d(loss)/d(out).
pub(crate) fn mlp_backward(params: &[Tensor], cache: &MlpCache, dout: &Tensor) -> Vec<Tensor> {
    let dw3 = dout.transpose().unwrap().matmul(&cache.a2).unwrap();
    let db3 = column_sums(dout);
    let da2 = dout.matmul(&params[4]).unwrap();
    let dz2 = da2
        .zip_map(&cache.a2, |g, a| g * (1.0 - a * a))
        .unwrap();
    let dw2 = dz2.transpose().unwrap().matmul(&cache.a1).unwrap();
    let db2 = column_sums(&dz2);
    let da1 = dz2.matmul(&params[2]).unwrap();
    let dz1 = da1
        .zip_map(&cache.a1, |g, a| g * (1.0 - a * a))
        .unwrap();
    let dw1 = dz1.transpose().unwrap().matmul(&cache.z0).unwrap();
    let db1 = column_sums(&dz1);
    vec![dw1, db1, dw2, db2, dw3, db3]
}

// ---------------------------------------------------------------------------
// Conv2 internals
// ---------------------------------------------------------------------------

pub(crate) struct ConvCache {
    pub a1: Vec<f64>,  // [C * h * w]
    pub out: Vec<f64>, // [h * w]
}

fn conv3x3_same(input: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for ky in 0..3 {
                let iy = y as isize + ky as isize - 1;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let ix = x as isize + kx as isize - 1;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    acc += input[iy as usize * w + ix as usize] * kernel[ky * 3 + kx];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Adjoint of `conv3x3_same` with respect to its input.
fn conv3x3_same_transposed(dout: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let mut din = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let g = dout[y * w + x];
            if g == 0.0 {
                continue;
            }
            for ky in 0..3 {
                let iy = y as isize + ky as isize - 1;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let ix = x as isize + kx as isize - 1;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    din[iy as usize * w + ix as usize] += g * kernel[ky * 3 + kx];
                }
            }
        }
    }
    din
}

fn conv3x3_kernel_grad(input: &[f64], h: usize, w: usize, dout: &[f64]) -> [f64; 9] {
    let mut dk = [0.0; 9];
    for y in 0..h {
        for x in 0..w {
            let g = dout[y * w + x];
            if g == 0.0 {
                continue;
            }
            for (slot, d) in dk.iter_mut().enumerate() {
                let (ky, kx) = (slot / 3, slot % 3);
                let iy = y as isize + ky as isize - 1;
                let ix = x as isize + kx as isize - 1;
                if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                    continue;
                }
                *d += g * input[iy as usize * w + ix as usize];
            }
        }
    }
    dk
}

pub(crate) fn conv_forward(
    params: &[Tensor],
    x: &[f64],
    h: usize,
    w: usize,
    temb: &[f64],
    chot: &[f64],
) -> ConvCache {
    let channels = params[0].shape()[0];
    let d = h * w;
    let k1 = params[0].data();
    let b1 = params[1].data();
    let wt = &params[2];
    let wc = &params[3];
    let k2 = params[4].data();
    let b2 = params[5].data()[0];

    let mut a1 = vec![0.0; channels * d];
    for c in 0..channels {
        let conv = conv3x3_same(x, h, w, &k1[c * 9..(c + 1) * 9]);
        let mut shift = b1[c];
        for (k, &tv) in temb.iter().enumerate() {
            shift += wt.at2(c, k) * tv;
        }
        for (k, &cv) in chot.iter().enumerate() {
            shift += wc.at2(c, k) * cv;
        }
        for p in 0..d {
            a1[c * d + p] = (conv[p] + shift).tanh();
        }
    }
    let mut out = vec![b2; d];
    for c in 0..channels {
        let conv = conv3x3_same(&a1[c * d..(c + 1) * d], h, w, &k2[c * 9..(c + 1) * 9]);
        for p in 0..d {
            out[p] += conv[p];
        }
    }
    ConvCache { a1, out }
}

/// Accumulates parameter gradients for one item into `grads` (slot order).
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    params: &[Tensor],
    cache: &ConvCache,
    x: &[f64],
    h: usize,
    w: usize,
    temb: &[f64],
    chot: &[f64],
    dout: &[f64],
    grads: &mut [Vec<f64>],
) {
    let channels = params[0].shape()[0];
    let d = h * w;
    let k2 = params[4].data();

    grads[5][0] += dout.iter().sum::<f64>();
    for c in 0..channels {
        let a1c = &cache.a1[c * d..(c + 1) * d];
        // dK2[c] and da1 through the second conv
        let dk2 = conv3x3_kernel_grad(a1c, h, w, dout);
        for (slot, g) in dk2.iter().enumerate() {
            grads[4][c * 9 + slot] += g;
        }
        let da1 = conv3x3_same_transposed(dout, h, w, &k2[c * 9..(c + 1) * 9]);
        let dh1: Vec<f64> = da1
            .iter()
            .zip(a1c)
            .map(|(g, a)| g * (1.0 - a * a))
            .collect();
        let dk1 = conv3x3_kernel_grad(x, h, w, &dh1);
        for (slot, g) in dk1.iter().enumerate() {
            grads[0][c * 9 + slot] += g;
        }
        let dshift: f64 = dh1.iter().sum();
        grads[1][c] += dshift;
        for (k, &tv) in temb.iter().enumerate() {
            grads[2][c * temb.len() + k] += dshift * tv;
        }
        for (k, &cv) in chot.iter().enumerate() {
            grads[3][c * chot.len() + k] += dshift * cv;
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoints: JSON manifest + one tensor payload per parameter slot
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    config: DenoiserConfig,
    precision: Precision,
    params: Vec<String>,
}

pub fn save_checkpoint(dir: &Path, model: &Denoiser) -> Result<(), DiffusionError> {
    std::fs::create_dir_all(dir)?;
    let mut names = Vec::with_capacity(model.params.len());
    for (i, p) in model.params.iter().enumerate() {
        let name = format!("p{i:02}.tensor");
        save_tensor(&dir.join(&name), p)?;
        names.push(name);
    }
    let manifest = CheckpointManifest {
        config: model.config.clone(),
        precision: model.precision,
        params: names,
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| DiffusionError::Format(e.to_string()))?;
    std::fs::write(dir.join("manifest.json"), text)?;
    Ok(())
}

/// Loads a checkpoint at canonical precision; re-apply `with_precision` for
/// reduced-precision execution.
pub fn load_checkpoint(dir: &Path) -> Result<Denoiser, DiffusionError> {
    let text = std::fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| DiffusionError::Format(e.to_string()))?;
    if manifest.params.len() != PARAM_COUNT {
        return Err(DiffusionError::Format(format!(
            "checkpoint has {} parameter slots, want {PARAM_COUNT}",
            manifest.params.len()
        )));
    }
    let mut params = Vec::with_capacity(PARAM_COUNT);
    for name in &manifest.params {
        params.push(load_tensor(&dir.join(name))?);
    }
    manifest.config.validate()?;
    let exec = ExecState::Fp(params.clone());
    Ok(Denoiser {
        config: manifest.config,
        params,
        precision: Precision::Fp32,
        exec,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mlp_config() -> DenoiserConfig {
        DenoiserConfig {
            backbone: BackboneKind::Mlp { hidden: 16 },
            data_dim: 4,
            spatial: None,
            num_classes: 2,
            time_embed_dim: 6,
        }
    }

    fn conv_config() -> DenoiserConfig {
        DenoiserConfig {
            backbone: BackboneKind::Conv2 { channels: 4 },
            data_dim: 36,
            spatial: Some((6, 6)),
            num_classes: 2,
            time_embed_dim: 6,
        }
    }

    #[test]
    fn output_shape_matches_input_shape() {
        for cfg in [mlp_config(), conv_config()] {
            let model = Denoiser::new(cfg, 1).unwrap();
            let x = Tensor::zeros(vec![3, model.dim()]);
            let out = model.predict(&x, 10, Some(1));
            assert_eq!(out.shape(), x.shape());
        }
    }

    #[test]
    fn construction_is_seed_deterministic() {
        let a = Denoiser::new(mlp_config(), 5).unwrap();
        let b = Denoiser::new(mlp_config(), 5).unwrap();
        let c = Denoiser::new(mlp_config(), 6).unwrap();
        assert_eq!(a.params[0].data(), b.params[0].data());
        assert_ne!(a.params[0].data(), c.params[0].data());
    }

    #[test]
    fn guided_predictor_blends() {
        struct ConstPredictor;
        impl NoisePredictor for ConstPredictor {
            fn predict(&self, x: &Tensor, _t: usize, c: Option<u32>) -> Tensor {
                let v = if c.is_some() { 1.0 } else { 0.0 };
                Tensor::from_fn(x.shape().to_vec(), |_| v)
            }
            fn dim(&self) -> usize {
                1
            }
        }
        let base = ConstPredictor;
        let guided = GuidedPredictor {
            model: &base,
            condition: Some(0),
            guidance: 4.0,
        };
        let x = Tensor::zeros(vec![1, 1]);
        // 0 + 4 * (1 - 0) = 4
        assert_relative_eq!(guided.predict(&x, 1, None).data()[0], 4.0);
        let uncond = GuidedPredictor {
            model: &base,
            condition: None,
            guidance: 4.0,
        };
        assert_relative_eq!(uncond.predict(&x, 1, None).data()[0], 0.0);
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let model = Denoiser::new(mlp_config(), 2).unwrap();
        let x = Tensor::from_fn(vec![2, 4], |i| (i as f64 - 3.0) * 0.21);
        let target = Tensor::from_fn(vec![2, 4], |i| (i as f64) * 0.1 - 0.4);
        let z0 = model.embed_rows(&x, 7, Some(1));

        let loss_of = |params: &[Tensor]| -> f64 {
            let cache = mlp_forward(params, &z0);
            cache
                .out
                .data()
                .iter()
                .zip(target.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / cache.out.len() as f64
        };

        let cache = mlp_forward(&model.params, &z0);
        let n = cache.out.len() as f64;
        let dout = cache
            .out
            .zip_map(&target, |o, t| 2.0 * (o - t) / n)
            .unwrap();
        let grads = mlp_backward(&model.params, &cache, &dout);

        let eps = 1e-6;
        for (slot, idx) in [(0usize, 5usize), (1, 2), (2, 17), (3, 0), (4, 9), (5, 3)] {
            let mut params = model.params.clone();
            let base = params[slot].data()[idx];
            params[slot].data_mut()[idx] = base + eps;
            let up = loss_of(&params);
            params[slot].data_mut()[idx] = base - eps;
            let down = loss_of(&params);
            let numeric = (up - down) / (2.0 * eps);
            assert_relative_eq!(
                grads[slot].data()[idx],
                numeric,
                epsilon = 1e-7,
                max_relative = 1e-4
            );
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let model = Denoiser::new(conv_config(), 3).unwrap();
        let (h, w) = (6usize, 6usize);
        let x: Vec<f64> = (0..36).map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.1).collect();
        let target: Vec<f64> = (0..36).map(|i| ((i * 3 % 5) as f64) * 0.05).collect();
        let temb = time_embedding(9, 6);
        let chot = onehot(Some(0), 2);

        let loss_of = |params: &[Tensor]| -> f64 {
            let cache = conv_forward(params, &x, h, w, &temb, &chot);
            cache
                .out
                .iter()
                .zip(&target)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / 36.0
        };

        let cache = conv_forward(&model.params, &x, h, w, &temb, &chot);
        let dout: Vec<f64> = cache
            .out
            .iter()
            .zip(&target)
            .map(|(a, b)| 2.0 * (a - b) / 36.0)
            .collect();
        let mut grads: Vec<Vec<f64>> = model.params.iter().map(|p| vec![0.0; p.len()]).collect();
        conv_backward(
            &model.params,
            &cache,
            &x,
            h,
            w,
            &temb,
            &chot,
            &dout,
            &mut grads,
        );

        let eps = 1e-6;
        for (slot, idx) in [(0usize, 13usize), (1, 1), (2, 7), (3, 4), (4, 20), (5, 0)] {
            let mut params = model.params.clone();
            let base = params[slot].data()[idx];
            params[slot].data_mut()[idx] = base + eps;
            let up = loss_of(&params);
            params[slot].data_mut()[idx] = base - eps;
            let down = loss_of(&params);
            let numeric = (up - down) / (2.0 * eps);
            assert_relative_eq!(
                grads[slot][idx],
                numeric,
                epsilon = 1e-7,
                max_relative = 1e-4
            );
        }
    }

    #[test]
    fn fp16_execution_differs_but_stays_close() {
        let model = Denoiser::new(mlp_config(), 4).unwrap();
        let x = Tensor::from_fn(vec![1, 4], |i| 0.3 * (i as f64 + 1.0));
        let base = model.predict(&x, 5, None);
        let fp16 = model.with_precision(Precision::Fp16, &[]).unwrap();
        let out = fp16.predict(&x, 5, None);
        for (a, b) in base.data().iter().zip(out.data()) {
            assert_relative_eq!(a, b, epsilon = 0.05);
        }
    }

    #[test]
    fn int8_execution_error_is_bounded_and_recorded() {
        for cfg in [mlp_config(), conv_config()] {
            let model = Denoiser::new(cfg, 5).unwrap();
            let mut rng = crate::rng::stream(11, "test:int8");
            let calib: Vec<(Tensor, usize, Option<u32>)> = (0..16)
                .map(|i| {
                    (
                        super::super::randn(&mut rng, vec![model.dim()]),
                        1 + (i * 7) % 50,
                        if i % 3 == 0 { None } else { Some((i % 2) as u32) },
                    )
                })
                .collect();
            let int8 = model.with_precision(Precision::Int8, &calib).unwrap();
            let x = super::super::randn(&mut rng, vec![2, model.dim()]);
            let base = model.predict(&x, 25, Some(0));
            let quantized = int8.predict(&x, 25, Some(0));
            let max_err = base
                .data()
                .iter()
                .zip(quantized.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            // measured property: finite, nonzero, small relative to outputs
            assert!(max_err.is_finite());
            eprintln!("int8 max deviation ({:?}): {max_err:.6}", int8.config.backbone);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let model = Denoiser::new(conv_config(), 8).unwrap();
        save_checkpoint(dir.path(), &model).unwrap();
        let back = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back.config, model.config);
        for (a, b) in back.params.iter().zip(&model.params) {
            assert_eq!(a.data(), b.data());
        }
        let x = Tensor::zeros(vec![1, model.dim()]);
        assert_eq!(
            back.predict(&x, 3, None).data(),
            model.predict(&x, 3, None).data()
        );
    }
}
