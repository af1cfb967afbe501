//! Affine INT8 quantization: `q = clip(round(w/s) + z, -128, 127)` with
//! dequantization `w_hat = s * (q - z)`, calibration schemes, the
//! quantization-aware loss penalty, and integer-accumulated kernels.

mod calibrate;
mod io;
mod kernels;

pub use calibrate::{calibrate, calibrate_per_channel, CalibScheme, Symmetry};
pub use io::{load_quantized, save_quantized};
pub use kernels::{qconv2d, qmatmul};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

pub const QMIN: i32 = -128;
pub const QMAX: i32 = 127;

#[derive(Debug, Error)]
pub enum QuantError {
    #[error("invalid clip range: a={0} > b={1}")]
    InvalidRange(f64, f64),
    #[error("degenerate calibration range: min == max == {0}")]
    DegenerateRange(f64),
    #[error("calibration input is empty")]
    EmptyInput,
    #[error("calibration input contains non-finite values")]
    NonFinite,
    #[error("invalid quant params: {0}")]
    InvalidParams(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("accumulator overflow: {0}")]
    AccumulatorOverflow(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
}

/// Quantization granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Granularity {
    PerTensor,
    PerChannel { axis: usize },
}

/// Scale / zero-point pairs; one pair for per-tensor granularity, one per
/// channel along the chosen axis otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scales: Vec<f64>,
    pub zero_points: Vec<i32>,
    pub granularity: Granularity,
}

impl QuantParams {
    pub fn per_tensor(scale: f64, zero_point: i32) -> Result<Self, QuantError> {
        Self::new(vec![scale], vec![zero_point], Granularity::PerTensor)
    }

    pub fn new(
        scales: Vec<f64>,
        zero_points: Vec<i32>,
        granularity: Granularity,
    ) -> Result<Self, QuantError> {
        if scales.is_empty() || scales.len() != zero_points.len() {
            return Err(QuantError::InvalidParams(format!(
                "{} scales vs {} zero points",
                scales.len(),
                zero_points.len()
            )));
        }
        if let Some(s) = scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(QuantError::InvalidParams(format!("scale {s} must be > 0")));
        }
        if let Some(z) = zero_points.iter().find(|z| **z < QMIN || **z > QMAX) {
            return Err(QuantError::InvalidParams(format!(
                "zero point {z} outside [{QMIN},{QMAX}]"
            )));
        }
        if matches!(granularity, Granularity::PerTensor) && scales.len() != 1 {
            return Err(QuantError::InvalidParams(
                "per-tensor params want exactly one scale".to_string(),
            ));
        }
        Ok(Self {
            scales,
            zero_points,
            granularity,
        })
    }

    /// Number of channels covered by these params.
    pub fn channels(&self) -> usize {
        self.scales.len()
    }
}

/// INT8 payload plus the params needed to interpret it.
#[derive(Debug, Clone)]
pub struct QuantizedTensor {
    shape: Vec<usize>,
    payload: Vec<i8>,
    params: QuantParams,
    _alloc: crate::tensor::alloc::AllocGuard,
}

impl QuantizedTensor {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn payload(&self) -> &[i8] {
        &self.payload
    }

    pub fn params(&self) -> &QuantParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.payload.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payload.is_empty()
    }

    /// Channel index of a flat element position under the params' granularity.
    #[inline]
    pub(crate) fn channel_of(&self, flat: usize) -> usize {
        match self.params.granularity {
            Granularity::PerTensor => 0,
            Granularity::PerChannel { axis } => {
                let stride: usize = self.shape[axis + 1..].iter().product();
                (flat / stride) % self.shape[axis]
            }
        }
    }

    #[inline]
    pub(crate) fn scale_of(&self, channel: usize) -> f64 {
        self.params.scales[channel]
    }

    #[inline]
    pub(crate) fn zero_of(&self, channel: usize) -> i32 {
        self.params.zero_points[channel]
    }

    pub(crate) fn from_parts(
        shape: Vec<usize>,
        payload: Vec<i8>,
        params: QuantParams,
    ) -> Result<Self, QuantError> {
        let n: usize = shape.iter().product();
        if n != payload.len() {
            return Err(QuantError::ShapeMismatch(format!(
                "shape {shape:?} wants {n} elements, payload has {}",
                payload.len()
            )));
        }
        if let Granularity::PerChannel { axis } = params.granularity {
            if axis >= shape.len() || params.channels() != shape[axis] {
                return Err(QuantError::InvalidParams(format!(
                    "per-channel axis {axis} does not match shape {shape:?}"
                )));
            }
        }
        let guard = crate::tensor::alloc::AllocGuard::new(payload.len());
        Ok(Self {
            shape,
            payload,
            params,
            _alloc: guard,
        })
    }
}

/// `clip(x, a, b) = max(a, min(b, x))`.
pub fn clip(x: f64, a: f64, b: f64) -> Result<f64, QuantError> {
    if a > b {
        return Err(QuantError::InvalidRange(a, b));
    }
    Ok(x.min(b).max(a))
}

/// Maps full-precision values to INT8 codes. Rounding is ties-to-even;
/// saturation keeps every code inside `[-128, 127]`.
pub fn quantize(w: &Tensor, params: &QuantParams) -> Result<QuantizedTensor, QuantError> {
    if let Granularity::PerChannel { axis } = params.granularity {
        if axis >= w.rank() || params.channels() != w.shape()[axis] {
            return Err(QuantError::InvalidParams(format!(
                "per-channel axis {axis} does not match shape {:?}",
                w.shape()
            )));
        }
    }
    let shape = w.shape().to_vec();
    let chan_stride: usize = match params.granularity {
        Granularity::PerTensor => 0,
        Granularity::PerChannel { axis } => shape[axis + 1..].iter().product(),
    };
    let payload = w
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let ch = match params.granularity {
                Granularity::PerTensor => 0,
                Granularity::PerChannel { axis } => (i / chan_stride) % shape[axis],
            };
            let s = params.scales[ch];
            let z = params.zero_points[ch];
            let q = (v / s).round_ties_even() + z as f64;
            q.min(QMAX as f64).max(QMIN as f64) as i8
        })
        .collect();
    QuantizedTensor::from_parts(shape, payload, params.clone())
}

/// Recovers `w_hat = s * (q - z)` in canonical f64 precision.
pub fn dequantize(q: &QuantizedTensor) -> Tensor {
    let data = q
        .payload
        .iter()
        .enumerate()
        .map(|(i, &code)| {
            let ch = q.channel_of(i);
            q.scale_of(ch) * (code as i32 - q.zero_of(ch)) as f64
        })
        .collect();
    Tensor::from_vec(q.shape.clone(), data).expect("payload length matches shape")
}

/// Quantization-aware training objective: task loss plus the weighted squared
/// Euclidean distance between full-precision and dequantized weights.
pub fn qat_total_loss(
    task_loss: f64,
    w: &Tensor,
    w_hat: &Tensor,
    lambda: f64,
) -> Result<f64, QuantError> {
    if w.shape() != w_hat.shape() {
        return Err(QuantError::ShapeMismatch(format!(
            "{:?} vs {:?}",
            w.shape(),
            w_hat.shape()
        )));
    }
    let penalty: f64 = w
        .data()
        .iter()
        .zip(w_hat.data())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok(task_loss + lambda * penalty)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_matches_spec_examples() {
        assert_eq!(clip(5.0, -128.0, 127.0).unwrap(), 5.0);
        assert_eq!(clip(300.0, -128.0, 127.0).unwrap(), 127.0);
        assert_eq!(clip(-200.0, -128.0, 127.0).unwrap(), -128.0);
        assert!(matches!(
            clip(0.0, 1.0, -1.0),
            Err(QuantError::InvalidRange(..))
        ));
    }

    #[test]
    fn quantize_examples() {
        let p = QuantParams::per_tensor(0.01, 0).unwrap();
        let w = Tensor::from_vec(vec![3], vec![0.5, 0.0, 10.0]).unwrap();
        let q = quantize(&w, &p).unwrap();
        assert_eq!(q.payload(), &[50, 0, 127]);
    }

    #[test]
    fn quantize_rounds_ties_to_even() {
        let p = QuantParams::per_tensor(1.0, 0).unwrap();
        let w = Tensor::from_vec(vec![4], vec![0.5, 1.5, 2.5, -0.5]).unwrap();
        let q = quantize(&w, &p).unwrap();
        assert_eq!(q.payload(), &[0, 2, 2, 0]);
    }

    #[test]
    fn dequantize_examples() {
        let p = QuantParams::per_tensor(0.01, 0).unwrap();
        let q = QuantizedTensor::from_parts(vec![1], vec![50], p).unwrap();
        assert_eq!(dequantize(&q).data(), &[0.5]);

        let p = QuantParams::per_tensor(0.3, 7).unwrap();
        let q = QuantizedTensor::from_parts(vec![1], vec![7], p).unwrap();
        assert_eq!(dequantize(&q).data(), &[0.0]);
    }

    #[test]
    fn qat_loss_examples() {
        let w = Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap();
        let same = w.clone();
        assert_eq!(qat_total_loss(3.0, &w, &same, 0.7).unwrap(), 3.0);

        let w_hat = Tensor::from_vec(vec![2], vec![1.0, 1.0]).unwrap();
        assert_eq!(qat_total_loss(1.0, &w, &w_hat, 0.5).unwrap(), 1.5);
        assert_eq!(qat_total_loss(1.0, &w, &w_hat, 0.0).unwrap(), 1.0);

        let bad = Tensor::zeros(vec![3]);
        assert!(qat_total_loss(1.0, &w, &bad, 0.5).is_err());
    }

    #[test]
    fn per_channel_quantization_uses_channel_params() {
        let p = QuantParams::new(
            vec![0.1, 0.01],
            vec![0, 0],
            Granularity::PerChannel { axis: 0 },
        )
        .unwrap();
        let w = Tensor::from_vec(vec![2, 2], vec![1.0, 2.0, 0.1, 0.2]).unwrap();
        let q = quantize(&w, &p).unwrap();
        assert_eq!(q.payload(), &[10, 20, 10, 20]);
        let back = dequantize(&q);
        assert_eq!(back.data(), &[1.0, 2.0, 0.1, 0.2]);
    }
}
