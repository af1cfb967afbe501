//! Dense n-dimensional `f64` tensors plus the bit-exact FP32/FP16 codecs.
//!
//! All compute in this crate happens in 64-bit floats; FP32, FP16 and INT8
//! are storage/simulation formats that are applied explicitly so that every
//! bit of quantization error is attributable. Tensors are immutable after
//! construction and safe to share across threads.

pub(crate) mod alloc;
mod fp16;
mod fp32;
mod io;

pub use alloc::{live_tracked_bytes, peak_tracked_bytes, reset_peak_to_live};
pub use fp16::{fp16_decode, fp16_encode, fp16_round_trip, Fp16Bits};
pub use fp32::{fp32_decompose, fp32_round_trip, Fp32Parts, FpClass};
pub use io::{load_tensor, load_tensor_csv, save_tensor};

use alloc::AllocGuard;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("non-finite input: {0}")]
    NonFinite(f64),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
}

/// Storage precision tags used throughout the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Fp32,
    Fp16,
    Int8,
}

impl Precision {
    pub fn bytes_per_element(self) -> u64 {
        match self {
            Precision::Fp32 => 4,
            Precision::Fp16 => 2,
            Precision::Int8 => 1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Precision::Fp32 => "fp32",
            Precision::Fp16 => "fp16",
            Precision::Int8 => "int8",
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fp32" => Ok(Precision::Fp32),
            "fp16" => Ok(Precision::Fp16),
            "int8" => Ok(Precision::Int8),
            other => Err(format!("unknown precision '{other}'")),
        }
    }
}

/// Dense row-major tensor of 64-bit reals.
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    _alloc: AllocGuard,
}

impl Tensor {
    /// Builds a tensor from a flat row-major buffer.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::InvalidShape(format!(
                "zero extent in {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::InvalidShape(format!(
                "shape {shape:?} wants {expected} elements, buffer has {}",
                data.len()
            )));
        }
        let guard = AllocGuard::new(data.len() * std::mem::size_of::<f64>());
        Ok(Self {
            shape,
            data,
            _alloc: guard,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product::<usize>().max(1);
        Self::from_vec(shape, vec![0.0; n]).expect("zeros: shape validated by caller")
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_vec(vec![1], vec![v]).expect("scalar tensor")
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(&mut f).collect();
        Self::from_vec(shape, data).expect("from_fn: shape validated by caller")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// In-place access for optimizer updates; exclusive borrow keeps the
    /// shared-immutability contract intact.
    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Row-major element access for rank-2 tensors.
    #[inline]
    pub fn at2(&self, r: usize, c: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[r * self.shape[1] + c]
    }

    /// Row-major element access for rank-3 tensors.
    #[inline]
    pub fn at3(&self, a: usize, b: usize, c: usize) -> f64 {
        debug_assert_eq!(self.rank(), 3);
        self.data[(a * self.shape[1] + b) * self.shape[2] + c]
    }

    /// Row-major element access for rank-4 tensors.
    #[inline]
    pub fn at4(&self, a: usize, b: usize, c: usize, d: usize) -> f64 {
        debug_assert_eq!(self.rank(), 4);
        self.data[((a * self.shape[1] + b) * self.shape[2] + c) * self.shape[3] + d]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_vec(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
            .expect("map preserves shape")
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                expected: self.shape.clone(),
                got: other.shape.clone(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor::from_vec(self.shape.clone(), data).expect("zip_map preserves shape"))
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor, TensorError> {
        Tensor::from_vec(shape, self.data.clone())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.data.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// 2-D matrix product, plain row-major triple loop.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(TensorError::ShapeMismatch {
                expected: self.shape.clone(),
                got: other.shape.clone(),
            });
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &self.data[i * k..(i + 1) * k];
            for (j, o) in out[i * n..(i + 1) * n].iter_mut().enumerate() {
                let mut acc = 0.0;
                for (kk, &a) in row.iter().enumerate() {
                    acc += a * other.data[kk * n + j];
                }
                *o = acc;
            }
        }
        Tensor::from_vec(vec![m, n], out)
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Tensor, TensorError> {
        if self.rank() != 2 {
            return Err(TensorError::InvalidShape(format!(
                "transpose wants rank 2, got {:?}",
                self.shape
            )));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::from_vec(vec![c, r], out)
    }

    /// Simulates storing this tensor at the given precision: every element is
    /// round-tripped through the storage format, compute stays in f64.
    pub fn store_round_trip(&self, precision: Precision) -> Tensor {
        match precision {
            Precision::Fp32 => self.map(fp32_round_trip),
            Precision::Fp16 => self.map(fp16_round_trip),
            // INT8 needs calibration context; handled by the quant module.
            Precision::Int8 => self.clone(),
        }
    }
}
