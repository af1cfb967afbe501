//! Calibration: choosing scale and zero point from observed values.
//!
//! Symmetric mapping puts `max(|min|, |max|)` at the code 127 with a zero
//! zero-point; asymmetric mapping stretches `[min, max]` across the full
//! `[-128, 127]` range. A constant tensor is an error rather than a silent
//! `s = 1` fallback.

use serde::{Deserialize, Serialize};

use super::{Granularity, QuantError, QuantParams, QMAX, QMIN};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "name", content = "p")]
pub enum CalibScheme {
    MinMax,
    /// Clips the observed range to the `[p, 100-p]` percentiles before the
    /// min/max mapping; `p` in percent.
    Percentile(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Symmetry {
    Symmetric,
    Asymmetric,
}

fn range_of(values: &[f64], scheme: CalibScheme) -> Result<(f64, f64), QuantError> {
    if values.is_empty() {
        return Err(QuantError::EmptyInput);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(QuantError::NonFinite);
    }
    match scheme {
        CalibScheme::MinMax => {
            let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            Ok((lo, hi))
        }
        CalibScheme::Percentile(p) => {
            if !(0.0..50.0).contains(&p) {
                return Err(QuantError::InvalidParams(format!(
                    "percentile {p} outside [0, 50)"
                )));
            }
            let mut sorted = values.to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
            Ok((quantile(&sorted, p / 100.0), quantile(&sorted, 1.0 - p / 100.0)))
        }
    }
}

/// Linear-interpolated quantile over a sorted slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn params_from_range(lo: f64, hi: f64, symmetry: Symmetry) -> Result<(f64, i32), QuantError> {
    if lo == hi {
        return Err(QuantError::DegenerateRange(lo));
    }
    match symmetry {
        Symmetry::Symmetric => {
            let bound = lo.abs().max(hi.abs());
            Ok((bound / QMAX as f64, 0))
        }
        Symmetry::Asymmetric => {
            let scale = (hi - lo) / (QMAX - QMIN) as f64;
            let zero = (QMIN as f64 - lo / scale).round() as i32;
            Ok((scale, zero.clamp(QMIN, QMAX)))
        }
    }
}

/// Per-tensor calibration over all elements.
pub fn calibrate(
    values: &Tensor,
    scheme: CalibScheme,
    symmetry: Symmetry,
) -> Result<QuantParams, QuantError> {
    let (lo, hi) = range_of(values.data(), scheme)?;
    let (scale, zero) = params_from_range(lo, hi, symmetry)?;
    QuantParams::per_tensor(scale, zero)
}

/// Per-channel calibration along `axis`; each channel gets its own range.
pub fn calibrate_per_channel(
    values: &Tensor,
    axis: usize,
    scheme: CalibScheme,
    symmetry: Symmetry,
) -> Result<QuantParams, QuantError> {
    if axis >= values.rank() {
        return Err(QuantError::InvalidParams(format!(
            "axis {axis} out of range for shape {:?}",
            values.shape()
        )));
    }
    let channels = values.shape()[axis];
    let stride: usize = values.shape()[axis + 1..].iter().product();
    let mut scales = Vec::with_capacity(channels);
    let mut zeros = Vec::with_capacity(channels);
    for ch in 0..channels {
        let slice: Vec<f64> = values
            .data()
            .iter()
            .enumerate()
            .filter(|(i, _)| (i / stride) % channels == ch)
            .map(|(_, &v)| v)
            .collect();
        let (lo, hi) = range_of(&slice, scheme)?;
        let (scale, zero) = params_from_range(lo, hi, symmetry)?;
        scales.push(scale);
        zeros.push(zero);
    }
    QuantParams::new(scales, zeros, Granularity::PerChannel { axis })
}
