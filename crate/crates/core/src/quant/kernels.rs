//! Integer-accumulated linear algebra on quantized operands.
//!
//! Both kernels accumulate `(q_a - z_a) * (q_b - z_b)` in i32 and apply the
//! combined scale once at the end, which equals the floating-point result on
//! the dequantized operands. Accumulation is checked: a reduction longer than
//! 2^16 or an actual i32 overflow is reported instead of wrapping. Row-level
//! parallelism keeps a fixed per-row reduction order, so results do not
//! depend on the thread count.

use rayon::prelude::*;

use super::{Granularity, QuantError, QuantizedTensor};
use crate::tensor::Tensor;

const MAX_REDUCTION: usize = 1 << 16;

fn require_per_tensor(t: &QuantizedTensor, what: &str) -> Result<(), QuantError> {
    match t.params().granularity {
        Granularity::PerTensor => Ok(()),
        Granularity::PerChannel { .. } => Err(QuantError::InvalidParams(format!(
            "{what} must be per-tensor quantized"
        ))),
    }
}

/// 2-D quantized matrix product returning a full-precision tensor.
pub fn qmatmul(a: &QuantizedTensor, b: &QuantizedTensor) -> Result<Tensor, QuantError> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(QuantError::ShapeMismatch(format!(
            "qmatmul {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    require_per_tensor(a, "lhs")?;
    require_per_tensor(b, "rhs")?;
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    if k > MAX_REDUCTION {
        return Err(QuantError::AccumulatorOverflow(format!(
            "inner dimension {k} exceeds {MAX_REDUCTION}"
        )));
    }
    let za = a.zero_of(0);
    let zb = b.zero_of(0);
    let scale = a.scale_of(0) * b.scale_of(0);
    let ap = a.payload();
    let bp = b.payload();

    let rows: Result<Vec<Vec<f64>>, QuantError> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![0.0; n];
            for (j, out) in row.iter_mut().enumerate() {
                let mut acc: i32 = 0;
                for kk in 0..k {
                    let da = ap[i * k + kk] as i32 - za;
                    let db = bp[kk * n + j] as i32 - zb;
                    acc = acc
                        .checked_add(da * db)
                        .ok_or_else(|| {
                            QuantError::AccumulatorOverflow(format!(
                                "i32 overflow at output ({i},{j})"
                            ))
                        })?;
                }
                *out = scale * acc as f64;
            }
            Ok(row)
        })
        .collect();

    let data: Vec<f64> = rows?.into_iter().flatten().collect();
    Ok(Tensor::from_vec(vec![m, n], data)?)
}

/// Quantized 2-D convolution (cross-correlation, zero padding).
///
/// `input` is `[C, H, W]`, `kernel` is `[OC, C, KH, KW]`; the kernel may be
/// per-channel quantized along its output axis. Out-of-bounds taps carry the
/// real value zero, i.e. the code `z_in`, and so contribute nothing to the
/// shifted accumulation.
pub fn qconv2d(
    input: &QuantizedTensor,
    kernel: &QuantizedTensor,
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<Tensor, QuantError> {
    if input.shape().len() != 3 || kernel.shape().len() != 4 {
        return Err(QuantError::ShapeMismatch(format!(
            "qconv2d wants [C,H,W] x [OC,C,KH,KW], got {:?} x {:?}",
            input.shape(),
            kernel.shape()
        )));
    }
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (oc, kc, kh, kw) = (
        kernel.shape()[0],
        kernel.shape()[1],
        kernel.shape()[2],
        kernel.shape()[3],
    );
    if c != kc {
        return Err(QuantError::ShapeMismatch(format!(
            "input channels {c} vs kernel channels {kc}"
        )));
    }
    require_per_tensor(input, "input")?;
    if let Granularity::PerChannel { axis } = kernel.params().granularity {
        if axis != 0 {
            return Err(QuantError::InvalidParams(
                "conv kernels support per-channel only along the output axis".to_string(),
            ));
        }
    }
    if c * kh * kw > MAX_REDUCTION {
        return Err(QuantError::AccumulatorOverflow(format!(
            "reduction {} exceeds {MAX_REDUCTION}",
            c * kh * kw
        )));
    }
    let (sy, sx) = stride;
    let (py, px) = padding;
    if sy == 0 || sx == 0 {
        return Err(QuantError::InvalidParams("zero stride".to_string()));
    }
    if h + 2 * py < kh || w + 2 * px < kw {
        return Err(QuantError::ShapeMismatch(format!(
            "kernel {kh}x{kw} larger than padded input {}x{}",
            h + 2 * py,
            w + 2 * px
        )));
    }
    let oh = (h + 2 * py - kh) / sy + 1;
    let ow = (w + 2 * px - kw) / sx + 1;

    let zi = input.zero_of(0);
    let si = input.scale_of(0);
    let ip = input.payload();
    let kp = kernel.payload();
    let kchan = |o: usize| match kernel.params().granularity {
        Granularity::PerTensor => 0,
        Granularity::PerChannel { .. } => o,
    };

    let per_oc: Result<Vec<Vec<f64>>, QuantError> = (0..oc)
        .into_par_iter()
        .map(|o| {
            let zk = kernel.zero_of(kchan(o));
            let sk = kernel.scale_of(kchan(o));
            let scale = si * sk;
            let mut plane = vec![0.0; oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc: i32 = 0;
                    for ic in 0..c {
                        for ky in 0..kh {
                            // Signed arithmetic for the padded coordinate; taps
                            // outside the input are exact zeros and are skipped.
                            let iy = (oy * sy + ky) as isize - py as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (ox * sx + kx) as isize - px as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let di = ip[(ic * h + iy as usize) * w + ix as usize] as i32 - zi;
                                let dk =
                                    kp[((o * c + ic) * kh + ky) * kw + kx] as i32 - zk;
                                acc = acc.checked_add(di * dk).ok_or_else(|| {
                                    QuantError::AccumulatorOverflow(format!(
                                        "i32 overflow at output ({o},{oy},{ox})"
                                    ))
                                })?;
                            }
                        }
                    }
                    plane[oy * ow + ox] = scale * acc as f64;
                }
            }
            Ok(plane)
        })
        .collect();

    let data: Vec<f64> = per_oc?.into_iter().flatten().collect();
    Ok(Tensor::from_vec(vec![oc, oh, ow], data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::{dequantize, quantize, QuantParams};
    use approx::assert_relative_eq;

    fn qt(shape: Vec<usize>, values: &[f64], scale: f64, zero: i32) -> QuantizedTensor {
        let t = Tensor::from_vec(shape, values.to_vec()).unwrap();
        quantize(&t, &QuantParams::per_tensor(scale, zero).unwrap()).unwrap()
    }

    #[test]
    fn one_by_one_product() {
        let a = qt(vec![1, 1], &[0.5], 0.01, 0);
        let b = qt(vec![1, 1], &[0.5], 0.01, 0);
        let c = qmatmul(&a, &b).unwrap();
        assert_relative_eq!(c.data()[0], 0.25);
    }

    #[test]
    fn identity_times_matrix_recovers_dequantized() {
        let eye = qt(vec![2, 2], &[1.0, 0.0, 0.0, 1.0], 0.5, 0); // codes 2,0,0,2
        let a = qt(vec![2, 2], &[0.25, -0.5, 0.75, 1.0], 0.25, 0);
        let c = qmatmul(&eye, &a).unwrap();
        let a_hat = dequantize(&a);
        for (x, y) in c.data().iter().zip(a_hat.data()) {
            // identity has an exact quantization at scale 0.5
            assert_relative_eq!(*x, *y);
        }
    }

    #[test]
    fn rejects_inner_dim_mismatch_and_overflow_guard() {
        let a = qt(vec![2, 3], &[0.0; 6], 1.0, 0);
        let b = qt(vec![2, 2], &[0.0; 4], 1.0, 0);
        assert!(matches!(qmatmul(&a, &b), Err(QuantError::ShapeMismatch(_))));

        let long = QuantizedTensor::from_parts(
            vec![1, MAX_REDUCTION + 1],
            vec![0; MAX_REDUCTION + 1],
            QuantParams::per_tensor(1.0, 0).unwrap(),
        )
        .unwrap();
        let col = QuantizedTensor::from_parts(
            vec![MAX_REDUCTION + 1, 1],
            vec![0; MAX_REDUCTION + 1],
            QuantParams::per_tensor(1.0, 0).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            qmatmul(&long, &col),
            Err(QuantError::AccumulatorOverflow(_))
        ));
    }

    #[test]
    fn unit_kernel_recovers_dequantized_input() {
        // kernel value 1.0 at scale 1/127 quantizes to 127 exactly? no: 1/ (1/127) = 127.
        let input = qt(vec![1, 3, 3], &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9], 0.01, 0);
        let kernel = qt(vec![1, 1, 1, 1], &[1.0], 1.0 / 127.0, 0);
        let out = qconv2d(&input, &kernel, (1, 1), (0, 0)).unwrap();
        let expect = dequantize(&input);
        for (x, y) in out.data().iter().zip(expect.data()) {
            assert_relative_eq!(*x, *y, max_relative = 1e-12);
        }
    }

    #[test]
    fn delta_image_reads_out_kernel() {
        // output(y,x) = sum_k kernel(ky,kx) * input(y+ky-1, x+kx-1) with pad 1;
        // a unit impulse at input(1,1) selects kernel(2-y, 2-x).
        let mut img = vec![0.0; 9];
        img[4] = 1.0;
        let input = qt(vec![1, 3, 3], &img, 1.0 / 127.0, 0);
        let kvals = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
        let kernel = qt(vec![1, 1, 3, 3], &kvals, 0.01, 0);
        let out = qconv2d(&input, &kernel, (1, 1), (1, 1)).unwrap();
        assert_eq!(out.shape(), &[1, 3, 3]);
        let in_hat = dequantize(&input).data()[4];
        let k_hat = dequantize(&kernel);
        for y in 0..3 {
            for x in 0..3 {
                let expect = in_hat * k_hat.at4(0, 0, 2 - y, 2 - x);
                assert_relative_eq!(out.at3(0, y, x), expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let input = qt(vec![2, 3, 3], &[0.0; 18], 1.0, 0);
        let kernel = qt(vec![1, 1, 2, 2], &[0.0; 4], 1.0, 0);
        assert!(matches!(
            qconv2d(&input, &kernel, (1, 1), (0, 0)),
            Err(QuantError::ShapeMismatch(_))
        ));
    }
}
