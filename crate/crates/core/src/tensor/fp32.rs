//! Single-precision field decomposition.
//!
//! A finite normal FP32 value is `(-1)^s * 2^(e-127) * (1 + m/2^23)`. Zero
//! and subnormals (`e == 0`) decode as `(-1)^s * 2^-126 * (m/2^23)`; NaN and
//! infinity are rejected at decomposition so the reconstruction stays total
//! over what we hand out.

use super::TensorError;

const F32_MANTISSA_BITS: u32 = 23;
const F32_EXP_BIAS: i32 = 127;

/// Value class of a decomposed FP32 pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FpClass {
    Zero,
    Subnormal,
    Normal,
}

/// Sign/exponent/mantissa fields of a finite `f32`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fp32Parts {
    /// Sign bit, 0 or 1.
    pub sign: u8,
    /// Biased exponent in `[0, 254]` (255 patterns are non-finite and rejected).
    pub exponent: u8,
    /// 23-bit mantissa field.
    pub mantissa: u32,
}

impl Fp32Parts {
    pub fn class(&self) -> FpClass {
        match (self.exponent, self.mantissa) {
            (0, 0) => FpClass::Zero,
            (0, _) => FpClass::Subnormal,
            _ => FpClass::Normal,
        }
    }

    /// Evaluates the field formula exactly in f64.
    pub fn reconstruct(&self) -> f64 {
        let sign = if self.sign == 1 { -1.0 } else { 1.0 };
        let m = self.mantissa as f64 / (1u64 << F32_MANTISSA_BITS) as f64;
        if self.exponent == 0 {
            // IEEE 754 extension: subnormals lose the implicit leading one
            // and pin the exponent at 1 - bias.
            sign * m * 2f64.powi(1 - F32_EXP_BIAS)
        } else {
            sign * (1.0 + m) * 2f64.powi(self.exponent as i32 - F32_EXP_BIAS)
        }
    }
}

/// Splits a finite `f32` into sign, biased exponent, and mantissa fields.
pub fn fp32_decompose(x: f32) -> Result<Fp32Parts, TensorError> {
    if !x.is_finite() {
        return Err(TensorError::NonFinite(x as f64));
    }
    let bits = x.to_bits();
    Ok(Fp32Parts {
        sign: ((bits >> 31) & 1) as u8,
        exponent: ((bits >> F32_MANTISSA_BITS) & 0xFF) as u8,
        mantissa: bits & 0x007F_FFFF,
    })
}

/// Round-trips an f64 through f32 storage (the FP32 simulation path).
pub fn fp32_round_trip(x: f64) -> f64 {
    x as f32 as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_decomposes_to_biased_127() {
        let p = fp32_decompose(1.0).unwrap();
        assert_eq!((p.sign, p.exponent, p.mantissa), (0, 127, 0));
        assert_eq!(p.reconstruct(), 1.0);
    }

    #[test]
    fn negative_two_decomposes_to_biased_128() {
        let p = fp32_decompose(-2.0).unwrap();
        assert_eq!((p.sign, p.exponent, p.mantissa), (1, 128, 0));
        assert_eq!(p.reconstruct(), -2.0);
    }

    #[test]
    fn zero_is_the_zero_class() {
        let p = fp32_decompose(0.0).unwrap();
        assert_eq!(p.class(), FpClass::Zero);
        assert_eq!(p.reconstruct(), 0.0);
    }

    #[test]
    fn subnormals_reconstruct_exactly() {
        let tiny = f32::from_bits(0x0000_0001); // smallest positive subnormal
        let p = fp32_decompose(tiny).unwrap();
        assert_eq!(p.class(), FpClass::Subnormal);
        assert_eq!(p.reconstruct(), tiny as f64);
    }

    #[test]
    fn non_finite_is_rejected() {
        assert!(fp32_decompose(f32::NAN).is_err());
        assert!(fp32_decompose(f32::INFINITY).is_err());
    }

    #[test]
    fn reconstruction_is_exact_for_random_normals() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        for _ in 0..100_000 {
            let bits: u32 = rng.random();
            let x = f32::from_bits(bits);
            if !x.is_finite() || x == 0.0 || x.is_subnormal() {
                continue;
            }
            let p = fp32_decompose(x).unwrap();
            assert_eq!(p.class(), FpClass::Normal);
            assert_eq!(p.reconstruct(), x as f64, "bits {bits:#010x}");
        }
    }
}
