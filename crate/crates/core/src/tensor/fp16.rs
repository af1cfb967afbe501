//! Software half-precision codec.
//!
//! Layout: 1 sign bit, 5 exponent bits (bias 15), 10 mantissa bits. Encoding
//! converts straight from f64 with round-to-nearest-even so the simulation
//! does not inherit a double-rounding step through f32. Decoding is exact:
//! every finite half value is representable in f64.
//!
//! Totality conventions: values above the largest normal (65504) round to
//! infinity, values below half the smallest subnormal flush to signed zero,
//! NaN maps to the canonical quiet NaN pattern.

const SIGN_MASK: u16 = 0x8000;
const EXP_MASK: u16 = 0x7C00;
const MAN_MASK: u16 = 0x03FF;
const CANONICAL_NAN: u16 = 0x7E00;

/// Raw 16-bit half-precision pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fp16Bits(pub u16);

impl Fp16Bits {
    pub fn sign(self) -> u8 {
        ((self.0 & SIGN_MASK) >> 15) as u8
    }

    /// Biased 5-bit exponent field.
    pub fn exponent(self) -> u8 {
        ((self.0 & EXP_MASK) >> 10) as u8
    }

    /// 10-bit mantissa field.
    pub fn mantissa(self) -> u16 {
        self.0 & MAN_MASK
    }

    pub fn is_nan(self) -> bool {
        self.0 & EXP_MASK == EXP_MASK && self.0 & MAN_MASK != 0
    }

    pub fn is_infinite(self) -> bool {
        self.0 & EXP_MASK == EXP_MASK && self.0 & MAN_MASK == 0
    }

    pub fn is_finite(self) -> bool {
        self.0 & EXP_MASK != EXP_MASK
    }
}

/// Encodes an f64 to the nearest half-precision pattern (ties to even).
pub fn fp16_encode(x: f64) -> Fp16Bits {
    let bits = x.to_bits();
    let sign = ((bits >> 48) & SIGN_MASK as u64) as u16;
    let exp = ((bits >> 52) & 0x7FF) as i32;
    let man = bits & 0x000F_FFFF_FFFF_FFFF;

    if exp == 0x7FF {
        if man == 0 {
            return Fp16Bits(sign | EXP_MASK);
        }
        return Fp16Bits(sign | CANONICAL_NAN);
    }
    if exp == 0 {
        // f64 subnormals are far below the half-precision underflow point.
        return Fp16Bits(sign);
    }

    let half_exp = exp - 1023 + 15;
    if half_exp >= 0x1F {
        return Fp16Bits(sign | EXP_MASK);
    }

    if half_exp <= 0 {
        // Subnormal target: shift the 53-bit significand (hidden bit included)
        // down to units of 2^-24.
        let shift = 43 - half_exp; // >= 43 since half_exp <= 0
        if shift > 53 {
            return Fp16Bits(sign);
        }
        let man53 = man | (1u64 << 52);
        let half_man = (man53 >> shift) as u16;
        let round_bit = 1u64 << (shift - 1);
        // Round up when the round bit is set and either a sticky bit or the
        // retained LSB is set (round-to-nearest-even). Overflow into the
        // exponent field yields the smallest normal, which is correct.
        if man53 & round_bit != 0 && man53 & (3 * round_bit - 1) != 0 {
            return Fp16Bits((sign | half_man) + 1);
        }
        return Fp16Bits(sign | half_man);
    }

    let half = sign | ((half_exp as u16) << 10) | (man >> 42) as u16;
    let round_bit = 1u64 << 41;
    if man & round_bit != 0 && man & (3 * round_bit - 1) != 0 {
        // Mantissa carry may push into the exponent and, at the top of the
        // range, to infinity; plain integer increment handles both.
        Fp16Bits(half + 1)
    } else {
        Fp16Bits(half)
    }
}

/// Decodes a half-precision pattern to its exact f64 value.
pub fn fp16_decode(b: Fp16Bits) -> f64 {
    let sign = if b.sign() == 1 { -1.0 } else { 1.0 };
    let e = b.exponent();
    let m = b.mantissa() as f64 / 1024.0;
    match e {
        0 => sign * m * 2f64.powi(-14),
        0x1F => {
            if b.mantissa() == 0 {
                sign * f64::INFINITY
            } else {
                f64::NAN
            }
        }
        _ => sign * (1.0 + m) * 2f64.powi(e as i32 - 15),
    }
}

/// Round-trips an f64 through half-precision storage.
pub fn fp16_round_trip(x: f64) -> f64 {
    fp16_decode(fp16_encode(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_encodes_to_biased_15() {
        let b = fp16_encode(1.0);
        assert_eq!((b.sign(), b.exponent(), b.mantissa()), (0, 15, 0));
        assert_eq!(fp16_decode(b), 1.0);
    }

    #[test]
    fn zero_is_the_all_zero_pattern() {
        assert_eq!(fp16_encode(0.0).0, 0x0000);
        assert_eq!(fp16_encode(-0.0).0, 0x8000);
        assert_eq!(fp16_decode(Fp16Bits(0)), 0.0);
    }

    #[test]
    fn max_normal_is_65504() {
        let b = fp16_encode(65504.0);
        assert_eq!((b.exponent(), b.mantissa()), (30, 1023));
        assert_eq!(fp16_decode(b), 65504.0);
    }

    #[test]
    fn overflow_saturates_to_infinity() {
        assert!(fp16_encode(65520.0).is_infinite());
        assert!(fp16_encode(1e300).is_infinite());
        assert_eq!(fp16_encode(-1e300).sign(), 1);
    }

    #[test]
    fn just_below_overflow_rounds_to_max_normal() {
        // 65519.999... is nearer to 65504 than to 2^16.
        assert_eq!(fp16_decode(fp16_encode(65519.0)), 65504.0);
        // The exact midpoint 65520 ties toward the even pattern, infinity.
        assert!(fp16_encode(65520.0 - 1e-9).is_finite());
    }

    #[test]
    fn underflow_flushes_to_signed_zero() {
        let half_min_sub = 2f64.powi(-25);
        assert_eq!(fp16_encode(half_min_sub).0, 0); // tie, rounds to even (zero)
        assert_eq!(fp16_encode(half_min_sub * 1.0001).0, 1); // above tie: min subnormal
        assert_eq!(fp16_encode(-1e-300).0, 0x8000);
    }

    #[test]
    fn nan_encodes_to_canonical_quiet_nan() {
        let b = fp16_encode(f64::NAN);
        assert!(b.is_nan());
        assert!(fp16_decode(b).is_nan());
    }

    #[test]
    fn round_to_nearest_even_on_mantissa_ties() {
        // 1 + 2^-11 sits exactly between 1.0 and the next half value; even wins.
        assert_eq!(fp16_round_trip(1.0 + 2f64.powi(-11)), 1.0);
        // 1 + 3*2^-11 ties upward to the even mantissa 2.
        assert_eq!(
            fp16_round_trip(1.0 + 3.0 * 2f64.powi(-11)),
            1.0 + 2.0 * 2f64.powi(-10)
        );
    }

    #[test]
    fn encode_decode_identity_on_all_finite_patterns() {
        for raw in 0..=u16::MAX {
            let b = Fp16Bits(raw);
            if !b.is_finite() {
                continue;
            }
            let back = fp16_encode(fp16_decode(b));
            assert_eq!(back.0, raw, "pattern {raw:#06x}");
        }
    }

    #[test]
    fn positive_pattern_order_matches_numeric_order() {
        let mut prev = fp16_decode(Fp16Bits(0));
        for raw in 1..0x7C00u16 {
            let v = fp16_decode(Fp16Bits(raw));
            assert!(v > prev, "pattern {raw:#06x} broke monotonicity");
            prev = v;
        }
    }
}
