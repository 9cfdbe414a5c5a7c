//! Software emulation of IEEE 754 binary16.
//!
//! All arithmetic in the rest of the crate is carried out on host floats;
//! half precision enters only through [`encode`]/[`decode`] and the
//! round-trip [`quantize`] (round-to-nearest-even, the hardware default).
//! [`quantize_f32`] is a branch-light equivalent used by the tensor kernels;
//! it is checked bit-for-bit against the codec in the test suite.

use crate::error::{CoreError, Result};

/// Smallest positive binary16 magnitude (the minimum subnormal), 2^-24.
pub const U_MIN: f64 = 5.960_464_477_539_063e-8;
/// Largest finite binary16 magnitude.
pub const U_MAX: f64 = 65504.0;
/// Smallest positive normal binary16 value, 2^-14.
pub const MIN_NORMAL: f64 = 6.103_515_625e-5;

const MIN_NORMAL_F32: f32 = 6.103_515_625e-5;
/// Midpoint between 65504 and the first value past the binary16 range;
/// magnitudes at or above it round to infinity under RNE.
const OVERFLOW_THRESHOLD: f64 = 65520.0;

/// An IEEE 754 binary16 value carried as its raw bit pattern
/// (1 sign, 5 exponent, 10 significand bits).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Half(u16);

impl Half {
    pub const POS_ZERO: Half = Half(0x0000);
    pub const NEG_ZERO: Half = Half(0x8000);
    pub const INFINITY: Half = Half(0x7C00);
    pub const NEG_INFINITY: Half = Half(0xFC00);
    /// Canonical quiet NaN.
    pub const NAN: Half = Half(0x7E00);
    /// Largest finite value, 65504.
    pub const MAX: Half = Half(0x7BFF);
    /// Smallest positive subnormal, 2^-24.
    pub const MIN_SUBNORMAL: Half = Half(0x0001);

    #[inline]
    pub const fn from_bits(bits: u16) -> Half {
        Half(bits)
    }

    #[inline]
    pub const fn to_bits(self) -> u16 {
        self.0
    }

    #[inline]
    pub fn is_nan(self) -> bool {
        (self.0 & 0x7C00) == 0x7C00 && (self.0 & 0x03FF) != 0
    }

    #[inline]
    pub fn is_infinite(self) -> bool {
        (self.0 & 0x7FFF) == 0x7C00
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        (self.0 & 0x7C00) != 0x7C00
    }

    #[inline]
    pub fn is_subnormal(self) -> bool {
        (self.0 & 0x7C00) == 0 && (self.0 & 0x03FF) != 0
    }

    /// Exact real value of the bit pattern.
    #[inline]
    pub fn to_f64(self) -> f64 {
        decode(self)
    }
}

/// Converts a host double to the nearest binary16 value.
///
/// Rounding is round-to-nearest, ties to even significand (the only mode
/// this artifact supports). Magnitudes at or above 65520 become signed
/// infinity; magnitudes at or below 2^-25 become signed zero; any NaN
/// input yields the canonical quiet NaN.
pub fn encode(x: f64) -> Half {
    let bits = x.to_bits();
    let sign = ((bits >> 48) & 0x8000) as u16;
    let abs = bits & 0x7FFF_FFFF_FFFF_FFFF;

    if abs > 0x7FF0_0000_0000_0000 {
        return Half::NAN;
    }
    if f64::from_bits(abs) >= OVERFLOW_THRESHOLD {
        return Half(sign | 0x7C00);
    }
    if abs == 0 {
        return Half(sign);
    }

    let exp_field = (abs >> 52) as i64;
    if exp_field == 0 {
        // Double subnormals are below 2^-1022, far under half of U_MIN.
        return Half(sign);
    }
    let exp = exp_field - 1023;
    let mant = abs & 0x000F_FFFF_FFFF_FFFF;

    if exp >= -14 {
        // Normal half: round the 52-bit significand down to 10 bits.
        let mut q = (mant >> 42) as u16;
        let rem = mant & ((1u64 << 42) - 1);
        let half = 1u64 << 41;
        if rem > half || (rem == half && (q & 1) == 1) {
            q += 1;
        }
        let mut e16 = (exp + 15) as u16;
        if q == 1024 {
            q = 0;
            e16 += 1;
        }
        // e16 <= 30 here: anything larger was caught by the overflow test.
        Half(sign | (e16 << 10) | q)
    } else {
        // Subnormal half: fixed grid with spacing 2^-24. Express the value
        // as full * 2^(exp-52) and shift so one unit equals 2^-24.
        let full = (1u64 << 52) | mant;
        let shift = (28 - exp) as u32; // >= 43
        if shift >= 64 {
            return Half(sign);
        }
        let mut q = (full >> shift) as u16;
        let rem = full & ((1u64 << shift) - 1);
        let half = 1u64 << (shift - 1);
        if rem > half || (rem == half && (q & 1) == 1) {
            q += 1;
        }
        // q == 1024 lands exactly on the minimum normal (bit 0x0400).
        Half(sign | q)
    }
}

/// Exact real value of a binary16 bit pattern. Subnormals decode exactly;
/// infinities and NaN map to the host representations.
pub fn decode(h: Half) -> f64 {
    let bits = h.0;
    let sign = if bits & 0x8000 != 0 { -1.0 } else { 1.0 };
    let e = (bits >> 10) & 0x1F;
    let m = (bits & 0x03FF) as f64;
    match e {
        0 => sign * m * 2f64.powi(-24),
        31 => {
            if m == 0.0 {
                sign * f64::INFINITY
            } else {
                f64::NAN
            }
        }
        _ => sign * (1024.0 + m) * 2f64.powi(e as i32 - 25),
    }
}

/// The value `x` would have after a round trip through binary16 storage.
pub fn quantize(x: f64) -> f64 {
    decode(encode(x))
}

/// Fast branch-light equivalent of [`quantize`] for `f32` data.
///
/// Normal range: a Veltkamp split at 13 bits rounds to an 11-bit
/// significand under the ambient round-to-nearest-even. Subnormal range:
/// adding 0.75 = 1.5 * 2^23 * 2^-24 forces hardware rounding at the fixed
/// grid spacing 2^-24. Both reproduce the codec bit-for-bit (see tests).
#[inline(always)]
pub fn quantize_f32(x: f32) -> f32 {
    let a = x.abs();
    let sub = (a + 0.75) - 0.75;
    let c = x * 8193.0;
    let norm = c - (c - x);
    // NaN takes the `norm` path and stays NaN.
    let r = if a < MIN_NORMAL_F32 {
        f32::copysign(sub, x)
    } else {
        norm
    };
    if a >= 65520.0 {
        f32::copysign(f32::INFINITY, x)
    } else {
        r
    }
}

/// Emulated binary16 addition: `quantize(quantize(a) + quantize(b))`.
///
/// The host double sum of two binary16 values is exact, so the final
/// rounding is the single correct RNE step.
pub fn fp16_add(a: f64, b: f64) -> f64 {
    quantize(quantize(a) + quantize(b))
}

/// Emulated binary16 multiplication: `quantize(quantize(a) * quantize(b))`.
pub fn fp16_mul(a: f64, b: f64) -> f64 {
    quantize(quantize(a) * quantize(b))
}

/// Largest power of two not exceeding `x`: returns 2^floor(log2 x).
///
/// Errors on zero, negative, NaN, or infinite input.
pub fn floor_pow2(x: f64) -> Result<f64> {
    if !x.is_finite() || x <= 0.0 {
        return Err(CoreError::Domain(format!(
            "floor_pow2 requires a finite positive argument, got {x}"
        )));
    }
    let bits = x.to_bits();
    let exp = (bits >> 52) & 0x7FF;
    if exp != 0 {
        return Ok(f64::from_bits(exp << 52));
    }
    // Subnormal input: the highest set mantissa bit carries the exponent.
    let mant = bits & 0x000F_FFFF_FFFF_FFFF;
    let msb = 63 - mant.leading_zeros() as i32;
    Ok(2f64.powi(msb - 1074))
}

/// True if `x` is an exact (possibly negative) power of two.
pub fn is_pow2(x: f64) -> bool {
    x.is_finite() && x > 0.0 && floor_pow2(x).map(|p| p == x).unwrap_or(false)
}
