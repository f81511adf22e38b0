//! Bit-exact codecs for the element and scale formats.
//!
//! * FP4 E2M1: 1 sign, 2 exponent (bias 1), 1 mantissa bit. Magnitudes
//!   `{0, 0.5, 1, 1.5, 2, 3, 4, 6}`; no NaN or infinity, conversions saturate at ±6.
//! * FP8 E4M3: 1 sign, 4 exponent (bias 7), 3 mantissa bits. Max finite 448,
//!   `S.1111.111` is NaN, no infinities. Conversions saturate at ±448.
//! * FP8 E8M0: unsigned biased exponent (bias 127), value `2^(bits-127)`, `0xFF` is NaN.
//!
//! All arithmetic is done in `f64`; every representable value of these formats is a
//! dyadic rational, so decode is exact.

use std::fmt;

use crate::error::{Error, Result};

/// Decoded FP4 magnitudes indexed by the low three code bits.
pub const FP4_MAGNITUDES: [f64; 8] = [0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0];

/// Largest finite FP4 magnitude.
pub const FP4_MAX: f64 = 6.0;

/// Largest finite E4M3 magnitude.
pub const E4M3_MAX: f64 = 448.0;

/// Smallest positive (subnormal) E4M3 magnitude, `2^-9`.
pub const E4M3_MIN_SUBNORMAL: f64 = 1.0 / 512.0;

const E4M3_MIN_NORMAL: f64 = 1.0 / 64.0;

/// A 4-bit E2M1 code point stored in the low nibble.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Fp4Code(u8);

impl Fp4Code {
    pub const ZERO: Fp4Code = Fp4Code(0);

    /// Builds a code from its low nibble; the high nibble is ignored.
    pub const fn from_bits(bits: u8) -> Self {
        Fp4Code(bits & 0x0F)
    }

    pub const fn bits(self) -> u8 {
        self.0
    }

    pub const fn is_negative(self) -> bool {
        self.0 & 0x08 != 0
    }

    pub fn to_f64(self) -> f64 {
        decode_fp4(self)
    }
}

impl fmt::Debug for Fp4Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fp4Code({:#06b} = {})", self.0, decode_fp4(*self))
    }
}

/// An 8-bit E4M3 code point.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Fp8E4M3(u8);

impl Fp8E4M3 {
    /// Smallest positive subnormal, `2^-9`.
    pub const MIN_POSITIVE: Fp8E4M3 = Fp8E4M3(0x01);
    pub const MAX: Fp8E4M3 = Fp8E4M3(0x7E);
    pub const NAN: Fp8E4M3 = Fp8E4M3(0x7F);

    pub const fn from_bits(bits: u8) -> Self {
        Fp8E4M3(bits)
    }

    pub const fn bits(self) -> u8 {
        self.0
    }

    pub const fn is_nan(self) -> bool {
        self.0 & 0x7F == 0x7F
    }

    pub fn to_f64(self) -> f64 {
        decode_fp8_e4m3(self)
    }
}

impl fmt::Debug for Fp8E4M3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fp8E4M3({:#04x} = {})", self.0, decode_fp8_e4m3(*self))
    }
}

/// An 8-bit E8M0 power-of-two scale code.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Fp8E8M0(u8);

impl Fp8E8M0 {
    pub const ONE: Fp8E8M0 = Fp8E8M0(127);
    pub const MIN_POSITIVE: Fp8E8M0 = Fp8E8M0(0);
    pub const NAN: Fp8E8M0 = Fp8E8M0(0xFF);

    pub const fn from_bits(bits: u8) -> Self {
        Fp8E8M0(bits)
    }

    pub const fn bits(self) -> u8 {
        self.0
    }

    pub const fn is_nan(self) -> bool {
        self.0 == 0xFF
    }

    pub fn to_f64(self) -> f64 {
        decode_fp8_e8m0(self)
    }
}

impl fmt::Debug for Fp8E8M0 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fp8E8M0({:#04x} = {})", self.0, decode_fp8_e8m0(*self))
    }
}

pub fn decode_fp4(code: Fp4Code) -> f64 {
    let mag = FP4_MAGNITUDES[(code.0 & 0x07) as usize];
    if code.is_negative() {
        -mag
    } else {
        mag
    }
}

/// Index into [`FP4_MAGNITUDES`] nearest to `mag`, ties to the even mantissa bit.
#[inline]
fn fp4_rne_index(mag: f64) -> u8 {
    // Midpoints between neighbours; `<=` where the lower neighbour has the
    // even mantissa (codes 0, 2, 4, 6), `<` where the upper one does.
    if mag <= 0.25 {
        0
    } else if mag < 0.75 {
        1
    } else if mag <= 1.25 {
        2
    } else if mag < 1.75 {
        3
    } else if mag <= 2.5 {
        4
    } else if mag < 3.5 {
        5
    } else if mag <= 5.0 {
        6
    } else {
        7
    }
}

/// Round-to-nearest-even conversion into E2M1, saturating at ±6.
///
/// The sign of the input is kept, so `-0.1` encodes as negative zero.
#[inline]
pub fn encode_fp4_rne(x: f64) -> Result<Fp4Code> {
    if x.is_nan() {
        return Err(Error::InvalidInput("NaN cannot be encoded as FP4".into()));
    }
    let sign = if x.is_sign_negative() { 0x08 } else { 0 };
    Ok(Fp4Code(sign | fp4_rne_index(x.abs())))
}

/// Stochastic conversion into E2M1.
///
/// With `lo < x < hi` the neighbouring representable values, returns `hi` iff
/// `u < (x - lo) / (hi - lo)`. Representable inputs map to themselves and inputs
/// beyond ±6 saturate deterministically.
#[inline]
pub fn encode_fp4_stochastic(x: f64, u: f64) -> Result<Fp4Code> {
    if x.is_nan() {
        return Err(Error::InvalidInput("NaN cannot be encoded as FP4".into()));
    }
    let sign = if x.is_sign_negative() { 0x08u8 } else { 0 };
    let mag = x.abs();
    if mag >= FP4_MAX {
        return Ok(Fp4Code(sign | 7));
    }
    // Largest index whose magnitude is <= mag.
    let mut lo = 0usize;
    while lo < 7 && FP4_MAGNITUDES[lo + 1] <= mag {
        lo += 1;
    }
    let lo_mag = FP4_MAGNITUDES[lo];
    if lo_mag == mag {
        return Ok(Fp4Code(sign | lo as u8));
    }
    let hi_mag = FP4_MAGNITUDES[lo + 1];
    // Work on signed values so that "upper" means numerically larger.
    let idx = if sign == 0 {
        let p = (mag - lo_mag) / (hi_mag - lo_mag);
        if u < p {
            lo + 1
        } else {
            lo
        }
    } else {
        // x in (-hi, -lo): lower neighbour is -hi, upper is -lo.
        let p = (x + hi_mag) / (hi_mag - lo_mag);
        if u < p {
            lo
        } else {
            lo + 1
        }
    };
    Ok(Fp4Code(sign | idx as u8))
}

/// Round-to-nearest-even conversion into E4M3, saturating at ±448. NaN maps to the NaN code.
#[inline]
pub fn encode_fp8_e4m3(x: f64) -> Fp8E4M3 {
    if x.is_nan() {
        return Fp8E4M3::NAN;
    }
    let sign = if x.is_sign_negative() { 0x80u8 } else { 0 };
    let mag = x.abs();
    if mag >= E4M3_MAX {
        return Fp8E4M3(sign | 0x7E);
    }
    let bits = if mag < E4M3_MIN_NORMAL {
        // Subnormal range, step 2^-9. A result of 8 is the smallest normal.
        (mag * 512.0).round_ties_even() as u32
    } else {
        let exp = ((mag.to_bits() >> 52) & 0x7FF) as i32 - 1023;
        let frac = mag / f64::powi(2.0, exp) - 1.0;
        let mant = (frac * 8.0).round_ties_even() as u32;
        // A mantissa of 8 carries into the exponent field.
        (((exp + 7) as u32) << 3) + mant
    };
    Fp8E4M3(sign | bits.min(0x7E) as u8)
}

pub fn decode_fp8_e4m3(code: Fp8E4M3) -> f64 {
    if code.is_nan() {
        return f64::NAN;
    }
    let exp = ((code.0 >> 3) & 0x0F) as i32;
    let mant = (code.0 & 0x07) as f64;
    let mag = if exp == 0 {
        mant * E4M3_MIN_SUBNORMAL
    } else {
        (1.0 + mant / 8.0) * f64::powi(2.0, exp - 7)
    };
    if code.0 & 0x80 != 0 {
        -mag
    } else {
        mag
    }
}

/// `2^floor(log2 x)` clamped to `[2^-127, 2^127]`.
pub fn encode_fp8_e8m0(x: f64) -> Result<Fp8E8M0> {
    if x.is_nan() || x <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "E8M0 scale must be positive, got {x}"
        )));
    }
    if x < f64::powi(2.0, -127) {
        return Ok(Fp8E8M0(0));
    }
    // x >= 2^-127 is a normal f64, so the exponent field is floor(log2 x).
    let exp = if x.is_infinite() {
        127
    } else {
        ((x.to_bits() >> 52) & 0x7FF) as i32 - 1023
    };
    Ok(Fp8E8M0((exp.min(127) + 127) as u8))
}

pub fn decode_fp8_e8m0(code: Fp8E8M0) -> f64 {
    if code.is_nan() {
        return f64::NAN;
    }
    f64::powi(2.0, code.0 as i32 - 127)
}
