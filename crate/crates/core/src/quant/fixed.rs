//! Quantization parameters and fixed-point requantization.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

thread_local! {
    static FLOAT_OPS: Cell<u64> = const { Cell::new(0) };
}

/// Counts float conversions at the integer path's boundary (input
/// quantization, output dequantization). The integer core never bumps it.
pub fn float_ops() -> u64 {
    FLOAT_OPS.with(|c| c.get())
}

pub fn reset_float_ops() {
    FLOAT_OPS.with(|c| c.set(0));
}

pub(crate) fn count_float_ops(n: usize) {
    FLOAT_OPS.with(|c| c.set(c.get() + n as u64));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Symmetric,
    Affine,
}

/// `real = scale * (q - zero_point)`, `q` in `[-128, 127]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scale: f64,
    pub zero_point: i32,
    pub scheme: Scheme,
}

impl QuantParams {
    /// Symmetric weight quantization: `scale = max|w| / 127`, zero point 0.
    /// An all-zero tensor falls back to scale 1.
    pub fn symmetric(max_abs: f64) -> Self {
        let scale = if max_abs > 0.0 { max_abs / 127.0 } else { 1.0 };
        QuantParams {
            scale,
            zero_point: 0,
            scheme: Scheme::Symmetric,
        }
    }

    /// Affine activation quantization over `[min, max]` widened to include
    /// zero, so real zero (padding, ReLU floor) is exactly representable.
    pub fn affine(min: f64, max: f64) -> Self {
        let (lo, hi) = (min.min(0.0), max.max(0.0));
        let range = hi - lo;
        let scale = if range > 0.0 { range / 255.0 } else { 1.0 };
        let zp = (-128.0 - lo / scale).round().clamp(-128.0, 127.0) as i32;
        QuantParams {
            scale,
            zero_point: zp,
            scheme: Scheme::Affine,
        }
    }

    pub fn quantize(&self, x: f64) -> i8 {
        let lo = if self.scheme == Scheme::Symmetric {
            -127.0
        } else {
            -128.0
        };
        ((x / self.scale).round() + self.zero_point as f64).clamp(lo, 127.0) as i8
    }

    pub fn dequantize(&self, q: i8) -> f64 {
        self.scale * (q as i32 - self.zero_point) as f64
    }

    /// Real interval representable without clamping.
    pub fn range(&self) -> (f64, f64) {
        let lo = if self.scheme == Scheme::Symmetric {
            -127
        } else {
            -128
        };
        (self.dequantize(lo), self.dequantize(127))
    }
}

/// Real multiplier `M ≈ mantissa * 2^-shift`, mantissa in `[2^30, 2^31)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedMultiplier {
    pub mantissa: i32,
    pub shift: u32,
}

impl FixedMultiplier {
    pub fn from_real(m: f64) -> Result<Self> {
        if !(m.is_finite() && m > 0.0) {
            return Err(Error::Calibration(format!(
                "requantization multiplier {m} not positive"
            )));
        }
        let mut e = m.log2().floor() as i32 + 1;
        let mut frac = m / 2f64.powi(e);
        // guard log2 rounding at exact powers of two
        if frac >= 1.0 {
            frac /= 2.0;
            e += 1;
        } else if frac < 0.5 {
            frac *= 2.0;
            e -= 1;
        }
        let mut mantissa = (frac * 2f64.powi(31)).round() as i64;
        if mantissa == 1i64 << 31 {
            mantissa /= 2;
            e += 1;
        }
        let shift = 31 - e;
        if !(0..=62).contains(&shift) {
            return Err(Error::Calibration(format!(
                "requantization multiplier {m} outside the fixed-point range"
            )));
        }
        Ok(FixedMultiplier {
            mantissa: mantissa as i32,
            shift: shift as u32,
        })
    }

    pub fn to_real(self) -> f64 {
        self.mantissa as f64 / 2f64.powi(self.shift as i32)
    }

    /// `round_half_away_from_zero(acc * M)` in integer arithmetic.
    #[inline]
    pub fn apply(self, acc: i32) -> i64 {
        let p = acc as i64 * self.mantissa as i64;
        if self.shift == 0 {
            return p;
        }
        let half = 1i64 << (self.shift - 1);
        if p >= 0 {
            (p + half) >> self.shift
        } else {
            -((-p + half) >> self.shift)
        }
    }
}

/// Integer mean with round-half-away-from-zero.
#[inline]
pub fn rounded_div(sum: i32, n: i32) -> i32 {
    debug_assert!(n > 0);
    if sum >= 0 {
        (2 * sum + n) / (2 * n)
    } else {
        -((-2 * sum + n) / (2 * n))
    }
}

#[inline]
pub fn saturate_i8(v: i64) -> i8 {
    v.clamp(-128, 127) as i8
}
