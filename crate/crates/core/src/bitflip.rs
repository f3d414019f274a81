//! Bit-exact manipulation of IEEE-754 binary32 parameters.
//!
//! Bit indices follow a fixed public convention: bit 31 is the sign,
//! bits 30..=23 are the exponent from most to least significant, and
//! bits 22..=0 are the fraction from most to least significant. Bit 31
//! is always the most significant bit of the 32-bit word, independent of
//! host or on-disk byte order.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SIGN_BIT: u32 = 31;
pub const EXPONENT_MSB: u32 = 30;
pub const EXPONENT_LSB: u32 = 23;
pub const FRACTION_MSB: u32 = 22;

const EXPONENT_MASK: u32 = 0x7f80_0000;
const FRACTION_MASK: u32 = 0x007f_ffff;

/// Which of a layer's two parameter vectors an address points into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Weight,
    Bias,
}

impl fmt::Display for ParamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParamKind::Weight => "weight",
            ParamKind::Bias => "bias",
        })
    }
}

impl FromStr for ParamKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weight" | "w" => Ok(ParamKind::Weight),
            "bias" | "b" => Ok(ParamKind::Bias),
            other => Err(Error::Scope(format!("unknown parameter kind `{other}`"))),
        }
    }
}

/// One stored bit of one parameter: the unit of fault injection.
///
/// The derived ordering is lexicographic over
/// `(layer, kind, element, bit)` with weights before biases; scans and
/// tie-breaks use it as the canonical address order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BitAddress {
    pub layer: usize,
    pub kind: ParamKind,
    pub element: usize,
    pub bit: u8,
}

impl BitAddress {
    pub fn new(layer: usize, kind: ParamKind, element: usize, bit: u32) -> Result<Self> {
        if bit > 31 {
            return Err(Error::BitIndex(bit));
        }
        Ok(BitAddress {
            layer,
            kind,
            element,
            bit: bit as u8,
        })
    }

    pub fn class(&self) -> BitClass {
        BitClass::of(self.bit as u32)
    }
}

impl fmt::Display for BitAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "layer {} {}[{}] bit {}",
            self.layer, self.kind, self.element, self.bit
        )
    }
}

/// Role of a bit inside a binary32 word.
///
/// Exponent and fraction positions count from the field's least
/// significant bit, so `Exponent(7)` is the highest exponent bit ("Ex1")
/// and `Fraction(22)` the highest fraction bit ("Frac1").
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BitClass {
    Sign,
    Exponent(u8),
    Fraction(u8),
}

impl BitClass {
    fn of(bit: u32) -> BitClass {
        match bit {
            31 => BitClass::Sign,
            23..=30 => BitClass::Exponent((bit - EXPONENT_LSB) as u8),
            _ => BitClass::Fraction(bit as u8),
        }
    }

    pub fn bit_index(&self) -> u32 {
        match *self {
            BitClass::Sign => SIGN_BIT,
            BitClass::Exponent(k) => EXPONENT_LSB + k as u32,
            BitClass::Fraction(k) => k as u32,
        }
    }

    /// Coarse family name: `sign`, `exponent` or `fraction`.
    pub fn family(&self) -> &'static str {
        match self {
            BitClass::Sign => "sign",
            BitClass::Exponent(_) => "exponent",
            BitClass::Fraction(_) => "fraction",
        }
    }
}

impl fmt::Display for BitClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BitClass::Sign => f.write_str("sign"),
            BitClass::Exponent(k) => write!(f, "exponent:{k}"),
            BitClass::Fraction(k) => write!(f, "fraction:{k}"),
        }
    }
}

impl FromStr for BitClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Scope(format!("unknown bit class `{s}`"));
        match s {
            "sign" => return Ok(BitClass::Sign),
            "ex1" => return Ok(BitClass::Exponent(7)),
            "frac1" => return Ok(BitClass::Fraction(22)),
            _ => {}
        }
        let (family, pos) = s.split_once(':').ok_or_else(bad)?;
        let pos: u8 = pos.parse().map_err(|_| bad())?;
        match family {
            "exponent" if pos <= 7 => Ok(BitClass::Exponent(pos)),
            "fraction" if pos <= 22 => Ok(BitClass::Fraction(pos)),
            _ => Err(bad()),
        }
    }
}

/// Inverts bit `bit` of a 32-bit word.
pub fn flip_bit(bits: u32, bit: u32) -> Result<u32> {
    if bit > 31 {
        return Err(Error::BitIndex(bit));
    }
    Ok(bits ^ (1u32 << bit))
}

/// [`flip_bit`] on the bit pattern of an `f32`.
pub fn flip_f32(value: f32, bit: u32) -> Result<f32> {
    flip_bit(value.to_bits(), bit).map(f32::from_bits)
}

pub fn classify_bit(bit: u32) -> Result<BitClass> {
    if bit > 31 {
        return Err(Error::BitIndex(bit));
    }
    Ok(BitClass::of(bit))
}

/// Outcome of `|x' - x| / |x|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RelativeError {
    Finite(f64),
    /// The perturbed value is infinite while the original was finite and nonzero.
    Infinite,
    /// The original is zero or non-finite, or either value is NaN.
    Undefined,
}

/// Relative error `|x' - x| / |x|` between an original parameter and its
/// perturbed value, evaluated in `f64` (so rounded for extreme exponent
/// flips; use [`DeltaBound::admits`] for exact interval membership).
pub fn relative_error(original: f32, perturbed: f32) -> RelativeError {
    if original.is_nan() || perturbed.is_nan() || original == 0.0 || original.is_infinite() {
        return RelativeError::Undefined;
    }
    if perturbed.is_infinite() {
        return RelativeError::Infinite;
    }
    let (diff, _) = exact_abs_diff(original, perturbed);
    RelativeError::Finite(diff / (original as f64).abs())
}

/// Analytic range of the relative error a single flip can impose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeltaBound {
    /// Exactly this relative error: 2 for any sign flip, and 1 for an
    /// exponent flip that clears the whole value to zero.
    Exactly(f64),
    /// An interval, optionally also admitting a non-finite result (an
    /// exponent flip that saturates the exponent field to Inf or NaN).
    Interval {
        lo: f64,
        lo_closed: bool,
        hi: f64,
        hi_closed: bool,
        overflow: bool,
    },
    /// Zero, subnormal, infinite or NaN originals: no analytic prediction.
    Unsupported,
}

impl DeltaBound {
    /// Whether a relative-error value lies inside the bound.
    pub fn contains(&self, err: RelativeError) -> bool {
        match (*self, err) {
            (DeltaBound::Exactly(v), RelativeError::Finite(x)) => v == x,
            (
                DeltaBound::Interval {
                    lo,
                    lo_closed,
                    hi,
                    hi_closed,
                    ..
                },
                RelativeError::Finite(x),
            ) => {
                let above = if lo_closed { x >= lo } else { x > lo };
                let below = if hi_closed { x <= hi } else { x < hi };
                above && below
            }
            (DeltaBound::Interval { overflow, .. }, RelativeError::Infinite | RelativeError::Undefined) => {
                overflow
            }
            _ => false,
        }
    }

    /// Exact membership test for the relative error between `original`
    /// and `perturbed`, free of the rounding in [`relative_error`].
    ///
    /// `|x' - x|` is carried as an unevaluated `f64` sum (TwoSum) and
    /// compared against `c * |x|`, which is exact for every bound used here.
    pub fn admits(&self, original: f32, perturbed: f32) -> bool {
        let finite = !perturbed.is_nan() && perturbed.is_finite();
        match *self {
            DeltaBound::Unsupported => false,
            DeltaBound::Exactly(c) => finite && cmp_rel(original, perturbed, c) == Ordering::Equal,
            DeltaBound::Interval {
                lo,
                lo_closed,
                hi,
                hi_closed,
                overflow,
            } => {
                if !finite {
                    return overflow;
                }
                let lo_ord = cmp_rel(original, perturbed, lo);
                let hi_ord = cmp_rel(original, perturbed, hi);
                let above = lo_ord == Ordering::Greater || (lo_closed && lo_ord == Ordering::Equal);
                let below = hi_ord == Ordering::Less || (hi_closed && hi_ord == Ordering::Equal);
                above && below
            }
        }
    }
}

/// Predicted relative-error range for flipping `bit` of a finite, normal,
/// nonzero `value`.
///
/// | flip | range |
/// |---|---|
/// | sign | exactly 2 |
/// | exponent 1 -> 0 | `[0.5, 1)`, or exactly 1 when the result is zero |
/// | exponent 0 -> 1 | `[1, 2^128]`, or Inf/NaN when the field saturates |
/// | fraction | `(0, 0.5]` |
///
/// Setting exponent bit `k` multiplies `|x|` by `2^(2^k)`, so the smallest
/// 0 -> 1 error is exactly 1 (bit 23 doubles the value).
pub fn delta_class_bound(value: f32, bit: u32) -> Result<DeltaBound> {
    let class = classify_bit(bit)?;
    if !value.is_normal() {
        return Ok(DeltaBound::Unsupported);
    }
    let bits = value.to_bits();
    let flipped = bits ^ (1 << bit);
    Ok(match class {
        BitClass::Sign => DeltaBound::Exactly(2.0),
        BitClass::Exponent(_) if bits & (1 << bit) != 0 => {
            if flipped & !(1 << SIGN_BIT) == 0 {
                DeltaBound::Exactly(1.0)
            } else {
                DeltaBound::Interval {
                    lo: 0.5,
                    lo_closed: true,
                    hi: 1.0,
                    hi_closed: false,
                    overflow: false,
                }
            }
        }
        BitClass::Exponent(_) => DeltaBound::Interval {
            lo: 1.0,
            lo_closed: true,
            hi: 2f64.powi(128),
            hi_closed: true,
            overflow: true,
        },
        BitClass::Fraction(_) => DeltaBound::Interval {
            lo: 0.0,
            lo_closed: false,
            hi: 0.5,
            hi_closed: true,
            overflow: false,
        },
    })
}

/// `|perturbed - original|` as an unevaluated sum `hi + lo` with `hi >= 0`.
fn exact_abs_diff(original: f32, perturbed: f32) -> (f64, f64) {
    let a = perturbed as f64;
    let b = -(original as f64);
    let s = a + b;
    let bp = s - a;
    let ap = s - bp;
    let e = (a - ap) + (b - bp);
    if s < 0.0 || (s == 0.0 && e < 0.0) {
        (-s, -e)
    } else {
        (s, e)
    }
}

/// Orders the exact relative error of the pair against `c`.
fn cmp_rel(original: f32, perturbed: f32, c: f64) -> Ordering {
    let (hi, lo) = exact_abs_diff(original, perturbed);
    let target = c * (original as f64).abs();
    match hi.partial_cmp(&target) {
        Some(Ordering::Equal) | None => lo.partial_cmp(&0.0).unwrap_or(Ordering::Equal),
        Some(ord) => ord,
    }
}

/// Splits a word into its sign, biased exponent and fraction fields.
pub fn fields(bits: u32) -> (u32, u32, u32) {
    (bits >> 31, (bits & EXPONENT_MASK) >> 23, bits & FRACTION_MASK)
}
