use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};

/// Floating-point precision of a computation or of a simulated pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    /// Unit roundoff `2^-p` for round-to-nearest.
    pub fn unit_roundoff(self) -> f64 {
        match self {
            Precision::F32 => f64::from(f32::EPSILON) / 2.0,
            Precision::F64 => f64::EPSILON / 2.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "f32" | "binary32" | "single" => Ok(Precision::F32),
            "f64" | "binary64" | "double" => Ok(Precision::F64),
            other => Err(format!("unknown precision `{other}` (expected f32 or f64)")),
        }
    }
}

impl Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Real scalar the whole library is generic over. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Native precision of the type.
    const PRECISION: Precision;

    /// Converts an `f64` literal (rounding to nearest).
    fn lit(x: f64) -> Self;

    fn to_f64_lossless(self) -> f64;

    /// Rounds to the nearest value representable in `p` (round-to-nearest-even).
    /// A no-op when `p` is at least as wide as `Self`.
    fn round_to(self, p: Precision) -> Self;
}

impl Scalar for f64 {
    const PRECISION: Precision = Precision::F64;

    #[inline]
    fn lit(x: f64) -> Self {
        x
    }

    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self
    }

    #[inline]
    fn round_to(self, p: Precision) -> Self {
        match p {
            Precision::F32 => f64::from(self as f32),
            Precision::F64 => self,
        }
    }
}

impl Scalar for f32 {
    const PRECISION: Precision = Precision::F32;

    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn to_f64_lossless(self) -> f64 {
        f64::from(self)
    }

    #[inline]
    fn round_to(self, _p: Precision) -> Self {
        self
    }
}

/// Rounds every entry of `x` to `target` precision.
pub fn round_to_precision<T: Scalar>(x: &[T], target: Precision) -> Vec<T> {
    x.iter().map(|v| v.round_to(target)).collect()
}

/// `true` if any entry is NaN or infinite.
pub fn has_nonfinite<T: Scalar>(x: &[T]) -> bool {
    x.iter().any(|v| !v.is_finite())
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn norm2<T: Scalar>(a: &[T]) -> T {
    // scaled to avoid overflow of the squares
    let scale = a.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    if scale == T::zero() || !scale.is_finite() {
        return if scale.is_nan() { T::nan() } else { scale };
    }
    let s: T = a.iter().map(|&v| (v / scale) * (v / scale)).sum();
    scale * s.sqrt()
}

pub fn norm_inf<T: Scalar>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |m, v| if v.is_nan() { T::nan() } else { m.max(v.abs()) })
}

pub fn sub<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x - y).collect()
}

pub fn add<T: Scalar>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| x + y).collect()
}

pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

pub fn cast_vec<S: Scalar, T: Scalar>(x: &[S]) -> Vec<T> {
    x.iter().map(|v| T::lit(v.to_f64_lossless())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary32_rounding_matches_ieee() {
        let r = 0.123_456_789_f64.round_to(Precision::F32);
        assert_eq!(r, f64::from(0.123_456_79_f32));
        assert_eq!(r.to_bits(), 0x3FBF_9ADD_4000_0000);
        assert_eq!(0.5f64.round_to(Precision::F32), 0.5);
        assert_eq!((1.0 + 2f64.powi(-30)).round_to(Precision::F32), 1.0);
        // ties go to even: 1 + 2^-24 sits halfway between 1 and 1 + 2^-23
        assert_eq!((1.0 + 2f64.powi(-24)).round_to(Precision::F32), 1.0);
        assert_eq!(
            (1.0 + 3.0 * 2f64.powi(-24)).round_to(Precision::F32),
            1.0 + 2f64.powi(-22)
        );
        assert_eq!(1.5f64.round_to(Precision::F64), 1.5);
    }

    #[test]
    fn overflow_rounds_to_infinity() {
        let v = round_to_precision(&[1e39f64, -1e39], Precision::F32);
        assert!(v[0].is_infinite() && v[1].is_infinite());
        assert!(has_nonfinite(&v));
        assert!(!has_nonfinite(&[1.0f64, 2.0]));
    }

    #[test]
    fn norm2_handles_extremes() {
        assert_eq!(norm2(&[3.0f64, 4.0]), 5.0);
        assert_eq!(norm2(&[0.0f64; 3]), 0.0);
        assert!((norm2(&[1e200f64, 1e200]) / 1e200 - 2f64.sqrt()).abs() < 1e-15);
        assert!(norm2(&[f64::NAN, 1.0]).is_nan());
        assert!(norm2(&[f64::INFINITY, 1.0]).is_infinite());
    }

    #[test]
    fn precision_parses() {
        assert_eq!("F32".parse::<Precision>().unwrap(), Precision::F32);
        assert!("f16".parse::<Precision>().is_err());
        assert!(Precision::F32.unit_roundoff() > Precision::F64.unit_roundoff());
    }
}
