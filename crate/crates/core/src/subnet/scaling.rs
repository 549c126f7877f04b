use serde::{Deserialize, Serialize};

use super::activation::sigmoid;
use super::interval::Interval;
use crate::error::{Error, Result};
use crate::numerics::Scalar;

/// Elementwise scaling nonlinearity `g` of an affine coupling; never zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalingFn {
    Sigmoid,
    Exp,
    /// `lo + (hi - lo)·sigmoid(s)`, with `0 < lo < hi`.
    SigmoidRange { lo: f64, hi: f64 },
    /// `g ≡ c` regardless of `s`, `c ≠ 0`.
    Constant { value: f64 },
}

/// Suprema over an `s`-interval used by the affine bi-Lipschitz bound:
/// `|g|`, `|g'|`, `|1/g|` and `|(1/g)'|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingConstants {
    pub c_g: f64,
    pub c_g_prime: f64,
    pub c_inv_g: f64,
    pub c_inv_g_prime: f64,
}

impl ScalingFn {
    pub fn sigmoid_range(lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigmoid_range needs 0 < lo < hi, got ({lo}, {hi})")));
        }
        Ok(ScalingFn::SigmoidRange { lo, hi })
    }

    pub fn constant(value: f64) -> Result<Self> {
        if value == 0.0 || !value.is_finite() {
            return Err(Error::InvalidConfig(format!("constant scaling must be finite and nonzero, got {value}")));
        }
        Ok(ScalingFn::Constant { value })
    }

    #[inline]
    pub fn apply<T: Scalar>(self, s: T) -> T {
        match self {
            ScalingFn::Sigmoid => sigmoid(s),
            ScalingFn::Exp => s.exp(),
            ScalingFn::SigmoidRange { lo, hi } => T::lit(lo) + T::lit(hi - lo) * sigmoid(s),
            ScalingFn::Constant { value } => T::lit(value),
        }
    }

    #[inline]
    pub fn derivative<T: Scalar>(self, s: T) -> T {
        match self {
            ScalingFn::Sigmoid => {
                let g = sigmoid(s);
                g * (T::one() - g)
            }
            ScalingFn::Exp => s.exp(),
            ScalingFn::SigmoidRange { lo, hi } => {
                let g = sigmoid(s);
                T::lit(hi - lo) * g * (T::one() - g)
            }
            ScalingFn::Constant { .. } => T::zero(),
        }
    }

    /// `log |g(s)|`, evaluated without forming `g` where that would underflow.
    #[inline]
    pub fn log_abs<T: Scalar>(self, s: T) -> T {
        match self {
            ScalingFn::Exp => s,
            // log σ(s) = -softplus(-s)
            ScalingFn::Sigmoid => {
                let m = -s;
                if m > T::zero() {
                    -(m + (-m).exp().ln_1p())
                } else {
                    -(m.exp().ln_1p())
                }
            }
            _ => self.apply(s).abs().ln(),
        }
    }

    /// Derivative of [`ScalingFn::log_abs`] with respect to `s`.
    #[inline]
    pub fn log_abs_derivative<T: Scalar>(self, s: T) -> T {
        match self {
            ScalingFn::Exp => T::one(),
            ScalingFn::Sigmoid => T::one() - sigmoid(s),
            ScalingFn::Constant { .. } => T::zero(),
            ScalingFn::SigmoidRange { .. } => self.derivative(s) / self.apply(s),
        }
    }

    pub fn is_constant(self) -> bool {
        matches!(self, ScalingFn::Constant { .. })
    }

    /// Image of an `s`-interval under `g`.
    pub fn image(self, s: Interval) -> Interval {
        match self {
            ScalingFn::Constant { value } => Interval::point(value),
            // monotone increasing
            _ => Interval::new(self.apply(s.lo), self.apply(s.hi)),
        }
    }

    /// Closed-form suprema over `s ∈ [lo, hi]`. `Unbounded` when a supremum is infinite,
    /// e.g. exp scaling over an unbounded range.
    pub fn constants(self, s: Interval) -> Result<ScalingConstants> {
        let peak = |lo: f64, hi: f64| {
            let z = 0.0f64.clamp(lo, hi);
            let g = sigmoid(z);
            g * (1.0 - g)
        };
        let c = match self {
            ScalingFn::Sigmoid => ScalingConstants {
                c_g: sigmoid(s.hi),
                c_g_prime: peak(s.lo, s.hi),
                c_inv_g: 1.0 / sigmoid(s.lo),
                // (1/σ)' = -e^{-s}
                c_inv_g_prime: (-s.lo).exp(),
            },
            ScalingFn::Exp => ScalingConstants {
                c_g: s.hi.exp(),
                c_g_prime: s.hi.exp(),
                c_inv_g: (-s.lo).exp(),
                c_inv_g_prime: (-s.lo).exp(),
            },
            ScalingFn::SigmoidRange { lo, hi } => {
                let w = hi - lo;
                let g_lo = lo + w * sigmoid(s.lo);
                ScalingConstants {
                    c_g: lo + w * sigmoid(s.hi),
                    c_g_prime: w * peak(s.lo, s.hi),
                    c_inv_g: 1.0 / g_lo,
                    c_inv_g_prime: w * peak(s.lo, s.hi) / (g_lo * g_lo),
                }
            }
            ScalingFn::Constant { value } => ScalingConstants {
                c_g: value.abs(),
                c_g_prime: 0.0,
                c_inv_g: 1.0 / value.abs(),
                c_inv_g_prime: 0.0,
            },
        };
        let all = [c.c_g, c.c_g_prime, c.c_inv_g, c.c_inv_g_prime];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Unbounded(format!(
                "{} scaling has no finite bound over s ∈ [{}, {}]",
                self.name(),
                s.lo,
                s.hi
            )));
        }
        Ok(c)
    }

    pub fn name(self) -> &'static str {
        match self {
            ScalingFn::Sigmoid => "sigmoid",
            ScalingFn::Exp => "exp",
            ScalingFn::SigmoidRange { .. } => "sigmoid_range",
            ScalingFn::Constant { .. } => "constant",
        }
    }
}
