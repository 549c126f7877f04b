use serde::{Deserialize, Serialize};

use super::interval::Interval;
use crate::numerics::Scalar;

/// Elementwise nonlinearity of an MLP layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Elu,
    Swish,
    Tanh,
    Identity,
}

/// Location of the global minimum of `x·sigmoid(x)`.
const SWISH_ARGMIN: f64 = -1.278_464_542_761_074;

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Relu => z.max(T::zero()),
            Activation::Elu => {
                if z > T::zero() {
                    z
                } else {
                    z.exp_m1()
                }
            }
            Activation::Swish => z * sigmoid(z),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    #[inline]
    pub fn derivative<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Elu => {
                if z > T::zero() {
                    T::one()
                } else {
                    z.exp()
                }
            }
            Activation::Swish => {
                let s = sigmoid(z);
                s + z * s * (T::one() - s)
            }
            Activation::Tanh => {
                let t = z.tanh();
                T::one() - t * t
            }
            Activation::Identity => T::one(),
        }
    }

    #[inline]
    pub fn second_derivative<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Relu | Activation::Identity => T::zero(),
            Activation::Elu => {
                if z > T::zero() {
                    T::zero()
                } else {
                    z.exp()
                }
            }
            Activation::Swish => {
                let s = sigmoid(z);
                let two = T::lit(2.0);
                s * (T::one() - s) * (two + z * (T::one() - two * s))
            }
            Activation::Tanh => {
                let t = z.tanh();
                -T::lit(2.0) * t * (T::one() - t * t)
            }
        }
    }

    /// Lipschitz constant used by the bound calculators. Swish's true constant is ≈1.0998.
    pub fn lipschitz(self) -> f64 {
        match self {
            Activation::Swish => 1.1,
            _ => 1.0,
        }
    }

    /// Image of an interval.
    pub fn interval(self, x: Interval) -> Interval {
        match self {
            Activation::Swish => {
                let (a, b) = (self.apply(x.lo), self.apply(x.hi));
                let lo = if x.contains(SWISH_ARGMIN) { self.apply(SWISH_ARGMIN) } else { a.min(b) };
                // swish(-inf) = 0
                let a = if x.lo == f64::NEG_INFINITY { 0.0 } else { a };
                let lo = if x.lo == f64::NEG_INFINITY { lo.min(self.apply(SWISH_ARGMIN)) } else { lo };
                Interval::new(lo, a.max(b))
            }
            // monotone non-decreasing
            _ => Interval::new(self.apply(x.lo), self.apply(x.hi)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Elu => "elu",
            Activation::Swish => "swish",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "elu" => Ok(Activation::Elu),
            "swish" | "silu" => Ok(Activation::Swish),
            "tanh" => Ok(Activation::Tanh),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(format!("unknown activation `{other}`")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: [Activation; 5] =
        [Activation::Relu, Activation::Elu, Activation::Swish, Activation::Tanh, Activation::Identity];

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-6;
        for act in ALL {
            for &z in &[-2.3f64, -0.7, 0.4, 1.9] {
                let fd = (act.apply(z + h) - act.apply(z - h)) / (2.0 * h);
                assert!((fd - act.derivative(z)).abs() < 1e-8, "{act:?} at {z}");
                let fd2 = (act.derivative(z + h) - act.derivative(z - h)) / (2.0 * h);
                assert!((fd2 - act.second_derivative(z)).abs() < 1e-6, "{act:?}'' at {z}");
            }
        }
    }

    #[test]
    fn swish_lipschitz_constant_is_upper_bound() {
        let max = (-4000..4000)
            .map(|i| Activation::Swish.derivative(i as f64 * 0.005).abs())
            .fold(0.0, f64::max);
        assert!(max > 1.09 && max <= Activation::Swish.lipschitz());
        assert!((Activation::Swish.derivative(SWISH_ARGMIN)).abs() < 1e-12);
    }

    #[test]
    fn interval_images_contain_samples() {
        for act in ALL {
            let x = Interval::new(-3.0, 0.5);
            let img = act.interval(x);
            for i in 0..=100 {
                let z = -3.0 + 3.5 * i as f64 / 100.0;
                assert!(img.contains(act.apply(z)), "{act:?}");
            }
        }
    }
}
