use serde::{Deserialize, Serialize};

use super::partition::Partition;
use crate::error::{check_dim, Result};
use crate::numerics::Scalar;
use crate::subnet::{Mlp, MlpCache, ScalingFn};

/// `y_{I₂} = x_{I₂} + t(x_{I₁})`, `y_{I₁} = x_{I₁}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdditiveCoupling<T> {
    pub partition: Partition,
    pub t: Mlp<T>,
}

#[derive(Clone, Debug)]
pub struct AdditiveCache<T> {
    t: MlpCache<T>,
}

impl<T: Scalar> AdditiveCoupling<T> {
    pub fn new(partition: Partition, t: Mlp<T>) -> Result<Self> {
        check_dim("additive t input", partition.i1().len(), t.in_dim())?;
        check_dim("additive t output", partition.i2().len(), t.out_dim())?;
        Ok(AdditiveCoupling { partition, t })
    }

    pub fn forward(&self, x: &[T]) -> (Vec<T>, T, AdditiveCache<T>) {
        let (x1, x2) = self.partition.split(x);
        let (t, tc) = self.t.forward(&x1);
        let y2: Vec<T> = x2.iter().zip(&t).map(|(&a, &b)| a + b).collect();
        (self.partition.merge(&x1, &y2), T::zero(), AdditiveCache { t: tc })
    }

    pub fn inverse(&self, y: &[T]) -> (Vec<T>, AdditiveCache<T>) {
        let (y1, y2) = self.partition.split(y);
        let (t, tc) = self.t.forward(&y1);
        let x2: Vec<T> = y2.iter().zip(&t).map(|(&a, &b)| a - b).collect();
        (self.partition.merge(&y1, &x2), AdditiveCache { t: tc })
    }

    pub fn vjp(&self, cache: &AdditiveCache<T>, ybar: &[T], grad: &mut [T]) -> Vec<T> {
        let (yb1, yb2) = self.partition.split(ybar);
        let tb = self.t.vjp(&cache.t, &yb2, grad);
        let xb1: Vec<T> = yb1.iter().zip(&tb).map(|(&a, &b)| a + b).collect();
        self.partition.merge(&xb1, &yb2)
    }

    pub fn inverse_vjp(&self, cache: &AdditiveCache<T>, xbar: &[T], grad: &mut [T]) -> Vec<T> {
        let (xb1, xb2) = self.partition.split(xbar);
        let neg: Vec<T> = xb2.iter().map(|&v| -v).collect();
        let tb = self.t.vjp(&cache.t, &neg, grad);
        let yb1: Vec<T> = xb1.iter().zip(&tb).map(|(&a, &b)| a + b).collect();
        self.partition.merge(&yb1, &xb2)
    }

    pub fn jvp(&self, x: &[T], v: &[T]) -> (Vec<T>, Vec<T>) {
        let (x1, x2) = self.partition.split(x);
        let (v1, v2) = self.partition.split(v);
        let (t, tdot) = self.t.jvp(&x1, &v1);
        let y2: Vec<T> = x2.iter().zip(&t).map(|(&a, &b)| a + b).collect();
        let ydot2: Vec<T> = v2.iter().zip(&tdot).map(|(&a, &b)| a + b).collect();
        (self.partition.merge(&x1, &y2), self.partition.merge(&v1, &ydot2))
    }
}

/// `y_{I₂} = x_{I₂} ⊙ g(s(x_{I₁})) + t(x_{I₁})`, `y_{I₁} = x_{I₁}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineCoupling<T> {
    pub partition: Partition,
    pub s: Mlp<T>,
    pub t: Mlp<T>,
    pub g: ScalingFn,
    /// Ablation only: the inverse divides by `sign(g)·max(|g|, clamp)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inverse_clamp: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct AffineCache<T> {
    /// The unscaled `I₂` coordinates: the block input going forward, the output going back.
    x2: Vec<T>,
    s_pre: Vec<T>,
    g: Vec<T>,
    s: MlpCache<T>,
    t: MlpCache<T>,
}

impl<T: Scalar> AffineCoupling<T> {
    pub fn new(partition: Partition, s: Mlp<T>, t: Mlp<T>, g: ScalingFn) -> Result<Self> {
        let (n1, n2) = (partition.i1().len(), partition.i2().len());
        check_dim("affine s input", n1, s.in_dim())?;
        check_dim("affine s output", n2, s.out_dim())?;
        check_dim("affine t input", n1, t.in_dim())?;
        check_dim("affine t output", n2, t.out_dim())?;
        Ok(AffineCoupling { partition, s, t, g, inverse_clamp: None })
    }

    pub fn forward(&self, x: &[T]) -> (Vec<T>, T, AffineCache<T>) {
        let (x1, x2) = self.partition.split(x);
        let (s_pre, sc) = self.s.forward(&x1);
        let (t, tc) = self.t.forward(&x1);
        let g: Vec<T> = s_pre.iter().map(|&v| self.g.apply(v)).collect();
        let logdet = s_pre.iter().map(|&v| self.g.log_abs(v)).fold(T::zero(), |a, b| a + b);
        let y2: Vec<T> = (0..x2.len()).map(|i| x2[i] * g[i] + t[i]).collect();
        let y = self.partition.merge(&x1, &y2);
        (y, logdet, AffineCache { x2, s_pre, g, s: sc, t: tc })
    }

    pub fn inverse(&self, y: &[T]) -> (Vec<T>, AffineCache<T>) {
        let (y1, y2) = self.partition.split(y);
        let (s_pre, sc) = self.s.forward(&y1);
        let (t, tc) = self.t.forward(&y1);
        let g: Vec<T> = s_pre.iter().map(|&v| self.g.apply(v)).collect();
        let x2: Vec<T> = (0..y2.len()).map(|i| (y2[i] - t[i]) / self.divisor(g[i])).collect();
        let x = self.partition.merge(&y1, &x2);
        (x, AffineCache { x2, s_pre, g, s: sc, t: tc })
    }

    fn divisor(&self, g: T) -> T {
        match self.inverse_clamp {
            Some(c) if g.abs() < T::lit(c) => T::lit(c).copysign(g),
            _ => g,
        }
    }

    /// `λ` is the cotangent of the block's log-determinant.
    pub fn vjp(&self, cache: &AffineCache<T>, ybar: &[T], lambda: T, grad: &mut [T]) -> Vec<T> {
        let (yb1, yb2) = self.partition.split(ybar);
        let n2 = yb2.len();
        let xb2: Vec<T> = (0..n2).map(|i| yb2[i] * cache.g[i]).collect();
        let sb: Vec<T> = (0..n2)
            .map(|i| {
                let sp = cache.s_pre[i];
                yb2[i] * cache.x2[i] * self.g.derivative(sp) + lambda * self.g.log_abs_derivative(sp)
            })
            .collect();
        let ns = self.s.num_params();
        let (gs, gt) = grad.split_at_mut(ns);
        let from_s = self.s.vjp(&cache.s, &sb, gs);
        let from_t = self.t.vjp(&cache.t, &yb2, gt);
        let xb1: Vec<T> = (0..yb1.len()).map(|i| yb1[i] + from_s[i] + from_t[i]).collect();
        self.partition.merge(&xb1, &xb2)
    }

    pub fn inverse_vjp(&self, cache: &AffineCache<T>, xbar: &[T], grad: &mut [T]) -> Vec<T> {
        let (xb1, xb2) = self.partition.split(xbar);
        let n2 = xb2.len();
        let div: Vec<T> = cache.g.iter().map(|&g| self.divisor(g)).collect();
        let yb2: Vec<T> = (0..n2).map(|i| xb2[i] / div[i]).collect();
        let tb: Vec<T> = yb2.iter().map(|&v| -v).collect();
        // x₂ = (y₂ - t)/g ⇒ ∂x₂/∂g = -x₂/g; a clamped divisor is constant in s
        let sb: Vec<T> = (0..n2)
            .map(|i| {
                if div[i] == cache.g[i] {
                    -yb2[i] * cache.x2[i] * self.g.derivative(cache.s_pre[i])
                } else {
                    T::zero()
                }
            })
            .collect();
        let ns = self.s.num_params();
        let (gs, gt) = grad.split_at_mut(ns);
        let from_s = self.s.vjp(&cache.s, &sb, gs);
        let from_t = self.t.vjp(&cache.t, &tb, gt);
        let yb1: Vec<T> = (0..xb1.len()).map(|i| xb1[i] + from_s[i] + from_t[i]).collect();
        self.partition.merge(&yb1, &yb2)
    }

    pub fn jvp(&self, x: &[T], v: &[T]) -> (Vec<T>, Vec<T>) {
        let (x1, x2) = self.partition.split(x);
        let (v1, v2) = self.partition.split(v);
        let (s_pre, sdot) = self.s.jvp(&x1, &v1);
        let (t, tdot) = self.t.jvp(&x1, &v1);
        let n2 = x2.len();
        let mut y2 = Vec::with_capacity(n2);
        let mut yd2 = Vec::with_capacity(n2);
        for i in 0..n2 {
            let g = self.g.apply(s_pre[i]);
            y2.push(x2[i] * g + t[i]);
            yd2.push(v2[i] * g + x2[i] * self.g.derivative(s_pre[i]) * sdot[i] + tdot[i]);
        }
        (self.partition.merge(&x1, &y2), self.partition.merge(&v1, &yd2))
    }
}
