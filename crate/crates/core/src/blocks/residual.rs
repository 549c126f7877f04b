use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numerics::{norm_inf, Lu, Matrix, Scalar};
use crate::subnet::{Mlp, TangentCache};

/// `y = x + g(x)` with `Lip(g) < 1`; inverted by fixed-point iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residual<T> {
    pub g: Mlp<T>,
    /// Spectral-normalization target for `Lip(g)`.
    pub coeff: f64,
    pub fp_iters: usize,
    pub fp_tol: f64,
}

#[derive(Clone, Debug)]
pub struct ResidualCache<T> {
    g: TangentCache<T>,
    /// LU of `I + J_g(x)`.
    lu: Lu<T>,
}

/// Outcome of a fixed-point inversion.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedPointTrace {
    pub iterations: usize,
    /// `‖x_{k+1} - x_k‖∞` per iteration.
    pub steps: Vec<f64>,
}

impl<T: Scalar> Residual<T> {
    pub const DEFAULT_FP_ITERS: usize = 200;
    pub const DEFAULT_FP_TOL: f64 = 1e-10;

    /// Spectrally normalizes `g` to `coeff`.
    pub fn new(g: Mlp<T>, coeff: f64) -> Result<Self> {
        check_dim("residual g", g.in_dim(), g.out_dim())?;
        if !(coeff > 0.0 && coeff < 1.0) {
            return Err(Error::InvalidConfig(format!("residual coefficient must lie in (0, 1), got {coeff}")));
        }
        Ok(Residual {
            g: g.spectral_normalize(coeff),
            coeff,
            fp_iters: Self::DEFAULT_FP_ITERS,
            fp_tol: Self::DEFAULT_FP_TOL,
        })
    }

    pub fn dim(&self) -> usize {
        self.g.in_dim()
    }

    /// `(y, log|det(I + J_g)|, cache)`; the log-determinant is exact.
    pub fn forward(&self, x: &[T]) -> Result<(Vec<T>, T, ResidualCache<T>)> {
        let d = self.dim();
        let basis: Vec<Vec<T>> = (0..d)
            .map(|j| {
                let mut e = vec![T::zero(); d];
                e[j] = T::one();
                e
            })
            .collect();
        let (gx, cols, cache) = self.g.forward_tangents(x, basis);
        let mut m = Matrix::from_columns(&cols);
        for i in 0..d {
            m[(i, i)] = m[(i, i)] + T::one();
        }
        let lu = Lu::factor(&m)?;
        let (logdet, _) = lu.log_det();
        let y = x.iter().zip(&gx).map(|(&a, &b)| a + b).collect();
        Ok((y, logdet, ResidualCache { g: cache, lu }))
    }

    /// Fixed point of `x ← y - g(x)` from `x₀ = y`.
    pub fn inverse(&self, y: &[T]) -> Result<(Vec<T>, FixedPointTrace)> {
        let mut x = y.to_vec();
        let mut steps = Vec::new();
        let floor = T::epsilon().to_f64_lossless() * 4.0;
        for k in 0..self.fp_iters {
            let gx = self.g.eval(&x);
            let next: Vec<T> = y.iter().zip(&gx).map(|(&a, &b)| a - b).collect();
            if crate::numerics::has_nonfinite(&next) {
                return Err(Error::non_finite("residual fixed-point iteration"));
            }
            let step = norm_inf(&crate::numerics::scalar::sub(&next, &x)).to_f64_lossless();
            let scale = norm_inf(&next).to_f64_lossless().max(1.0);
            x = next;
            steps.push(step);
            if step <= self.fp_tol || step <= floor * scale {
                return Ok((x, FixedPointTrace { iterations: k + 1, steps }));
            }
        }
        Err(Error::NoConvergence {
            context: "residual fixed-point inverse".into(),
            iters: self.fp_iters,
            residual: steps.last().copied().unwrap_or(f64::NAN),
        })
    }

    pub fn vjp(&self, cache: &ResidualCache<T>, ybar: &[T], lambda: T, grad: &mut [T]) -> Vec<T> {
        let d = self.dim();
        // ∂ log det(I+J)/∂J = (I+J)⁻ᵀ; column j is the cotangent of J e_j
        let tangent_bars: Vec<Vec<T>> = if lambda == T::zero() {
            vec![vec![T::zero(); d]; d]
        } else {
            let inv = cache.lu.inverse();
            (0..d).map(|j| inv.row(j).iter().map(|&v| lambda * v).collect()).collect()
        };
        let from_g = self.g.tangent_vjp(&cache.g, ybar, &tangent_bars, grad);
        ybar.iter().zip(&from_g).map(|(&a, &b)| a + b).collect()
    }

    /// Implicit-function vjp of the inverse; `cache` is the forward cache at the inverse's output.
    pub fn inverse_vjp(&self, cache: &ResidualCache<T>, xbar: &[T], grad: &mut [T]) -> Vec<T> {
        let d = self.dim();
        let w = cache.lu.solve_transpose(xbar);
        let neg: Vec<T> = w.iter().map(|&v| -v).collect();
        self.g.tangent_vjp(&cache.g, &neg, &vec![vec![T::zero(); d]; d], grad);
        w
    }

    pub fn jvp(&self, x: &[T], v: &[T]) -> (Vec<T>, Vec<T>) {
        let (gx, gdot) = self.g.jvp(x, v);
        (
            x.iter().zip(&gx).map(|(&a, &b)| a + b).collect(),
            v.iter().zip(&gdot).map(|(&a, &b)| a + b).collect(),
        )
    }
}
