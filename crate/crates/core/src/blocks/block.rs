use serde::{Deserialize, Serialize};

use super::coupling::{AdditiveCache, AdditiveCoupling, AffineCache, AffineCoupling};
use super::linear::{ActNorm, LinearLu, Permutation};
use super::residual::{Residual, ResidualCache};
use crate::error::Result;
use crate::numerics::Scalar;

/// One invertible layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Block<T> {
    Additive(AdditiveCoupling<T>),
    Affine(AffineCoupling<T>),
    ActNorm(ActNorm<T>),
    Permutation(Permutation),
    LinearLu(LinearLu<T>),
    Residual(Residual<T>),
}

/// Everything a block's vjp needs about the point `x` on its input side.
#[derive(Clone, Debug)]
pub enum BlockCache<T> {
    Additive(AdditiveCache<T>),
    Affine(AffineCache<T>),
    ActNorm { x: Vec<T> },
    Permutation,
    LinearLu { x: Vec<T>, u: Vec<T> },
    Residual(Box<ResidualCache<T>>),
}

impl<T: Scalar> Block<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Block::Additive(_) => "additive",
            Block::Affine(_) => "affine",
            Block::ActNorm(_) => "actnorm",
            Block::Permutation(_) => "permutation",
            Block::LinearLu(_) => "linear_lu",
            Block::Residual(_) => "residual",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Block::Additive(b) => b.partition.dim(),
            Block::Affine(b) => b.partition.dim(),
            Block::ActNorm(b) => b.scale.len(),
            Block::Permutation(p) => p.indices().len(),
            Block::LinearLu(b) => b.dim(),
            Block::Residual(b) => b.dim(),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Block::Additive(b) => b.t.num_params(),
            Block::Affine(b) => b.s.num_params() + b.t.num_params(),
            Block::ActNorm(b) => 2 * b.scale.len(),
            Block::Permutation(_) => 0,
            Block::LinearLu(b) => b.num_params(),
            Block::Residual(b) => b.g.num_params(),
        }
    }

    /// Layout: additive `t`; affine `s` then `t`; actnorm `scale` then `shift`;
    /// linear-LU as in [`LinearLu::write_params`]; residual `g`.
    pub fn write_params(&self, out: &mut [T]) {
        match self {
            Block::Additive(b) => b.t.write_params(out),
            Block::Affine(b) => {
                let ns = b.s.num_params();
                b.s.write_params(&mut out[..ns]);
                b.t.write_params(&mut out[ns..]);
            }
            Block::ActNorm(b) => {
                let d = b.scale.len();
                out[..d].copy_from_slice(&b.scale);
                out[d..2 * d].copy_from_slice(&b.shift);
            }
            Block::Permutation(_) => {}
            Block::LinearLu(b) => b.write_params(out),
            Block::Residual(b) => b.g.write_params(out),
        }
    }

    pub fn read_params(&mut self, src: &[T]) {
        match self {
            Block::Additive(b) => b.t.read_params(src),
            Block::Affine(b) => {
                let ns = b.s.num_params();
                b.s.read_params(&src[..ns]);
                b.t.read_params(&src[ns..]);
            }
            Block::ActNorm(b) => {
                let d = b.scale.len();
                b.scale.copy_from_slice(&src[..d]);
                b.shift.copy_from_slice(&src[d..2 * d]);
            }
            Block::Permutation(_) => {}
            Block::LinearLu(b) => b.read_params(src),
            Block::Residual(b) => b.g.read_params(src),
        }
    }

    pub fn forward(&self, x: &[T]) -> Result<(Vec<T>, T, BlockCache<T>)> {
        Ok(match self {
            Block::Additive(b) => {
                let (y, ld, c) = b.forward(x);
                (y, ld, BlockCache::Additive(c))
            }
            Block::Affine(b) => {
                let (y, ld, c) = b.forward(x);
                (y, ld, BlockCache::Affine(c))
            }
            Block::ActNorm(b) => (b.forward(x), b.log_det(), BlockCache::ActNorm { x: x.to_vec() }),
            Block::Permutation(p) => (p.apply(x), T::zero(), BlockCache::Permutation),
            Block::LinearLu(b) => {
                let (y, u) = b.forward(x);
                (y, b.log_det(), BlockCache::LinearLu { x: x.to_vec(), u })
            }
            Block::Residual(b) => {
                let (y, ld, c) = b.forward(x)?;
                (y, ld, BlockCache::Residual(Box::new(c)))
            }
        })
    }

    pub fn inverse(&self, y: &[T]) -> Result<Vec<T>> {
        Ok(match self {
            Block::Additive(b) => b.inverse(y).0,
            Block::Affine(b) => b.inverse(y).0,
            Block::ActNorm(b) => b.inverse(y),
            Block::Permutation(p) => p.apply_inverse(y),
            Block::LinearLu(b) => b.inverse(y).0,
            Block::Residual(b) => b.inverse(y)?.0,
        })
    }

    /// Inverse together with the cache needed by [`Block::inverse_vjp`].
    pub fn inverse_with_cache(&self, y: &[T]) -> Result<(Vec<T>, BlockCache<T>)> {
        Ok(match self {
            Block::Additive(b) => {
                let (x, c) = b.inverse(y);
                (x, BlockCache::Additive(c))
            }
            Block::Affine(b) => {
                let (x, c) = b.inverse(y);
                (x, BlockCache::Affine(c))
            }
            Block::ActNorm(b) => {
                let x = b.inverse(y);
                (x.clone(), BlockCache::ActNorm { x })
            }
            Block::Permutation(p) => (p.apply_inverse(y), BlockCache::Permutation),
            Block::LinearLu(b) => {
                let (x, u) = b.inverse(y);
                (x.clone(), BlockCache::LinearLu { x, u })
            }
            Block::Residual(b) => {
                let (x, _) = b.inverse(y)?;
                let (_, _, c) = b.forward(&x)?;
                (x, BlockCache::Residual(Box::new(c)))
            }
        })
    }

    /// Reverse mode through the forward map. `lambda` is the cotangent of the log-determinant;
    /// parameter gradients accumulate into `grad` (this block's slice).
    pub fn vjp(&self, cache: &BlockCache<T>, ybar: &[T], lambda: T, grad: &mut [T]) -> Vec<T> {
        match (self, cache) {
            (Block::Additive(b), BlockCache::Additive(c)) => b.vjp(c, ybar, grad),
            (Block::Affine(b), BlockCache::Affine(c)) => b.vjp(c, ybar, lambda, grad),
            (Block::ActNorm(b), BlockCache::ActNorm { x }) => b.vjp(x, ybar, lambda, grad),
            (Block::Permutation(p), BlockCache::Permutation) => p.apply_inverse(ybar),
            (Block::LinearLu(b), BlockCache::LinearLu { x, u }) => b.vjp(x, u, ybar, lambda, grad),
            (Block::Residual(b), BlockCache::Residual(c)) => b.vjp(c, ybar, lambda, grad),
            _ => panic!("cache does not belong to a {} block", self.kind()),
        }
    }

    /// Reverse mode through the inverse map.
    pub fn inverse_vjp(&self, cache: &BlockCache<T>, xbar: &[T], grad: &mut [T]) -> Vec<T> {
        match (self, cache) {
            (Block::Additive(b), BlockCache::Additive(c)) => b.inverse_vjp(c, xbar, grad),
            (Block::Affine(b), BlockCache::Affine(c)) => b.inverse_vjp(c, xbar, grad),
            (Block::ActNorm(b), BlockCache::ActNorm { x }) => b.inverse_vjp(x, xbar, grad),
            (Block::Permutation(p), BlockCache::Permutation) => p.apply(xbar),
            (Block::LinearLu(b), BlockCache::LinearLu { x, u }) => b.inverse_vjp(x, u, xbar, grad),
            (Block::Residual(b), BlockCache::Residual(c)) => b.inverse_vjp(c, xbar, grad),
            _ => panic!("cache does not belong to a {} block", self.kind()),
        }
    }

    pub fn jvp(&self, x: &[T], v: &[T]) -> (Vec<T>, Vec<T>) {
        match self {
            Block::Additive(b) => b.jvp(x, v),
            Block::Affine(b) => b.jvp(x, v),
            Block::ActNorm(b) => (b.forward(x), (0..v.len()).map(|i| b.scale[i] * v[i]).collect()),
            Block::Permutation(p) => (p.apply(x), p.apply(v)),
            Block::LinearLu(b) => (b.forward(x).0, b.forward(v).0),
            Block::Residual(b) => b.jvp(x, v),
        }
    }

    pub fn has_nonfinite(&self) -> bool {
        let mut p = vec![T::zero(); self.num_params()];
        self.write_params(&mut p);
        crate::numerics::has_nonfinite(&p)
    }

    pub fn cast<U: Scalar>(&self) -> Block<U> {
        use crate::numerics::scalar::cast_vec;
        match self {
            Block::Additive(b) => Block::Additive(AdditiveCoupling { partition: b.partition.clone(), t: b.t.cast() }),
            Block::Affine(b) => Block::Affine(AffineCoupling {
                partition: b.partition.clone(),
                s: b.s.cast(),
                t: b.t.cast(),
                g: b.g,
                inverse_clamp: b.inverse_clamp,
            }),
            Block::ActNorm(b) => Block::ActNorm(ActNorm { scale: cast_vec(&b.scale), shift: cast_vec(&b.shift) }),
            Block::Permutation(p) => Block::Permutation(p.clone()),
            Block::LinearLu(b) => Block::LinearLu(LinearLu {
                perm: b.perm.clone(),
                lower: b.lower.cast(),
                upper: b.upper.cast(),
                log_s: cast_vec(&b.log_s),
            }),
            Block::Residual(b) => Block::Residual(Residual {
                g: b.g.cast(),
                coeff: b.coeff,
                fp_iters: b.fp_iters,
                fp_tol: b.fp_tol,
            }),
        }
    }
}
