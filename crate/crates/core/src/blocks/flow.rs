use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::block::{Block, BlockCache};
use crate::error::{check_dim, Error, Result};
use crate::numerics::{has_nonfinite, round_to_precision, Precision, Scalar};

/// Composition `F = F_n ∘ … ∘ F_1` of invertible blocks on `ℝ^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Flow<T> {
    dim: usize,
    blocks: Vec<Block<T>>,
}

/// Result of a cached forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass<T> {
    pub z: Vec<T>,
    pub logdet: T,
    /// Input of each block, after pipeline rounding.
    pub inputs: Vec<Vec<T>>,
    pub caches: Vec<BlockCache<T>>,
}

/// Result of a cached inverse pass; caches are indexed by block.
#[derive(Clone, Debug)]
pub struct InversePass<T> {
    pub x: Vec<T>,
    pub caches: Vec<BlockCache<T>>,
}

/// Block inputs rebuilt by the memory-saving backward walk, indexed by block.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconTrace<T> {
    pub reconstructed: Vec<Vec<T>>,
}

impl<T: Scalar> ReconTrace<T> {
    /// Per-block ℓ₂ distance between reconstructed and cached block inputs.
    pub fn residuals_against(&self, pass: &ForwardPass<T>) -> Vec<f64> {
        self.reconstructed
            .iter()
            .zip(&pass.inputs)
            .map(|(r, c)| {
                r.iter()
                    .zip(c)
                    .map(|(&a, &b)| {
                        let d = a.to_f64_lossless() - b.to_f64_lossless();
                        d * d
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }
}

fn rounded<T: Scalar>(x: Vec<T>, p: Precision) -> Vec<T> {
    if p == Precision::F64 || T::PRECISION == Precision::F32 {
        x
    } else {
        round_to_precision(&x, p)
    }
}

impl<T: Scalar> Flow<T> {
    pub fn new(dim: usize, blocks: Vec<Block<T>>) -> Result<Self> {
        for b in &blocks {
            check_dim("block dimension", dim, b.dim())?;
        }
        Ok(Flow { dim, blocks })
    }

    pub fn identity(dim: usize) -> Self {
        Flow { dim, blocks: Vec::new() }
    }

    pub fn push(&mut self, block: Block<T>) -> Result<()> {
        check_dim("block dimension", self.dim, block.dim())?;
        self.blocks.push(block);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[Block<T>] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [Block<T>] {
        &mut self.blocks
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn num_params(&self) -> usize {
        self.blocks.iter().map(Block::num_params).sum()
    }

    /// Slice of the flat parameter vector owned by each block, in block order.
    pub fn param_ranges(&self) -> Vec<Range<usize>> {
        let mut k = 0;
        self.blocks
            .iter()
            .map(|b| {
                let r = k..k + b.num_params();
                k = r.end;
                r
            })
            .collect()
    }

    /// Flat parameters: block order, then each block's own layout.
    pub fn params(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.num_params()];
        for (b, r) in self.blocks.iter().zip(self.param_ranges()) {
            b.write_params(&mut out[r]);
        }
        out
    }

    pub fn set_params(&mut self, p: &[T]) {
        assert_eq!(p.len(), self.num_params(), "parameter vector length");
        let ranges = self.param_ranges();
        for (b, r) in self.blocks.iter_mut().zip(ranges) {
            b.read_params(&p[r]);
        }
    }

    fn check_input(&self, x: &[T], context: &str) -> Result<()> {
        check_dim(context, self.dim, x.len())?;
        if has_nonfinite(x) {
            return Err(Error::non_finite(context));
        }
        Ok(())
    }

    /// `(z, Σ logdet)` without caches.
    pub fn eval(&self, x: &[T], precision: Precision) -> Result<(Vec<T>, T)> {
        self.check_input(x, "flow forward input")?;
        let mut h = rounded(x.to_vec(), precision);
        let mut logdet = T::zero();
        for (i, b) in self.blocks.iter().enumerate() {
            let (y, ld, _) = b.forward(&h).map_err(|e| e.at_block(i))?;
            h = rounded(y, precision);
            logdet = logdet + ld;
            if has_nonfinite(&h) || !logdet.is_finite() {
                return Err(Error::non_finite("flow forward").at_block(i));
            }
        }
        Ok((h, logdet))
    }

    /// Forward pass with pipeline rounding after every block.
    pub fn forward(&self, x: &[T], precision: Precision) -> Result<ForwardPass<T>> {
        self.check_input(x, "flow forward input")?;
        let n = self.blocks.len();
        let mut inputs = Vec::with_capacity(n);
        let mut caches = Vec::with_capacity(n);
        let mut h = rounded(x.to_vec(), precision);
        let mut logdet = T::zero();
        for (i, b) in self.blocks.iter().enumerate() {
            let (y, ld, c) = b.forward(&h).map_err(|e| e.at_block(i))?;
            inputs.push(h);
            caches.push(c);
            h = rounded(y, precision);
            logdet = logdet + ld;
            if has_nonfinite(&h) || !logdet.is_finite() {
                return Err(Error::non_finite("flow forward").at_block(i));
            }
        }
        Ok(ForwardPass { z: h, logdet, inputs, caches })
    }

    pub fn inverse(&self, z: &[T], precision: Precision) -> Result<Vec<T>> {
        self.check_input(z, "flow inverse input")?;
        let mut h = rounded(z.to_vec(), precision);
        for (i, b) in self.blocks.iter().enumerate().rev() {
            h = rounded(b.inverse(&h).map_err(|e| e.at_block(i))?, precision);
            if has_nonfinite(&h) {
                return Err(Error::non_finite("flow inverse").at_block(i));
            }
        }
        Ok(h)
    }

    pub fn inverse_pass(&self, z: &[T], precision: Precision) -> Result<InversePass<T>> {
        self.check_input(z, "flow inverse input")?;
        let mut h = rounded(z.to_vec(), precision);
        let mut caches = Vec::with_capacity(self.blocks.len());
        for (i, b) in self.blocks.iter().enumerate().rev() {
            let (x, c) = b.inverse_with_cache(&h).map_err(|e| e.at_block(i))?;
            h = rounded(x, precision);
            if has_nonfinite(&h) {
                return Err(Error::non_finite("flow inverse").at_block(i));
            }
            caches.push(c);
        }
        caches.reverse();
        Ok(InversePass { x: h, caches })
    }

    /// Standard backprop from cached activations. Accumulates `∂L/∂θ` into `grad` and
    /// returns `∂L/∂x`, for `L` with `∂L/∂z = zbar` and `∂L/∂logdet = lambda`.
    pub fn backward(&self, pass: &ForwardPass<T>, zbar: &[T], lambda: T, grad: &mut [T]) -> Vec<T> {
        let ranges = self.param_ranges();
        let mut bar = zbar.to_vec();
        for (i, b) in self.blocks.iter().enumerate().rev() {
            bar = b.vjp(&pass.caches[i], &bar, lambda, &mut grad[ranges[i].clone()]);
        }
        bar
    }

    /// Memory-saving backprop: starting from the output only, each block's input is
    /// reconstructed with its inverse (at pipeline precision), the block is re-run forward
    /// from it, and the local vjp is taken there.
    pub fn backward_memsave(
        &self,
        z: &[T],
        zbar: &[T],
        lambda: T,
        precision: Precision,
        grad: &mut [T],
    ) -> Result<(Vec<T>, ReconTrace<T>)> {
        let ranges = self.param_ranges();
        let n = self.blocks.len();
        let mut reconstructed = vec![Vec::new(); n];
        let mut h = rounded(z.to_vec(), precision);
        let mut bar = zbar.to_vec();
        for (i, b) in self.blocks.iter().enumerate().rev() {
            let x = rounded(b.inverse(&h).map_err(|e| e.at_block(i))?, precision);
            if has_nonfinite(&x) {
                return Err(Error::non_finite("memory-saving reconstruction").at_block(i));
            }
            let (_, _, cache) = b.forward(&x).map_err(|e| e.at_block(i))?;
            bar = b.vjp(&cache, &bar, lambda, &mut grad[ranges[i].clone()]);
            reconstructed[i] = x.clone();
            h = x;
        }
        Ok((bar, ReconTrace { reconstructed }))
    }

    /// Reverse mode through the inverse map: returns `∂L/∂z` for `∂L/∂x = xbar`.
    pub fn inverse_backward(&self, pass: &InversePass<T>, xbar: &[T], grad: &mut [T]) -> Vec<T> {
        let ranges = self.param_ranges();
        let mut bar = xbar.to_vec();
        for (i, b) in self.blocks.iter().enumerate() {
            bar = b.inverse_vjp(&pass.caches[i], &bar, &mut grad[ranges[i].clone()]);
        }
        bar
    }

    /// Exact `(F(x), J_F(x) v)`.
    pub fn jvp(&self, x: &[T], v: &[T]) -> (Vec<T>, Vec<T>) {
        let mut h = x.to_vec();
        let mut t = v.to_vec();
        for b in &self.blocks {
            let (y, yd) = b.jvp(&h, &t);
            h = y;
            t = yd;
        }
        (h, t)
    }

    /// Exact `J_{F⁻¹}(z) v`, assembled from block inverse Jacobians.
    pub fn inverse_jvp(&self, z: &[T], v: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let mut h = z.to_vec();
        let mut t = v.to_vec();
        for (i, b) in self.blocks.iter().enumerate().rev() {
            let x = b.inverse(&h).map_err(|e| e.at_block(i))?;
            // J_{F⁻¹}(y) = J_F(x)⁻¹
            t = solve_block_jacobian(b, &x, &t).map_err(|e| e.at_block(i))?;
            h = x;
        }
        Ok((h, t))
    }

    pub fn cast<U: Scalar>(&self) -> Flow<U> {
        Flow { dim: self.dim, blocks: self.blocks.iter().map(Block::cast).collect() }
    }

    pub fn has_nonfinite_params(&self) -> bool {
        self.blocks.iter().any(Block::has_nonfinite)
    }
}

fn solve_block_jacobian<T: Scalar>(b: &Block<T>, x: &[T], rhs: &[T]) -> Result<Vec<T>> {
    let d = x.len();
    let cols: Vec<Vec<T>> = (0..d)
        .map(|j| {
            let mut e = vec![T::zero(); d];
            e[j] = T::one();
            b.jvp(x, &e).1
        })
        .collect();
    let j = crate::numerics::Matrix::from_columns(&cols);
    Ok(crate::numerics::Lu::factor(&j)?.solve(rhs))
}
