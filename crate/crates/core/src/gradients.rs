//! Parameter gradients through a flow by two routes, standard backprop from cached
//! activations and memory-saving backprop that rebuilds activations with the inverse,
//! and the angle between them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blocks::{Flow, ReconTrace};
use crate::error::Result;
use crate::numerics::{has_nonfinite, Precision, Scalar};

/// Examples per reduction chunk. Chunks are summed in index order, so results do not depend
/// on the thread count.
pub const CHUNK: usize = 64;

/// A per-example loss evaluated at the flow output: returns the loss value, `∂L/∂z` and
/// `∂L/∂logdet`. `index` identifies the example (e.g. to look up a regression target).
pub trait OutputLoss<T>: Sync {
    fn eval(&self, index: usize, z: &[T], logdet: T) -> (f64, Vec<T>, T);
}

impl<T, F> OutputLoss<T> for F
where
    F: Fn(usize, &[T], T) -> (f64, Vec<T>, T) + Sync,
{
    fn eval(&self, index: usize, z: &[T], logdet: T) -> (f64, Vec<T>, T) {
        self(index, z, logdet)
    }
}

/// Sum over a batch of per-example losses and parameter gradients.
#[derive(Clone, Debug)]
pub struct BatchGrad<T> {
    pub loss_sum: f64,
    pub grad: Vec<T>,
    /// Examples skipped because a forward pass or reconstruction was non-finite.
    pub nonfinite: usize,
    /// First block index reported by a non-finite failure.
    pub first_bad_block: Option<usize>,
}

impl<T: Scalar> BatchGrad<T> {
    fn zero(n: usize) -> Self {
        BatchGrad { loss_sum: 0.0, grad: vec![T::zero(); n], nonfinite: 0, first_bad_block: None }
    }

    fn merge(mut self, other: BatchGrad<T>) -> Self {
        self.loss_sum += other.loss_sum;
        for (a, b) in self.grad.iter_mut().zip(&other.grad) {
            *a = *a + *b;
        }
        self.nonfinite += other.nonfinite;
        self.first_bad_block = self.first_bad_block.or(other.first_bad_block);
        self
    }
}

/// Which backward route to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Path {
    Standard,
    Memsave,
}

fn example_grad<T: Scalar>(
    flow: &Flow<T>,
    x: &[T],
    index: usize,
    loss: &dyn OutputLoss<T>,
    precision: Precision,
    path: Path,
    acc: &mut BatchGrad<T>,
) {
    let fail = |acc: &mut BatchGrad<T>, block: Option<usize>| {
        acc.nonfinite += 1;
        acc.first_bad_block = acc.first_bad_block.or(block);
    };
    let pass = match flow.forward(x, precision) {
        Ok(p) => p,
        Err(e) => return fail(acc, e.block()),
    };
    let (value, zbar, lambda) = loss.eval(index, &pass.z, pass.logdet);
    if !value.is_finite() || has_nonfinite(&zbar) {
        return fail(acc, None);
    }
    let mut g = vec![T::zero(); acc.grad.len()];
    match path {
        Path::Standard => {
            flow.backward(&pass, &zbar, lambda, &mut g);
        }
        Path::Memsave => match flow.backward_memsave(&pass.z, &zbar, lambda, precision, &mut g) {
            Ok(_) => {}
            Err(e) => return fail(acc, e.block()),
        },
    }
    if has_nonfinite(&g) {
        return fail(acc, None);
    }
    acc.loss_sum += value;
    for (a, b) in acc.grad.iter_mut().zip(&g) {
        *a = *a + *b;
    }
}

/// Summed loss and gradient over `batch`, deterministic for any thread count.
pub fn batch_gradient<T: Scalar>(
    flow: &Flow<T>,
    batch: &[Vec<T>],
    loss: &dyn OutputLoss<T>,
    precision: Precision,
    path: Path,
) -> BatchGrad<T> {
    let n = flow.num_params();
    let chunks: Vec<BatchGrad<T>> = batch
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let mut acc = BatchGrad::zero(n);
            for (j, x) in chunk.iter().enumerate() {
                example_grad(flow, x, ci * CHUNK + j, loss, precision, path, &mut acc);
            }
            acc
        })
        .collect();
    chunks.into_iter().fold(BatchGrad::zero(n), BatchGrad::merge)
}

/// Standard backprop for one example from a cached forward pass.
pub fn backprop_standard<T: Scalar>(flow: &Flow<T>, pass: &crate::blocks::ForwardPass<T>, zbar: &[T], lambda: T) -> Vec<T> {
    let mut g = vec![T::zero(); flow.num_params()];
    flow.backward(pass, zbar, lambda, &mut g);
    g
}

/// Memory-saving backprop for one example, from the output `z` alone.
pub fn backprop_memsave<T: Scalar>(
    flow: &Flow<T>,
    z: &[T],
    zbar: &[T],
    lambda: T,
    precision: Precision,
) -> Result<(Vec<T>, ReconTrace<T>)> {
    let mut g = vec![T::zero(); flow.num_params()];
    let (_, trace) = flow.backward_memsave(z, zbar, lambda, precision, &mut g)?;
    Ok((g, trace))
}

/// Angle in `[0, π]` between two vectors. Returns `(angle, degenerate)`: a zero vector gives
/// angle 0 with `degenerate = true`; a non-finite entry gives NaN.
pub fn angle(a: &[f64], b: &[f64]) -> (f64, bool) {
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return (f64::NAN, false);
    }
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return (0.0, true);
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (x / scale, y / scale);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return (0.0, true);
    }
    let c = (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0);
    // acos loses precision near 1; use the norm of the difference of unit vectors instead
    let (ua, ub) = (na.sqrt(), nb.sqrt());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x / scale / ua - y / scale / ub).powi(2)).sum::<f64>().sqrt();
    let theta = if c > 0.9 { 2.0 * (diff / 2.0).min(1.0).asin() } else { c.acos() };
    (theta, false)
}

/// Both gradients on the same batch and their angle.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradPair {
    pub grad_standard: Vec<f64>,
    pub grad_memsave: Vec<f64>,
    pub angle_radians: f64,
    /// The memory-saving route produced a non-finite value on some example.
    pub memsave_nonfinite: bool,
    /// One of the gradients is identically zero; the angle is reported as 0.
    pub degenerate: bool,
    pub nonfinite_block: Option<usize>,
}

impl GradPair {
    pub fn relative_difference(&self) -> f64 {
        let d: f64 = self.grad_standard.iter().zip(&self.grad_memsave).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let n: f64 = self.grad_standard.iter().map(|a| a * a).sum::<f64>().sqrt();
        d / n
    }
}

/// Gradients of the summed batch loss by both routes.
pub fn grad_angle<T: Scalar>(flow: &Flow<T>, batch: &[Vec<T>], loss: &dyn OutputLoss<T>, precision: Precision) -> GradPair {
    let std = batch_gradient(flow, batch, loss, precision, Path::Standard);
    let mem = batch_gradient(flow, batch, loss, precision, Path::Memsave);
    let gs: Vec<f64> = std.grad.iter().map(|v| v.to_f64_lossless()).collect();
    let mut gm: Vec<f64> = mem.grad.iter().map(|v| v.to_f64_lossless()).collect();
    let memsave_nonfinite = mem.nonfinite > std.nonfinite || gm.iter().any(|v| !v.is_finite());
    if memsave_nonfinite {
        gm.iter_mut().for_each(|v| *v = f64::NAN);
    }
    let (angle_radians, degenerate) = angle(&gs, &gm);
    GradPair {
        grad_standard: gs,
        grad_memsave: gm,
        angle_radians,
        memsave_nonfinite,
        degenerate,
        nonfinite_block: mem.first_bad_block,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::{affine_chain, random_flow, ActNorm, Block};
    use crate::numerics::Rng;

    fn half_sq(_: usize, z: &[f64], _: f64) -> (f64, Vec<f64>, f64) {
        (0.5 * z.iter().map(|v| v * v).sum::<f64>(), z.to_vec(), 0.0)
    }

    #[test]
    fn angle_arithmetic() {
        assert!((angle(&[1.0, 0.0], &[0.0, 2.0]).0 - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert_eq!(angle(&[1.0, 2.0], &[1.0, 2.0]), (0.0, false));
        assert!((angle(&[1.0, 0.0], &[-1.0, 0.0]).0 - std::f64::consts::PI).abs() < 1e-15);
        assert_eq!(angle(&[0.0, 0.0], &[1.0, 0.0]), (0.0, true));
        assert!(angle(&[f64::NAN, 0.0], &[1.0, 0.0]).0.is_nan());
        let tiny = angle(&[1.0, 0.0], &[1.0, 1e-12]).0;
        assert!((tiny - 1e-12).abs() < 1e-20, "{tiny}");
    }

    #[test]
    fn actnorm_hand_gradient() {
        let f = Flow::new(2, vec![Block::ActNorm(ActNorm::new(vec![1.5, 2.0], vec![0.0, 0.0]).unwrap())]).unwrap();
        let x = [0.7, -0.3];
        let pass = f.forward(&x, Precision::F64).unwrap();
        let g = backprop_standard(&f, &pass, &[1.0, 0.0], 0.0);
        assert_eq!(g, vec![0.7, 0.0, 1.0, 0.0]);
        assert!(backprop_standard(&f, &pass, &[0.0, 0.0], 0.0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn well_conditioned_paths_agree() {
        let mut rng = Rng::new(12, 0);
        let f: Flow<f64> = random_flow(&mut rng, 4, 10);
        let batch: Vec<Vec<f64>> = (0..20).map(|_| rng.normal_vec(4)).collect();
        let pair = grad_angle(&f, &batch, &half_sq, Precision::F64);
        assert!(!pair.memsave_nonfinite && !pair.degenerate);
        assert!(pair.angle_radians <= 1e-10, "{}", pair.angle_radians);
        assert!(pair.relative_difference() <= 1e-9);
    }

    #[test]
    fn batch_gradient_is_sum_of_examples() {
        let mut rng = Rng::new(13, 0);
        let f: Flow<f64> = random_flow(&mut rng, 3, 6);
        let batch: Vec<Vec<f64>> = (0..150).map(|_| rng.normal_vec(3)).collect();
        let all = batch_gradient(&f, &batch, &half_sq, Precision::F64, Path::Standard);
        let mut manual = vec![0.0; f.num_params()];
        for x in &batch {
            let pass = f.forward(x, Precision::F64).unwrap();
            for (m, g) in manual.iter_mut().zip(backprop_standard(&f, &pass, &pass.z, 0.0)) {
                *m += g;
            }
        }
        for (a, b) in all.grad.iter().zip(&manual) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn reconstruction_residuals_grow_backwards_through_contracting_chain() {
        let f = affine_chain::<f64>(30, 0.123456789, 0.1);
        let x = [1.0, 1.0];
        let pass = f.forward(&x, Precision::F32).unwrap();
        let (_, trace) = backprop_memsave(&f, &pass.z, &pass.z, 0.0, Precision::F32).unwrap();
        let r = trace.residuals_against(&pass);
        for i in 1..r.len() {
            assert!(r[i - 1] >= r[i], "block {i}: {} < {}", r[i - 1], r[i]);
        }
        assert!(r[0] > 1.0);
    }
}
