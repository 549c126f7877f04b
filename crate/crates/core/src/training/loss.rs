use std::f64::consts::{LN_2, PI};

use crate::blocks::Flow;
use crate::gradients::{batch_gradient, OutputLoss, Path};
use crate::numerics::{Precision, Scalar};

/// Negative log-likelihood under a standard normal base distribution:
/// `½‖z‖² + (d/2)·log 2π − log|det J|`, in nats.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NfLoss;

impl NfLoss {
    pub fn value<T: Scalar>(z: &[T], logdet: T) -> f64 {
        let d = z.len() as f64;
        let sq: f64 = z.iter().map(|v| v.to_f64_lossless().powi(2)).sum();
        0.5 * sq + 0.5 * d * (2.0 * PI).ln() - logdet.to_f64_lossless()
    }

    /// Bits per dimension of a loss in nats.
    pub fn bpd(nats: f64, d: usize) -> f64 {
        nats / (d as f64 * LN_2)
    }
}

impl<T: Scalar> OutputLoss<T> for NfLoss {
    fn eval(&self, _: usize, z: &[T], logdet: T) -> (f64, Vec<T>, T) {
        (NfLoss::value(z, logdet), z.to_vec(), -T::one())
    }
}

/// Mean squared error against per-example targets, averaged over coordinates, plus an
/// optional normalizing-flow term `coeff · NfLoss`.
pub struct RegressionLoss<'a, T> {
    pub targets: &'a [Vec<T>],
    pub nf_coeff: f64,
}

impl<T: Scalar> RegressionLoss<'_, T> {
    pub fn mse(z: &[T], y: &[T]) -> f64 {
        z.iter().zip(y).map(|(a, b)| (a.to_f64_lossless() - b.to_f64_lossless()).powi(2)).sum::<f64>() / z.len() as f64
    }
}

impl<T: Scalar> OutputLoss<T> for RegressionLoss<'_, T> {
    fn eval(&self, index: usize, z: &[T], logdet: T) -> (f64, Vec<T>, T) {
        let y = &self.targets[index];
        let scale = T::lit(2.0 / z.len() as f64);
        let mut value = Self::mse(z, y);
        let mut zbar: Vec<T> = z.iter().zip(y).map(|(&a, &b)| scale * (a - b)).collect();
        let mut lambda = T::zero();
        if self.nf_coeff != 0.0 {
            let c = T::lit(self.nf_coeff);
            value += self.nf_coeff * NfLoss::value(z, logdet);
            for (g, &v) in zbar.iter_mut().zip(z) {
                *g = *g + c * v;
            }
            lambda = -c;
        }
        (value, zbar, lambda)
    }
}

/// Batch mean of a loss and its parameter gradient.
#[derive(Clone, Debug)]
pub struct MeanLoss<T> {
    pub value: f64,
    pub grad: Vec<T>,
    /// Examples excluded because their forward or backward pass was non-finite.
    pub nonfinite: usize,
}

pub fn mean_loss<T: Scalar>(flow: &Flow<T>, batch: &[Vec<T>], loss: &dyn OutputLoss<T>, precision: Precision) -> MeanLoss<T> {
    let g = batch_gradient(flow, batch, loss, precision, Path::Standard);
    let ok = batch.len() - g.nonfinite;
    let inv = if ok == 0 { f64::NAN } else { 1.0 / ok as f64 };
    MeanLoss {
        value: g.loss_sum * inv,
        grad: g.grad.into_iter().map(|v| v * T::lit(inv)).collect(),
        nonfinite: g.nonfinite,
    }
}

/// Mean NF loss over `batch` with its gradient from standard backprop.
pub fn nf_loss<T: Scalar>(flow: &Flow<T>, batch: &[Vec<T>], precision: Precision) -> MeanLoss<T> {
    mean_loss(flow, batch, &NfLoss, precision)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::{random_flow, ActNorm, Block};
    use crate::numerics::Rng;

    #[test]
    fn identity_at_origin() {
        let r = nf_loss(&Flow::<f64>::identity(2), &[vec![0.0, 0.0]], Precision::F64);
        assert!((r.value - (2.0 * PI).ln()).abs() < 1e-15);
        assert!((r.value - 1.8378770664093453).abs() < 1e-12);
    }

    #[test]
    fn actnorm_closed_form() {
        let f = Flow::new(2, vec![Block::ActNorm(ActNorm::new(vec![2.0, 2.0], vec![0.0, 0.0]).unwrap())]).unwrap();
        let r = nf_loss(&f, &[vec![0.0, 0.0]], Precision::F64);
        assert!((r.value - ((2.0 * PI).ln() - 2.0 * 2f64.ln())).abs() < 1e-14);
        // ∂/∂scale_i of −log|scale_i| at zero input
        assert!((r.grad[0] + 0.5f64).abs() < 1e-15 && (r.grad[1] + 0.5f64).abs() < 1e-15);
    }

    #[test]
    fn logdet_term_tracks_singular_values() {
        // scaling a diagonal flow by c changes the loss at x = 0 by exactly −d·log c
        let base = nf_loss(&Flow::<f64>::identity(3), &[vec![0.0; 3]], Precision::F64).value;
        for c in [0.5f64, 3.0, 10.0] {
            let f = Flow::new(3, vec![Block::ActNorm(ActNorm::new(vec![c; 3], vec![0.0; 3]).unwrap())]).unwrap();
            let v = nf_loss(&f, &[vec![0.0; 3]], Precision::F64).value;
            assert!((v - base + 3.0 * c.ln()).abs() < 1e-13);
        }
    }

    fn fd_check(flow: &Flow<f64>, batch: &[Vec<f64>], loss: &dyn OutputLoss<f64>) {
        let r = mean_loss(flow, batch, loss, Precision::F64);
        let p = flow.params();
        let h = 1e-6;
        for k in 0..p.len() {
            let mut f = flow.clone();
            let mut q = p.clone();
            q[k] += h;
            f.set_params(&q);
            let up = mean_loss(&f, batch, loss, Precision::F64).value;
            q[k] -= 2.0 * h;
            f.set_params(&q);
            let dn = mean_loss(&f, batch, loss, Precision::F64).value;
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - r.grad[k]).abs() <= 1e-4 * r.grad[k].abs().max(1e-3), "param {k}: fd {fd} vs {}", r.grad[k]);
        }
    }

    #[test]
    fn nf_gradient_matches_finite_differences() {
        let mut rng = Rng::new(3, 0);
        let f: Flow<f64> = random_flow(&mut rng, 3, 4);
        let batch: Vec<Vec<f64>> = (0..4).map(|_| rng.normal_vec(3)).collect();
        fd_check(&f, &batch, &NfLoss);
    }

    #[test]
    fn regression_gradient_matches_finite_differences() {
        let mut rng = Rng::new(4, 0);
        let f: Flow<f64> = random_flow(&mut rng, 2, 4);
        let batch: Vec<Vec<f64>> = (0..4).map(|_| rng.normal_vec(2)).collect();
        let targets: Vec<Vec<f64>> = (0..4).map(|_| rng.normal_vec(2)).collect();
        fd_check(&f, &batch, &RegressionLoss { targets: &targets, nf_coeff: 0.3 });
    }

    #[test]
    fn bits_per_dim() {
        assert!((NfLoss::bpd(2.0 * LN_2, 2) - 1.0).abs() < 1e-15);
    }
}
