use serde::{Deserialize, Serialize};

use crate::blocks::Flow;
use crate::error::{Error, Result};
use crate::numerics::scalar::cast_vec;
use crate::numerics::{norm2, Precision, Scalar};

/// Projected sign-gradient ascent within an `ℓ∞` ball.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub radius: f64,
    pub step: f64,
    pub iterations: usize,
    /// Pipeline precision of the reconstruction being attacked.
    pub precision: Precision,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig { radius: 0.1, step: 5e-4, iterations: 200, precision: Precision::F32 }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.step > 0.0 && self.iterations > 0) {
            return Err(Error::InvalidConfig("attack radius, step and iterations must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    /// Final iterate.
    pub x: Vec<f64>,
    /// Objective at the start and after every step; ends early at a non-finite value.
    pub curve: Vec<f64>,
    /// The objective became non-finite.
    pub exploded: bool,
}

impl AttackResult {
    pub fn start(&self) -> f64 {
        self.curve[0]
    }

    pub fn max(&self) -> f64 {
        self.curve.iter().copied().fold(f64::NEG_INFINITY, |m, v| if v.is_nan() { f64::INFINITY } else { m.max(v) })
    }

    pub fn last(&self) -> f64 {
        *self.curve.last().expect("curve holds the start value")
    }
}

/// Generic projected sign ascent: `x ← Π(x + α·sign ∇L(x))` with `Π` the projection onto
/// `‖x − x₀‖∞ ≤ radius`. `objective` returns `(L, ∇L)`; a non-finite `L` stops the run.
pub fn pgd_sign(x0: &[f64], cfg: &AttackConfig, mut objective: impl FnMut(&[f64]) -> (f64, Vec<f64>)) -> AttackResult {
    let mut x = x0.to_vec();
    let (mut val, mut grad) = objective(&x);
    let mut curve = vec![val];
    for _ in 0..cfg.iterations {
        if !val.is_finite() {
            return AttackResult { x, curve, exploded: true };
        }
        for i in 0..x.len() {
            let s = if grad[i] > 0.0 {
                1.0
            } else if grad[i] < 0.0 {
                -1.0
            } else {
                0.0
            };
            x[i] = (x[i] + cfg.step * s).clamp(x0[i] - cfg.radius, x0[i] + cfg.radius);
        }
        (val, grad) = objective(&x);
        curve.push(val);
    }
    let exploded = !val.is_finite();
    AttackResult { x, curve, exploded }
}

/// `‖x − F⁻¹(F(x))‖₂` with both passes at `precision`, and its gradient from binary64 vjps
/// through the cached forward and inverse passes, rounding treated as the identity.
pub fn recon_objective<T: Scalar>(flow: &Flow<T>, x: &[f64], precision: Precision) -> (f64, Vec<f64>) {
    let d = x.len();
    let xt: Vec<T> = cast_vec(x);
    let nan = (f64::NAN, vec![0.0; d]);
    let Ok(fwd) = flow.forward(&xt, precision) else { return nan };
    let Ok(inv) = flow.inverse_pass(&fwd.z, precision) else { return nan };
    let r: Vec<f64> = x.iter().zip(&inv.x).map(|(a, b)| a - b.to_f64_lossless()).collect();
    let l = norm2(&r);
    if !l.is_finite() {
        return nan;
    }
    if l == 0.0 {
        return (0.0, vec![0.0; d]);
    }
    let u: Vec<T> = r.iter().map(|v| T::lit(v / l)).collect();
    let mut scratch = vec![T::zero(); flow.num_params()];
    // L depends on x directly and through −F⁻¹(F(x))
    let neg: Vec<T> = u.iter().map(|&v| -v).collect();
    let zbar = flow.inverse_backward(&inv, &neg, &mut scratch);
    let xbar = flow.backward(&fwd, &zbar, T::zero(), &mut scratch);
    let g = u.iter().zip(&xbar).map(|(a, b)| (*a + *b).to_f64_lossless()).collect();
    (l, g)
}

/// Maximizes the reconstruction error of `flow` around `x0`.
pub fn invertibility_attack<T: Scalar>(flow: &Flow<T>, x0: &[f64], cfg: &AttackConfig) -> Result<AttackResult> {
    cfg.validate()?;
    Ok(pgd_sign(x0, cfg, |x| recon_objective(flow, x, cfg.precision)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::affine_chain;

    #[test]
    fn identity_flow_has_zero_objective_in_f64() {
        let cfg = AttackConfig { precision: Precision::F64, ..Default::default() };
        let r = invertibility_attack(&Flow::<f64>::identity(2), &[0.3, 0.7], &cfg).unwrap();
        assert!(r.curve.iter().all(|&v| v == 0.0));
        assert_eq!(r.curve.len(), 201);
    }

    #[test]
    fn identity_flow_in_f32_only_sees_input_rounding() {
        let r = invertibility_attack(&Flow::<f64>::identity(2), &[0.3, 0.7], &AttackConfig::default()).unwrap();
        assert!(r.max() < 1e-7);
        assert!(r.x.iter().zip([0.3, 0.7]).all(|(a, b)| (a - b).abs() <= 0.1 + 1e-12));
    }

    #[test]
    fn linear_objective_walks_to_the_boundary() {
        let c = [1.0, -2.0, 0.0];
        let cfg = AttackConfig { radius: 0.01, step: 1e-3, iterations: 30, precision: Precision::F64 };
        let x0 = [0.5, 0.5, 0.5];
        let r = pgd_sign(&x0, &cfg, |x| (c.iter().zip(x).map(|(a, b)| a * b).sum(), c.to_vec()));
        assert!((r.curve[1] - r.curve[0] - 3e-3).abs() < 1e-12);
        assert!((r.x[0] - 0.51).abs() < 1e-12 && (r.x[1] - 0.49).abs() < 1e-12 && r.x[2] == 0.5);
        assert!(r.curve.windows(2).take(10).all(|w| w[1] > w[0]));
    }

    #[test]
    fn iterates_stay_in_ball() {
        let f = affine_chain::<f64>(10, 0.123456789, 0.1);
        let cfg = AttackConfig { iterations: 50, ..Default::default() };
        let x0 = [1.0, 1.0];
        let mut xs = Vec::new();
        pgd_sign(&x0, &cfg, |x| {
            xs.push(x.to_vec());
            recon_objective(&f, x, cfg.precision)
        });
        for x in xs {
            assert!(x.iter().zip(&x0).all(|(a, b)| (a - b).abs() <= cfg.radius + 1e-12));
        }
    }

    #[test]
    fn objective_gradient_vanishes_in_exact_arithmetic() {
        let f = affine_chain::<f64>(3, 0.5, 0.5);
        let (l, g) = recon_objective(&f, &[0.25, 0.75], Precision::F64);
        assert!(l < 1e-14);
        assert!(g.iter().all(|v| v.abs() <= 1.0 + 1e-9));
    }
}
