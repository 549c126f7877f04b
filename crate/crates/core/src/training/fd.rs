use serde::{Deserialize, Serialize};

use crate::blocks::Flow;
use crate::error::{Error, Result};
use crate::numerics::{norm2, sample_unit_sphere, Precision, Rng, Scalar};

/// Finite-difference stability penalty `(1/ε)‖F(x) − F(x + εv)‖₂`, optionally also on the
/// inverse at `z = F(x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FdRegConfig {
    pub epsilon: f64,
    pub directions_per_example: usize,
    pub bidirectional: bool,
    /// Regularize on every `k`-th step only.
    pub apply_every_k: usize,
    pub coefficient: f64,
}

impl Default for FdRegConfig {
    fn default() -> Self {
        FdRegConfig { epsilon: 0.1, directions_per_example: 1, bidirectional: true, apply_every_k: 1, coefficient: 1.0 }
    }
}

impl FdRegConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!("fd epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.coefficient >= 0.0) {
            return Err(Error::InvalidConfig(format!("fd coefficient must be non-negative, got {}", self.coefficient)));
        }
        if self.directions_per_example == 0 || self.apply_every_k == 0 {
            return Err(Error::InvalidConfig("fd directions and apply_every_k must be at least 1".into()));
        }
        Ok(())
    }

    /// Whether `step` (0-based) carries the penalty.
    pub fn active_at(&self, step: usize) -> bool {
        step.is_multiple_of(self.apply_every_k)
    }
}

/// Penalty terms of one example.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdTerms {
    pub forward: f64,
    /// Zero when the penalty is one-directional.
    pub inverse: f64,
}

impl FdTerms {
    pub fn total(&self) -> f64 {
        self.forward + self.inverse
    }
}

fn unit<T: Scalar>(r: &[T]) -> Vec<T> {
    let n = norm2(r);
    if n == T::zero() {
        vec![T::zero(); r.len()]
    } else {
        r.iter().map(|&v| v / n).collect()
    }
}

/// Penalty at `x`, averaged over `directions_per_example` random unit directions.
/// With `grad`, also accumulates `coefficient · ∂penalty/∂θ`.
///
/// The inverse term differentiates `F⁻¹(F(x) + εv*)` through both maps and holds
/// `F⁻¹(F(x))` fixed, since it equals `x` for every `θ`.
pub fn fd_penalty_with_grad<T: Scalar>(
    flow: &Flow<T>,
    x: &[T],
    cfg: &FdRegConfig,
    rng: &mut Rng,
    precision: Precision,
    mut grad: Option<&mut [T]>,
) -> Result<FdTerms> {
    let eps = T::lit(cfg.epsilon);
    let inv_eps = T::lit(1.0 / cfg.epsilon);
    let k = cfg.directions_per_example;
    let w = T::lit(cfg.coefficient / k as f64);
    let d = flow.dim();
    let base = flow.forward(x, precision)?;
    let mut terms = FdTerms { forward: 0.0, inverse: 0.0 };
    let mut xbar_base = vec![T::zero(); d];
    for _ in 0..k {
        let v: Vec<T> = sample_unit_sphere(rng, d);
        let xp: Vec<T> = x.iter().zip(&v).map(|(&a, &b)| a + eps * b).collect();
        let moved = flow.forward(&xp, precision)?;
        let r: Vec<T> = base.z.iter().zip(&moved.z).map(|(&a, &b)| a - b).collect();
        terms.forward += (norm2(&r) * inv_eps).to_f64_lossless();
        if let Some(g) = grad.as_deref_mut() {
            let dir: Vec<T> = unit(&r).into_iter().map(|u| u * inv_eps * w).collect();
            let neg: Vec<T> = dir.iter().map(|&u| -u).collect();
            flow.backward(&base, &dir, T::zero(), g);
            flow.backward(&moved, &neg, T::zero(), g);
        }
        if cfg.bidirectional {
            let vs: Vec<T> = sample_unit_sphere(rng, d);
            let back = flow.inverse(&base.z, precision)?;
            let zp: Vec<T> = base.z.iter().zip(&vs).map(|(&a, &b)| a + eps * b).collect();
            let inv = flow.inverse_pass(&zp, precision)?;
            let r: Vec<T> = back.iter().zip(&inv.x).map(|(&a, &b)| a - b).collect();
            terms.inverse += (norm2(&r) * inv_eps).to_f64_lossless();
            if let Some(g) = grad.as_deref_mut() {
                let xbar: Vec<T> = unit(&r).into_iter().map(|u| -u * inv_eps * w).collect();
                // dz/dθ enters through F(x)
                let zbar = flow.inverse_backward(&inv, &xbar, g);
                for (a, b) in xbar_base.iter_mut().zip(&zbar) {
                    *a = *a + *b;
                }
            }
        }
    }
    if let Some(g) = grad {
        if cfg.bidirectional {
            flow.backward(&base, &xbar_base, T::zero(), g);
        }
    }
    let kf = k as f64;
    terms.forward /= kf;
    terms.inverse /= kf;
    if !terms.total().is_finite() {
        return Err(Error::non_finite("fd penalty"));
    }
    Ok(terms)
}

/// Forward term `(1/ε)‖F(x) − F(x + εv)‖₂` for a fixed direction.
pub fn fd_forward_term<T: Scalar>(flow: &Flow<T>, x: &[T], v: &[T], epsilon: f64) -> Result<f64> {
    let eps = T::lit(epsilon);
    let xp: Vec<T> = x.iter().zip(v).map(|(&a, &b)| a + eps * b).collect();
    let (z0, _) = flow.eval(x, Precision::F64)?;
    let (z1, _) = flow.eval(&xp, Precision::F64)?;
    let r: Vec<T> = z0.iter().zip(&z1).map(|(&a, &b)| a - b).collect();
    Ok(norm2(&r).to_f64_lossless() / epsilon)
}

/// Penalty value at `x`.
pub fn fd_penalty<T: Scalar>(flow: &Flow<T>, x: &[T], cfg: &FdRegConfig, rng: &mut Rng) -> Result<f64> {
    Ok(fd_penalty_with_grad(flow, x, cfg, rng, Precision::F64, None)?.total())
}

/// Batch-mean penalty and `coefficient ·` its gradient. Every example draws its
/// directions from its own stream split off `rng`, so the result is independent of
/// evaluation order.
pub fn fd_batch<T: Scalar>(
    flow: &Flow<T>,
    batch: &[Vec<T>],
    cfg: &FdRegConfig,
    rng: &mut Rng,
    precision: Precision,
) -> Result<(f64, Vec<T>)> {
    use rayon::prelude::*;
    let n = flow.num_params();
    let base = Rng::new((rng.uniform() * (1u64 << 53) as f64) as u64, 0xfd);
    let parts: Vec<Result<(f64, Vec<T>)>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let mut r = base.split(i as u64);
            let mut g = vec![T::zero(); n];
            let t = fd_penalty_with_grad(flow, x, cfg, &mut r, precision, Some(&mut g))?;
            Ok((t.total(), g))
        })
        .collect();
    let inv = T::lit(1.0 / batch.len().max(1) as f64);
    let mut total = 0.0;
    let mut grad = vec![T::zero(); n];
    for p in parts {
        let (v, g) = p?;
        total += v;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a = *a + *b * inv;
        }
    }
    Ok((total / batch.len().max(1) as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::{random_flow, ActNorm, Block};

    #[test]
    fn identity_forward_term_is_one() {
        let mut rng = Rng::new(1, 0);
        let cfg = FdRegConfig { bidirectional: false, ..Default::default() };
        for _ in 0..10 {
            let v = fd_penalty(&Flow::<f64>::identity(3), &[0.3, -1.0, 2.0], &cfg, &mut rng).unwrap();
            assert!((v - 1.0).abs() < 1e-14);
        }
        let both = fd_penalty(&Flow::<f64>::identity(3), &[0.3, -1.0, 2.0], &FdRegConfig::default(), &mut rng).unwrap();
        assert!((both - 2.0).abs() < 1e-14);
    }

    #[test]
    fn actnorm_along_first_axis() {
        let f = Flow::new(2, vec![Block::ActNorm(ActNorm::new(vec![2.0, 1.0], vec![0.0, 0.0]).unwrap())]).unwrap();
        let cfg = FdRegConfig { bidirectional: false, ..Default::default() };
        let mut rng = Rng::new(2, 0);
        // the forward term for direction v is ‖diag(2,1)·v‖, which is 2 at v = e₁
        for _ in 0..20 {
            let v = fd_penalty(&f, &[0.5, 0.5], &cfg, &mut rng).unwrap();
            assert!((1.0 - 1e-12..=2.0 + 1e-12).contains(&v));
        }
        let t = fd_forward_term(&f, &[0.5, 0.5], &[1.0, 0.0], 0.1).unwrap();
        assert!((t - 2.0).abs() < 1e-12);
    }

    #[test]
    fn converges_to_directional_derivative() {
        let mut rng = Rng::new(8, 0);
        let f: Flow<f64> = random_flow(&mut rng, 3, 6);
        let x: Vec<f64> = rng.normal_vec(3);
        let cfg = |eps| FdRegConfig { epsilon: eps, bidirectional: false, ..Default::default() };
        let mut errs = Vec::new();
        for eps in [1e-3, 1e-2, 1e-1] {
            // same direction for every ε
            let mut r = Rng::new(99, 0);
            let p = fd_penalty(&f, &x, &cfg(eps), &mut r).unwrap();
            let mut r = Rng::new(99, 0);
            let v: Vec<f64> = sample_unit_sphere(&mut r, 3);
            let jv = norm2(&f.jvp(&x, &v).1);
            errs.push((p - jv).abs());
        }
        let slope = (errs[2].ln() - errs[0].ln()) / (1e-1f64.ln() - 1e-3f64.ln());
        assert!((0.8..=1.2).contains(&slope), "slope {slope}, errors {errs:?}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Rng::new(5, 0);
        let f: Flow<f64> = random_flow(&mut rng, 2, 4);
        let x: Vec<f64> = rng.normal_vec(2);
        let cfg = FdRegConfig { coefficient: 0.7, ..Default::default() };
        let mut g = vec![0.0; f.num_params()];
        fd_penalty_with_grad(&f, &x, &cfg, &mut Rng::new(7, 0), Precision::F64, Some(&mut g)).unwrap();
        let p = f.params();
        let h = 1e-6;
        for k in 0..p.len() {
            let eval = |delta: f64| {
                let mut q = p.clone();
                q[k] += delta;
                let mut ff = f.clone();
                ff.set_params(&q);
                0.7 * fd_penalty(&ff, &x, &cfg, &mut Rng::new(7, 0)).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!((fd - g[k]).abs() <= 1e-4 * g[k].abs().max(1e-2), "param {k}: fd {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn config_validation() {
        assert!(FdRegConfig::default().validate().is_ok());
        assert!(FdRegConfig { epsilon: 0.0, ..Default::default() }.validate().is_err());
        assert!(FdRegConfig { coefficient: -1.0, ..Default::default() }.validate().is_err());
        let c = FdRegConfig { apply_every_k: 5, ..Default::default() };
        assert!(c.active_at(0) && c.active_at(5) && !c.active_at(3));
    }
}
