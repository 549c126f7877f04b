use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numerics::{Matrix, Rng, Scalar};

/// `y = scale ⊙ x + shift` with every `scale_i ≠ 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActNorm<T> {
    pub scale: Vec<T>,
    pub shift: Vec<T>,
}

impl<T: Scalar> ActNorm<T> {
    pub fn new(scale: Vec<T>, shift: Vec<T>) -> Result<Self> {
        check_dim("actnorm shift", scale.len(), shift.len())?;
        if scale.iter().any(|&s| s == T::zero() || !s.is_finite()) {
            return Err(Error::InvalidConfig("actnorm scale entries must be finite and nonzero".into()));
        }
        Ok(ActNorm { scale, shift })
    }

    pub fn identity(dim: usize) -> Self {
        ActNorm { scale: vec![T::one(); dim], shift: vec![T::zero(); dim] }
    }

    /// Data-dependent initialization: standardizes each coordinate of `batch`.
    pub fn init_from_data(&mut self, batch: &[Vec<T>]) {
        if batch.is_empty() {
            return;
        }
        let n = T::lit(batch.len() as f64);
        for j in 0..self.scale.len() {
            let mean = batch.iter().map(|x| x[j]).fold(T::zero(), |a, b| a + b) / n;
            let var = batch.iter().map(|x| (x[j] - mean) * (x[j] - mean)).fold(T::zero(), |a, b| a + b) / n;
            let std = var.sqrt().max(T::lit(1e-6));
            self.scale[j] = T::one() / std;
            self.shift[j] = -mean / std;
        }
    }

    pub fn log_det(&self) -> T {
        self.scale.iter().map(|s| s.abs().ln()).fold(T::zero(), |a, b| a + b)
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        (0..x.len()).map(|i| self.scale[i] * x[i] + self.shift[i]).collect()
    }

    pub fn inverse(&self, y: &[T]) -> Vec<T> {
        (0..y.len()).map(|i| (y[i] - self.shift[i]) / self.scale[i]).collect()
    }

    /// Parameter layout: `scale`, then `shift`.
    pub fn vjp(&self, x: &[T], ybar: &[T], lambda: T, grad: &mut [T]) -> Vec<T> {
        let d = x.len();
        for i in 0..d {
            grad[i] = grad[i] + ybar[i] * x[i] + lambda / self.scale[i];
            grad[d + i] = grad[d + i] + ybar[i];
        }
        (0..d).map(|i| ybar[i] * self.scale[i]).collect()
    }

    /// `x` is the inverse's output.
    pub fn inverse_vjp(&self, x: &[T], xbar: &[T], grad: &mut [T]) -> Vec<T> {
        let d = x.len();
        let ybar: Vec<T> = (0..d).map(|i| xbar[i] / self.scale[i]).collect();
        for i in 0..d {
            grad[i] = grad[i] - ybar[i] * x[i];
            grad[d + i] = grad[d + i] - ybar[i];
        }
        ybar
    }
}

/// `y_i = x_{perm_i}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    perm: Vec<usize>,
}

impl Permutation {
    pub fn new(perm: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            if p >= perm.len() || seen[p] {
                return Err(Error::InvalidConfig(format!("{perm:?} is not a permutation")));
            }
            seen[p] = true;
        }
        Ok(Permutation { perm })
    }

    pub fn reverse(dim: usize) -> Self {
        Permutation { perm: (0..dim).rev().collect() }
    }

    pub fn shuffle(rng: &mut Rng, dim: usize) -> Self {
        let mut perm: Vec<usize> = (0..dim).collect();
        rng.shuffle(&mut perm);
        Permutation { perm }
    }

    pub fn indices(&self) -> &[usize] {
        &self.perm
    }

    pub fn apply<T: Copy>(&self, x: &[T]) -> Vec<T> {
        self.perm.iter().map(|&p| x[p]).collect()
    }

    pub fn apply_inverse<T: Copy + Default>(&self, y: &[T]) -> Vec<T> {
        let mut x = vec![T::default(); y.len()];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = y[i];
        }
        x
    }
}

/// `W = P·L·(U + diag(exp(log_s)))` with `L` unit lower triangular and `U` strictly upper
/// triangular. Entries outside the strict triangles of `lower`/`upper` are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearLu<T> {
    pub perm: Permutation,
    pub lower: Matrix<T>,
    pub upper: Matrix<T>,
    pub log_s: Vec<T>,
}

impl<T: Scalar> LinearLu<T> {
    pub fn new(perm: Permutation, lower: Matrix<T>, upper: Matrix<T>, log_s: Vec<T>) -> Result<Self> {
        let d = log_s.len();
        check_dim("linear-lu permutation", d, perm.indices().len())?;
        if lower.dims() != (d, d) || upper.dims() != (d, d) {
            return Err(Error::DimensionMismatch { context: "linear-lu factors".into(), expected: d, got: lower.rows() });
        }
        Ok(LinearLu { perm, lower, upper, log_s })
    }

    pub fn identity(dim: usize) -> Self {
        LinearLu {
            perm: Permutation::new((0..dim).collect()).expect("identity permutation"),
            lower: Matrix::zeros(dim, dim),
            upper: Matrix::zeros(dim, dim),
            log_s: vec![T::zero(); dim],
        }
    }

    /// Random factors with entries `N(0, scale²)` and a shuffled permutation.
    pub fn random(rng: &mut Rng, dim: usize, scale: f64) -> Self {
        let perm = Permutation::shuffle(rng, dim);
        let lower = Matrix::from_fn(dim, dim, |i, j| if j < i { T::lit(scale * rng.normal()) } else { T::zero() });
        let upper = Matrix::from_fn(dim, dim, |i, j| if j > i { T::lit(scale * rng.normal()) } else { T::zero() });
        let log_s = (0..dim).map(|_| T::lit(scale * rng.normal())).collect();
        LinearLu { perm, lower, upper, log_s }
    }

    pub fn dim(&self) -> usize {
        self.log_s.len()
    }

    pub fn num_params(&self) -> usize {
        let d = self.dim();
        d * (d - 1) + d
    }

    /// Layout: strict lower triangle row-major, strict upper triangle row-major, `log_s`.
    pub fn write_params(&self, out: &mut [T]) {
        let d = self.dim();
        let mut k = 0;
        for i in 0..d {
            for j in 0..i {
                out[k] = self.lower[(i, j)];
                k += 1;
            }
        }
        for i in 0..d {
            for j in i + 1..d {
                out[k] = self.upper[(i, j)];
                k += 1;
            }
        }
        out[k..k + d].copy_from_slice(&self.log_s);
    }

    pub fn read_params(&mut self, src: &[T]) {
        let d = self.dim();
        let mut k = 0;
        for i in 0..d {
            for j in 0..i {
                self.lower.as_mut_slice()[i * d + j] = src[k];
                k += 1;
            }
        }
        for i in 0..d {
            for j in i + 1..d {
                self.upper.as_mut_slice()[i * d + j] = src[k];
                k += 1;
            }
        }
        self.log_s.copy_from_slice(&src[k..k + d]);
    }

    pub fn log_det(&self) -> T {
        self.log_s.iter().fold(T::zero(), |a, &b| a + b)
    }

    /// The assembled matrix `W`.
    pub fn weight(&self) -> Matrix<T> {
        let d = self.dim();
        let cols: Vec<Vec<T>> = (0..d)
            .map(|j| {
                let mut e = vec![T::zero(); d];
                e[j] = T::one();
                self.forward(&e).0
            })
            .collect();
        Matrix::from_columns(&cols)
    }

    /// Returns `y` and the intermediate `u = Ũx`.
    pub fn forward(&self, x: &[T]) -> (Vec<T>, Vec<T>) {
        let d = self.dim();
        let u: Vec<T> = (0..d)
            .map(|i| {
                let mut acc = self.log_s[i].exp() * x[i];
                for j in i + 1..d {
                    acc = acc + self.upper[(i, j)] * x[j];
                }
                acc
            })
            .collect();
        let w: Vec<T> = (0..d)
            .map(|i| {
                let mut acc = u[i];
                for j in 0..i {
                    acc = acc + self.lower[(i, j)] * u[j];
                }
                acc
            })
            .collect();
        (self.perm.apply(&w), u)
    }

    /// Returns `x` and the intermediate `u = L⁻¹Pᵀy`.
    pub fn inverse(&self, y: &[T]) -> (Vec<T>, Vec<T>) {
        let d = self.dim();
        let w = self.perm.apply_inverse(y);
        let mut u = vec![T::zero(); d];
        for i in 0..d {
            let mut acc = w[i];
            for j in 0..i {
                acc = acc - self.lower[(i, j)] * u[j];
            }
            u[i] = acc;
        }
        let mut x = vec![T::zero(); d];
        for i in (0..d).rev() {
            let mut acc = u[i];
            for j in i + 1..d {
                acc = acc - self.upper[(i, j)] * x[j];
            }
            x[i] = acc / self.log_s[i].exp();
        }
        (x, u)
    }

    fn grad_offsets(&self) -> (usize, usize) {
        let d = self.dim();
        let nl = d * (d - 1) / 2;
        (nl, 2 * nl)
    }

    pub fn vjp(&self, x: &[T], u: &[T], ybar: &[T], lambda: T, grad: &mut [T]) -> Vec<T> {
        let d = self.dim();
        let (uo, so) = self.grad_offsets();
        let wbar = self.perm.apply_inverse(ybar);
        let mut k = 0;
        for i in 0..d {
            for j in 0..i {
                grad[k] = grad[k] + wbar[i] * u[j];
                k += 1;
            }
        }
        let ubar: Vec<T> = (0..d)
            .map(|j| {
                let mut acc = wbar[j];
                for i in j + 1..d {
                    acc = acc + self.lower[(i, j)] * wbar[i];
                }
                acc
            })
            .collect();
        let mut k = uo;
        for i in 0..d {
            for j in i + 1..d {
                grad[k] = grad[k] + ubar[i] * x[j];
                k += 1;
            }
        }
        for i in 0..d {
            grad[so + i] = grad[so + i] + ubar[i] * x[i] * self.log_s[i].exp() + lambda;
        }
        (0..d)
            .map(|j| {
                let mut acc = self.log_s[j].exp() * ubar[j];
                for i in 0..j {
                    acc = acc + self.upper[(i, j)] * ubar[i];
                }
                acc
            })
            .collect()
    }

    /// `x`, `u` are the inverse's output and intermediate.
    pub fn inverse_vjp(&self, x: &[T], u: &[T], xbar: &[T], grad: &mut [T]) -> Vec<T> {
        let d = self.dim();
        let (uo, so) = self.grad_offsets();
        // ū = Ũ⁻ᵀ x̄ (Ũᵀ is lower triangular)
        let mut ubar = vec![T::zero(); d];
        for j in 0..d {
            let mut acc = xbar[j];
            for i in 0..j {
                acc = acc - self.upper[(i, j)] * ubar[i];
            }
            ubar[j] = acc / self.log_s[j].exp();
        }
        let mut k = uo;
        for i in 0..d {
            for j in i + 1..d {
                grad[k] = grad[k] - ubar[i] * x[j];
                k += 1;
            }
        }
        for i in 0..d {
            grad[so + i] = grad[so + i] - ubar[i] * x[i] * self.log_s[i].exp();
        }
        // w̄ = L⁻ᵀ ū (Lᵀ is unit upper triangular)
        let mut wbar = vec![T::zero(); d];
        for j in (0..d).rev() {
            let mut acc = ubar[j];
            for i in j + 1..d {
                acc = acc - self.lower[(i, j)] * wbar[i];
            }
            wbar[j] = acc;
        }
        let mut k = 0;
        for i in 0..d {
            for j in 0..i {
                grad[k] = grad[k] - wbar[i] * u[j];
                k += 1;
            }
        }
        self.perm.apply(&wbar)
    }
}
