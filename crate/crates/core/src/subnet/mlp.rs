//! Fully connected networks used as the non-invertible inner functions of coupling and
//! residual blocks, with hand-written reverse mode, forward tangents, and a second-order
//! pass for gradients of Jacobian functionals.

use serde::{Deserialize, Serialize};

use super::activation::Activation;
use super::interval::Interval;
use crate::error::{check_dim, Error, Result};
use crate::numerics::{power_iter_warm, spectral_norm_power_iter, svd, Matrix, Rng, Scalar};

/// One affine layer followed by an activation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense<T> {
    /// `out × in`.
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

impl<T: Scalar> Dense<T> {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn num_params(&self) -> usize {
        self.weight.rows() * self.weight.cols() + self.bias.len()
    }

    fn pre_activation(&self, a: &[T]) -> Vec<T> {
        let mut z = self.weight.matvec(a);
        for (zi, &b) in z.iter_mut().zip(&self.bias) {
            *zi = *zi + b;
        }
        z
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T> {
    layers: Vec<Dense<T>>,
}

/// Per-layer inputs and pre-activations of one forward pass.
#[derive(Clone, Debug)]
pub struct MlpCache<T> {
    inputs: Vec<Vec<T>>,
    pre: Vec<Vec<T>>,
}

/// Forward pass carrying `k` tangent directions; enough to back-propagate through the
/// Jacobian columns as well as the output.
#[derive(Clone, Debug)]
pub struct TangentCache<T> {
    inputs: Vec<Vec<T>>,
    pre: Vec<Vec<T>>,
    input_tangents: Vec<Vec<Vec<T>>>,
    pre_tangents: Vec<Vec<Vec<T>>>,
}

impl<T: Scalar> Mlp<T> {
    pub fn new(layers: Vec<Dense<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("an MLP needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            check_dim("layer bias", l.out_dim(), l.bias.len())?;
            if i > 0 {
                check_dim("consecutive layer dims", layers[i - 1].out_dim(), l.in_dim())?;
            }
        }
        Ok(Mlp { layers })
    }

    /// Random MLP with layer widths `dims = [in, h1, …, out]`. Hidden layers use
    /// `activation`, the output layer is linear. Weights are `N(0, 1/fan_in)`, biases zero.
    /// With `zero_last` the output layer is all zeros, so the network is identically zero.
    pub fn init(rng: &mut Rng, dims: &[usize], activation: Activation, zero_last: bool) -> Self {
        assert!(dims.len() >= 2, "need input and output widths");
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|l| {
                let (fan_in, fan_out) = (dims[l], dims[l + 1]);
                let last = l + 1 == n;
                let std = (1.0 / fan_in as f64).sqrt();
                let weight = if last && zero_last {
                    Matrix::zeros(fan_out, fan_in)
                } else {
                    Matrix::from_fn(fan_out, fan_in, |_, _| T::lit(std * rng.normal()))
                };
                Dense {
                    weight,
                    bias: vec![T::zero(); fan_out],
                    activation: if last { Activation::Identity } else { activation },
                }
            })
            .collect();
        Mlp { layers }
    }

    /// `x ↦ value` for every `x`: one linear layer with zero weights.
    pub fn constant(in_dim: usize, value: &[T]) -> Self {
        Mlp {
            layers: vec![Dense {
                weight: Matrix::zeros(value.len(), in_dim),
                bias: value.to_vec(),
                activation: Activation::Identity,
            }],
        }
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<T>] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }

    /// Copies parameters into `out` (per layer: weight row-major, then bias).
    pub fn write_params(&self, out: &mut [T]) {
        let mut k = 0;
        for l in &self.layers {
            let w = l.weight.as_slice();
            out[k..k + w.len()].copy_from_slice(w);
            k += w.len();
            out[k..k + l.bias.len()].copy_from_slice(&l.bias);
            k += l.bias.len();
        }
    }

    pub fn read_params(&mut self, src: &[T]) {
        let mut k = 0;
        for l in &mut self.layers {
            let w = l.weight.as_mut_slice();
            let n = w.len();
            w.copy_from_slice(&src[k..k + n]);
            k += n;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&src[k..k + nb]);
            k += nb;
        }
    }

    pub fn eval(&self, x: &[T]) -> Vec<T> {
        let mut a = x.to_vec();
        for l in &self.layers {
            let z = l.pre_activation(&a);
            a = z.into_iter().map(|v| l.activation.apply(v)).collect();
        }
        a
    }

    pub fn forward(&self, x: &[T]) -> (Vec<T>, MlpCache<T>) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.to_vec();
        for l in &self.layers {
            let z = l.pre_activation(&a);
            let next: Vec<T> = z.iter().map(|&v| l.activation.apply(v)).collect();
            inputs.push(a);
            pre.push(z);
            a = next;
        }
        (a, MlpCache { inputs, pre })
    }

    /// Reverse mode: returns `Jᵀ grad_out` and accumulates parameter gradients into
    /// `grad_params` (same layout as [`Mlp::write_params`]).
    pub fn vjp(&self, cache: &MlpCache<T>, grad_out: &[T], grad_params: &mut [T]) -> Vec<T> {
        let offsets = self.offsets();
        let mut abar = grad_out.to_vec();
        for (li, l) in self.layers.iter().enumerate().rev() {
            let z = &cache.pre[li];
            let zbar: Vec<T> = abar.iter().zip(z).map(|(&g, &zi)| g * l.activation.derivative(zi)).collect();
            let (wo, bo) = offsets[li];
            let cols = l.in_dim();
            let a = &cache.inputs[li];
            for (i, &zb) in zbar.iter().enumerate() {
                if zb == T::zero() {
                    continue;
                }
                let row = &mut grad_params[wo + i * cols..wo + (i + 1) * cols];
                for (g, &aj) in row.iter_mut().zip(a) {
                    *g = *g + zb * aj;
                }
                grad_params[bo + i] = grad_params[bo + i] + zb;
            }
            abar = l.weight.matvec_t(&zbar);
        }
        abar
    }

    /// Forward-mode Jacobian-vector product.
    pub fn jvp(&self, x: &[T], v: &[T]) -> (Vec<T>, Vec<T>) {
        let mut a = x.to_vec();
        let mut t = v.to_vec();
        for l in &self.layers {
            let z = l.pre_activation(&a);
            let zt = l.weight.matvec(&t);
            t = zt.iter().zip(&z).map(|(&d, &zi)| d * l.activation.derivative(zi)).collect();
            a = z.into_iter().map(|zi| l.activation.apply(zi)).collect();
        }
        (a, t)
    }

    /// Dense Jacobian `out × in` at `x`.
    pub fn jacobian(&self, x: &[T]) -> Matrix<T> {
        let n = self.in_dim();
        let cols: Vec<Vec<T>> = (0..n)
            .map(|j| {
                let mut e = vec![T::zero(); n];
                e[j] = T::one();
                self.jvp(x, &e).1
            })
            .collect();
        Matrix::from_columns(&cols)
    }

    /// Forward pass propagating the given tangent directions alongside the value.
    /// Returns the output, the output tangents and a cache for [`Mlp::tangent_vjp`].
    pub fn forward_tangents(&self, x: &[T], tangents: Vec<Vec<T>>) -> (Vec<T>, Vec<Vec<T>>, TangentCache<T>) {
        let n = self.layers.len();
        let mut cache = TangentCache {
            inputs: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
            input_tangents: Vec::with_capacity(n),
            pre_tangents: Vec::with_capacity(n),
        };
        let mut a = x.to_vec();
        let mut ts = tangents;
        for l in &self.layers {
            let z = l.pre_activation(&a);
            let zts: Vec<Vec<T>> = ts.iter().map(|t| l.weight.matvec(t)).collect();
            let d: Vec<T> = z.iter().map(|&zi| l.activation.derivative(zi)).collect();
            let next_ts: Vec<Vec<T>> = zts
                .iter()
                .map(|zt| zt.iter().zip(&d).map(|(&u, &di)| u * di).collect())
                .collect();
            let next_a: Vec<T> = z.iter().map(|&zi| l.activation.apply(zi)).collect();
            cache.inputs.push(a);
            cache.pre.push(z);
            cache.input_tangents.push(ts);
            cache.pre_tangents.push(zts);
            a = next_a;
            ts = next_ts;
        }
        (a, ts, cache)
    }

    /// Reverse pass through [`Mlp::forward_tangents`]: given cotangents for the output and
    /// for each output tangent, accumulates parameter gradients and returns the input
    /// gradient (the input tangents are treated as constants).
    pub fn tangent_vjp(
        &self,
        cache: &TangentCache<T>,
        grad_out: &[T],
        grad_tangents: &[Vec<T>],
        grad_params: &mut [T],
    ) -> Vec<T> {
        let offsets = self.offsets();
        let mut abar = grad_out.to_vec();
        let mut tbars: Vec<Vec<T>> = grad_tangents.to_vec();
        for (li, l) in self.layers.iter().enumerate().rev() {
            let z = &cache.pre[li];
            let zts = &cache.pre_tangents[li];
            let d1: Vec<T> = z.iter().map(|&zi| l.activation.derivative(zi)).collect();
            let d2: Vec<T> = z.iter().map(|&zi| l.activation.second_derivative(zi)).collect();
            let mut zbar: Vec<T> = abar.iter().zip(&d1).map(|(&g, &d)| g * d).collect();
            let ztbars: Vec<Vec<T>> = tbars
                .iter()
                .map(|tb| tb.iter().zip(&d1).map(|(&g, &d)| g * d).collect())
                .collect();
            for (tb, zt) in tbars.iter().zip(zts) {
                for i in 0..zbar.len() {
                    zbar[i] = zbar[i] + d2[i] * zt[i] * tb[i];
                }
            }
            let (wo, bo) = offsets[li];
            let cols = l.in_dim();
            let a = &cache.inputs[li];
            let ats = &cache.input_tangents[li];
            for i in 0..l.out_dim() {
                let row = &mut grad_params[wo + i * cols..wo + (i + 1) * cols];
                let zb = zbar[i];
                if zb != T::zero() {
                    for (g, &aj) in row.iter_mut().zip(a) {
                        *g = *g + zb * aj;
                    }
                }
                for (ztb, at) in ztbars.iter().zip(ats) {
                    let c = ztb[i];
                    if c == T::zero() {
                        continue;
                    }
                    for (g, &aj) in row.iter_mut().zip(at) {
                        *g = *g + c * aj;
                    }
                }
                grad_params[bo + i] = grad_params[bo + i] + zb;
            }
            abar = l.weight.matvec_t(&zbar);
            tbars = ztbars.iter().map(|ztb| l.weight.matvec_t(ztb)).collect();
        }
        abar
    }

    fn offsets(&self) -> Vec<(usize, usize)> {
        let mut k = 0;
        self.layers
            .iter()
            .map(|l| {
                let w = k;
                let b = k + l.weight.rows() * l.weight.cols();
                k = b + l.bias.len();
                (w, b)
            })
            .collect()
    }

    /// Upper bound on the Lipschitz constant: product of per-layer spectral norms and
    /// activation Lipschitz constants.
    pub fn lip_upper_bound(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| layer_spectral_upper(&l.weight) * l.activation.lipschitz())
            .product()
    }

    /// Rescales layers so each has spectral norm at most `(coeff / Π Lip(act))^(1/L)`;
    /// layers already below the target are left untouched.
    pub fn spectral_normalize(&self, coeff: f64) -> Mlp<T> {
        assert!(coeff > 0.0 && coeff <= 1.0, "coefficient must lie in (0, 1]");
        let target = self.per_layer_target(coeff);
        let mut out = self.clone();
        for l in &mut out.layers {
            let sigma = layer_spectral_upper(&l.weight);
            if sigma > target {
                l.weight = l.weight.scale(T::lit(target / sigma));
            }
        }
        out
    }

    /// Spectral normalization with warm-started power iteration, for use inside training
    /// loops. `state` holds one right-singular-vector estimate per layer.
    pub fn spectral_normalize_in_place(&mut self, coeff: f64, state: &mut Vec<Vec<T>>, iters: usize) {
        let target = self.per_layer_target(coeff);
        state.resize(self.layers.len(), Vec::new());
        for (l, v) in self.layers.iter_mut().zip(state.iter_mut()) {
            let (sigma, _) = power_iter_warm(&l.weight, v, iters, T::lit(1e-7));
            let sigma = sigma.to_f64_lossless();
            if sigma > target {
                l.weight = l.weight.scale(T::lit(target / sigma));
            }
        }
    }

    fn per_layer_target(&self, coeff: f64) -> f64 {
        let act: f64 = self.layers.iter().map(|l| l.activation.lipschitz()).product();
        (coeff / act).powf(1.0 / self.layers.len() as f64)
    }

    /// Interval enclosure of the outputs over an input box (center-radius propagation).
    pub fn output_box(&self, input: &[Interval]) -> Vec<Interval> {
        let mut cur: Vec<Interval> = input.to_vec();
        for l in &self.layers {
            let mut next = Vec::with_capacity(l.out_dim());
            for i in 0..l.out_dim() {
                let row = l.weight.row(i);
                let mut acc = Interval::point(l.bias[i].to_f64_lossless());
                for (&w, x) in row.iter().zip(&cur) {
                    let w = w.to_f64_lossless();
                    if w != 0.0 {
                        acc = acc + x.scale(w);
                    }
                }
                next.push(l.activation.interval(acc));
            }
            cur = next;
        }
        cur
    }

    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weight: l.weight.cast(),
                    bias: crate::numerics::scalar::cast_vec(&l.bias),
                    activation: l.activation,
                })
                .collect(),
        }
    }

    pub fn has_nonfinite(&self) -> bool {
        self.layers
            .iter()
            .any(|l| l.weight.has_nonfinite() || crate::numerics::has_nonfinite(&l.bias))
    }
}

/// Spectral norm used by the bound calculators: converged power iteration, falling back to
/// the SVD, widened by a relative 1e-9 to absorb the iteration's residual error.
fn layer_spectral_upper<T: Scalar>(w: &Matrix<T>) -> f64 {
    let w64: Matrix<f64> = w.cast();
    let sigma = match spectral_norm_power_iter(&w64, 20_000, 1e-13) {
        Ok(s) => s,
        Err(_) => svd(&w64).map(|s| s.max()).unwrap_or(f64::INFINITY),
    };
    sigma * (1.0 + 1e-9)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn hand_net() -> Mlp<f64> {
        Mlp::new(vec![
            Dense {
                weight: Matrix::identity(2),
                bias: vec![0.0, 0.0],
                activation: Activation::Relu,
            },
            Dense {
                weight: Matrix::from_rows(&[vec![1.0, 1.0]]),
                bias: vec![0.0],
                activation: Activation::Identity,
            },
        ])
        .unwrap()
    }

    #[test]
    fn forward_examples() {
        let mut rng = Rng::new(1, 0);
        let z = Mlp::<f64>::init(&mut rng, &[3, 8, 8, 2], Activation::Elu, true);
        assert_eq!(z.eval(&[0.3, -1.0, 2.0]), vec![0.0, 0.0]);
        let id = Mlp::new(vec![Dense {
            weight: Matrix::identity(2),
            bias: vec![0.0; 2],
            activation: Activation::Identity,
        }])
        .unwrap();
        assert_eq!(id.eval(&[1.5, -2.0]), vec![1.5, -2.0]);
        assert_eq!(hand_net().eval(&[1.0, -2.0]), vec![1.0]);
    }

    #[test]
    fn dimension_chain_is_checked() {
        let bad = Mlp::new(vec![
            Dense { weight: Matrix::<f64>::zeros(3, 2), bias: vec![0.0; 3], activation: Activation::Relu },
            Dense { weight: Matrix::zeros(1, 2), bias: vec![0.0], activation: Activation::Identity },
        ]);
        assert!(matches!(bad, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn vjp_of_linear_net_is_weight_row() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        let net = Mlp::new(vec![Dense { weight: w, bias: vec![0.0; 2], activation: Activation::Identity }]).unwrap();
        let (_, cache) = net.forward(&[0.1, 0.2, 0.3]);
        let mut gp = vec![0.0; net.num_params()];
        assert_eq!(net.vjp(&cache, &[1.0, 0.0], &mut gp), vec![1.0, 2.0, 3.0]);
        let mut gp0 = vec![0.0; net.num_params()];
        assert_eq!(net.vjp(&cache, &[0.0, 0.0], &mut gp0), vec![0.0; 3]);
        assert!(gp0.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn params_round_trip() {
        let mut rng = Rng::new(3, 0);
        let net = Mlp::<f64>::init(&mut rng, &[2, 5, 3], Activation::Tanh, false);
        let mut p = vec![0.0; net.num_params()];
        net.write_params(&mut p);
        let mut other = Mlp::<f64>::init(&mut rng, &[2, 5, 3], Activation::Tanh, false);
        other.read_params(&p);
        assert_eq!(other, net);
    }

    #[test]
    fn lip_bound_examples() {
        let diag = Mlp::new(vec![Dense {
            weight: Matrix::from_diag(&[2.0, 1.0]),
            bias: vec![0.0; 2],
            activation: Activation::Identity,
        }])
        .unwrap();
        assert_abs_diff_eq!(diag.lip_upper_bound(), 2.0, epsilon = 1e-7);
        let two = Mlp::new(vec![
            Dense { weight: Matrix::from_diag(&[2.0, 0.5]), bias: vec![0.0; 2], activation: Activation::Relu },
            Dense { weight: Matrix::from_diag(&[3.0, 1.0]), bias: vec![0.0; 2], activation: Activation::Identity },
        ])
        .unwrap();
        assert_abs_diff_eq!(two.lip_upper_bound(), 6.0, epsilon = 1e-7);
    }

    #[test]
    fn spectral_normalize_examples() {
        let five = Mlp::new(vec![Dense {
            weight: Matrix::from_diag(&[5.0, 1.0]),
            bias: vec![0.0; 2],
            activation: Activation::Identity,
        }])
        .unwrap();
        let n = five.spectral_normalize(0.8);
        assert_abs_diff_eq!(svd(&n.layers[0].weight).unwrap().max(), 0.8, epsilon = 1e-8);

        let small = Mlp::new(vec![Dense {
            weight: Matrix::from_diag(&[0.5, 0.1]),
            bias: vec![0.0; 2],
            activation: Activation::Identity,
        }])
        .unwrap();
        assert_eq!(small.spectral_normalize(0.8), small);

        let mut rng = Rng::new(9, 0);
        let net = Mlp::<f64>::init(&mut rng, &[2, 6, 2], Activation::Elu, false).spectral_normalize(0.8);
        assert!(net.lip_upper_bound() <= 0.8 + 1e-6);
    }

    #[test]
    fn output_box_contains_samples() {
        let mut rng = Rng::new(5, 0);
        let net = Mlp::<f64>::init(&mut rng, &[2, 7, 7, 3], Activation::Swish, false);
        let bx = vec![Interval::new(-1.0, 2.0), Interval::new(0.5, 0.7)];
        let out = net.output_box(&bx);
        for _ in 0..500 {
            let x = [rng.uniform_range(-1.0, 2.0), rng.uniform_range(0.5, 0.7)];
            for (y, iv) in net.eval(&x).iter().zip(&out) {
                assert!(iv.contains(*y));
            }
        }
    }
}
