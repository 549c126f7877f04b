//! Ready-made flows: the constant-subnet chains and the named presets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::block::Block;
use super::coupling::{AdditiveCoupling, AffineCoupling};
use super::flow::Flow;
use super::linear::{ActNorm, Permutation};
use super::partition::Partition;
use super::residual::Residual;
use crate::error::{Error, Result};
use crate::numerics::{Rng, Scalar};
use crate::subnet::{Activation, Mlp, ScalingFn};

/// `k` additive blocks on ℝ² with `I₁ = {0}`, `I₂ = {1}` and `t ≡ t_value`.
pub fn additive_chain<T: Scalar>(k: usize, t_value: f64) -> Flow<T> {
    let p = Partition::new(2, vec![0], vec![1]).expect("fixed partition");
    let blocks = (0..k)
        .map(|_| {
            Block::Additive(AdditiveCoupling::new(p.clone(), Mlp::constant(1, &[T::lit(t_value)])).expect("dims match"))
        })
        .collect();
    Flow::new(2, blocks).expect("dims match")
}

/// `k` affine blocks on ℝ² with `t ≡ t_value` and `g ≡ g_value`, realized as exp scaling
/// of a constant `s ≡ ln g_value`. The Jacobian of the chain is `diag(1, g_value^k)`.
pub fn affine_chain<T: Scalar>(k: usize, t_value: f64, g_value: f64) -> Flow<T> {
    assert!(g_value > 0.0, "exp scaling realizes positive constants only");
    let p = Partition::new(2, vec![0], vec![1]).expect("fixed partition");
    let blocks = (0..k)
        .map(|_| {
            Block::Affine(
                AffineCoupling::new(
                    p.clone(),
                    Mlp::constant(1, &[T::lit(g_value.ln())]),
                    Mlp::constant(1, &[T::lit(t_value)]),
                    ScalingFn::Exp,
                )
                .expect("dims match"),
            )
        })
        .collect();
    Flow::new(2, blocks).expect("dims match")
}

/// Named flow architectures.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Preset {
    Additive,
    AffineSigmoid,
    /// Affine coupling with `g` restricted to `(0.5, 1)`.
    AffineModScaling,
    Residual { coeff: f64 },
}

impl Preset {
    pub fn name(self) -> String {
        match self {
            Preset::Additive => "additive".into(),
            Preset::AffineSigmoid => "affine_sigmoid".into(),
            Preset::AffineModScaling => "affine_mod_scaling".into(),
            Preset::Residual { coeff } => format!("residual_{coeff}"),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "additive" => Ok(Preset::Additive),
            "affine_sigmoid" | "affine" => Ok(Preset::AffineSigmoid),
            "affine_mod_scaling" => Ok(Preset::AffineModScaling),
            other => match other.strip_prefix("residual_") {
                Some(c) => {
                    let coeff: f64 = c.parse().map_err(|_| Error::InvalidConfig(format!("bad residual coefficient in `{other}`")))?;
                    if !(coeff > 0.0 && coeff < 1.0) {
                        return Err(Error::InvalidConfig(format!("residual coefficient must lie in (0, 1), got {coeff}")));
                    }
                    Ok(Preset::Residual { coeff })
                }
                None => Err(Error::InvalidConfig(format!("unknown preset `{other}`"))),
            },
        }
    }
}

impl Serialize for Preset {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for Preset {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Architecture of a preset flow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub preset: Preset,
    pub dim: usize,
    /// Number of coupling or residual blocks.
    pub depth: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Prepend an ActNorm to every coupling block.
    pub actnorm: bool,
}

impl FlowSpec {
    pub fn new(preset: Preset, dim: usize, depth: usize) -> Self {
        FlowSpec { preset, dim, depth, hidden: vec![64, 64], activation: Activation::Elu, actnorm: false }
    }

    fn dims(&self, d_in: usize, d_out: usize) -> Vec<usize> {
        let mut v = vec![d_in];
        v.extend(&self.hidden);
        v.push(d_out);
        v
    }

    /// Coupling presets interleave reverse permutations; all subnets start with a
    /// zero final layer so the initial flow is (affinely) the identity.
    pub fn build<T: Scalar>(&self, rng: &mut Rng) -> Result<Flow<T>> {
        if self.dim < 2 && !matches!(self.preset, Preset::Residual { .. }) {
            return Err(Error::InvalidConfig("coupling flows need d ≥ 2".into()));
        }
        let mut flow = Flow::identity(self.dim);
        for k in 0..self.depth {
            match self.preset {
                Preset::Residual { coeff } => {
                    let g = Mlp::init(rng, &self.dims(self.dim, self.dim), self.activation, true);
                    flow.push(Block::Residual(Residual::new(g, coeff)?))?;
                }
                coupling => {
                    if self.actnorm {
                        flow.push(Block::ActNorm(ActNorm::identity(self.dim)))?;
                    }
                    let p = Partition::halves(self.dim)?;
                    let (n1, n2) = (p.i1().len(), p.i2().len());
                    let t = Mlp::init(rng, &self.dims(n1, n2), self.activation, true);
                    let block = match coupling {
                        Preset::Additive => Block::Additive(AdditiveCoupling::new(p, t)?),
                        Preset::AffineSigmoid | Preset::AffineModScaling => {
                            let s = Mlp::init(rng, &self.dims(n1, n2), self.activation, true);
                            let g = if coupling == Preset::AffineSigmoid {
                                ScalingFn::Sigmoid
                            } else {
                                ScalingFn::sigmoid_range(0.5, 1.0)?
                            };
                            Block::Affine(AffineCoupling::new(p, s, t, g)?)
                        }
                        Preset::Residual { .. } => unreachable!(),
                    };
                    flow.push(block)?;
                    if k + 1 < self.depth {
                        flow.push(Block::Permutation(Permutation::reverse(self.dim)))?;
                    }
                }
            }
        }
        Ok(flow)
    }
}

/// Random well-conditioned flow cycling through every block type, with nonzero subnets.
/// Intended for oracle tests.
pub fn random_flow<T: Scalar>(rng: &mut Rng, dim: usize, depth: usize) -> Flow<T> {
    assert!(dim >= 2, "coupling blocks need d ≥ 2");
    let acts = [Activation::Tanh, Activation::Elu, Activation::Swish];
    let scalings = [ScalingFn::Sigmoid, ScalingFn::Exp, ScalingFn::SigmoidRange { lo: 0.5, hi: 1.0 }];
    let mut flow = Flow::identity(dim);
    let shrink = |m: Mlp<T>, f: f64| {
        let mut m = m;
        for l in m.layers_mut() {
            l.weight = l.weight.scale(T::lit(f));
            for b in &mut l.bias {
                *b = T::lit(0.1 * f);
            }
        }
        m
    };
    for k in 0..depth {
        let act = acts[rng.below(acts.len())];
        let n1 = 1 + rng.below(dim - 1);
        let mut idx: Vec<usize> = (0..dim).collect();
        rng.shuffle(&mut idx);
        let p = Partition::new(dim, idx[..n1].to_vec(), idx[n1..].to_vec()).expect("valid split");
        let (n1, n2) = (p.i1().len(), p.i2().len());
        let block = match k % 6 {
            0 => Block::Affine(
                AffineCoupling::new(
                    p,
                    shrink(Mlp::init(rng, &[n1, 8, n2], act, false), 0.5),
                    shrink(Mlp::init(rng, &[n1, 8, n2], act, false), 0.8),
                    scalings[rng.below(scalings.len())],
                )
                .expect("dims match"),
            ),
            1 => Block::Additive(
                AdditiveCoupling::new(p, shrink(Mlp::init(rng, &[n1, 8, n2], act, false), 0.8)).expect("dims match"),
            ),
            2 => {
                let scale = (0..dim)
                    .map(|_| {
                        let m = (0.3 * rng.normal()).exp();
                        T::lit(if rng.uniform() < 0.5 { -m } else { m })
                    })
                    .collect();
                let shift = rng.normal_vec(dim).into_iter().map(|v: T| v * T::lit(0.2)).collect();
                Block::ActNorm(ActNorm::new(scale, shift).expect("nonzero scale"))
            }
            3 => Block::LinearLu(super::linear::LinearLu::random(rng, dim, 0.3)),
            4 => Block::Residual(
                Residual::new(Mlp::init(rng, &[dim, 8, dim], act, false), 0.7).expect("valid coefficient"),
            ),
            _ => Block::Permutation(Permutation::shuffle(rng, dim)),
        };
        flow.push(block).expect("dims match");
    }
    flow
}
