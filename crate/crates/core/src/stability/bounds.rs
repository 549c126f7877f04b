//! Closed-form bi-Lipschitz upper bounds per block type, their composition over a flow,
//! and a sampling-based falsification check.

use serde::{Deserialize, Serialize};

use super::jacobian::jacobian_at;
use crate::blocks::{Block, Flow};
use crate::error::{Error, Result};
use crate::numerics::scalar::cast_vec;
use crate::numerics::{svd, Precision, Rng, Scalar};
use crate::subnet::{box_hull, cube, Interval, IntervalBox, Mlp, ScalingFn};

/// Serializes non-finite values as `null` and reads `null` back as `+∞`.
mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Where a bound holds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Validity {
    Global,
    /// Forward bound on `[a, b]^d`, inverse bound on `[a_star, b_star]^d`.
    Local { a: f64, b: f64, a_star: f64, b_star: f64 },
}

impl Validity {
    pub fn is_global(self) -> bool {
        matches!(self, Validity::Global)
    }
}

/// Interval domain for local bounds: inputs in `[a, b]^d`, outputs in `[a*, b*]^d`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub a: f64,
    pub b: f64,
    pub a_star: f64,
    pub b_star: f64,
}

impl Domain {
    pub fn new(a: f64, b: f64, a_star: f64, b_star: f64) -> Result<Self> {
        if !(a < b && a_star < b_star) {
            return Err(Error::InvalidConfig(format!("degenerate domain [{a}, {b}] / [{a_star}, {b_star}]")));
        }
        Ok(Domain { a, b, a_star, b_star })
    }

    /// Same interval on both sides.
    pub fn symmetric(a: f64, b: f64) -> Result<Self> {
        Domain::new(a, b, a, b)
    }

    /// Empirical coordinate range of `points`, padded by 10% of its width.
    pub fn from_data(points: &[Vec<f64>]) -> Result<Self> {
        let r = points
            .iter()
            .flatten()
            .fold(Interval { lo: f64::INFINITY, hi: f64::NEG_INFINITY }, |acc, &v| Interval {
                lo: acc.lo.min(v),
                hi: acc.hi.max(v),
            });
        if !(r.lo.is_finite() && r.hi.is_finite()) {
            return Err(Error::InvalidConfig("domain needs at least one finite point".into()));
        }
        let p = r.padded(0.1, 1e-3);
        Domain::symmetric(p.lo, p.hi)
    }

    /// Inputs in `[a, b]^d`; the output interval is the hull of the flow's forward
    /// interval image of that cube.
    pub fn from_forward_image<T: Scalar>(flow: &Flow<T>, a: f64, b: f64) -> Result<Self> {
        let boxes = forward_boxes(flow, &cube(a, b, flow.dim()));
        let h = box_hull(boxes.last().expect("at least the input box"));
        if !(h.lo.is_finite() && h.hi.is_finite()) {
            return Err(Error::Unbounded("forward image of the domain is unbounded".into()));
        }
        Domain::new(a, b, h.lo, h.hi.max(h.lo + f64::EPSILON * h.lo.abs().max(1.0)))
    }

    pub fn input_box(&self, d: usize) -> IntervalBox {
        cube(self.a, self.b, d)
    }

    pub fn output_box(&self, d: usize) -> IntervalBox {
        cube(self.a_star, self.b_star, d)
    }
}

/// Constants entering a bound; absent where a block type does not use them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub lip_t: Option<f64>,
    pub lip_s: Option<f64>,
    pub c_g: Option<f64>,
    pub c_g_prime: Option<f64>,
    pub c_inv_g: Option<f64>,
    pub c_inv_g_prime: Option<f64>,
    /// `sup |t|` over the inverse-side interval.
    pub c_t: Option<f64>,
    /// `max(|a|, |b|)` over the transformed coordinates.
    pub ab_max: Option<f64>,
    /// `max(|a*|, |b*|)` over the transformed coordinates.
    pub ab_star_max: Option<f64>,
    pub m: Option<f64>,
    pub m_star: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockBound {
    pub index: usize,
    pub kind: String,
    #[serde(with = "inf_as_null")]
    pub forward: f64,
    #[serde(with = "inf_as_null")]
    pub inverse: f64,
    pub global: bool,
    pub constants: BoundConstants,
}

/// Upper bounds on `Lip(F)` and `Lip(F⁻¹)`. Either may be `+∞`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiLipBound {
    #[serde(with = "inf_as_null")]
    pub lip_forward_upper: f64,
    #[serde(with = "inf_as_null")]
    pub lip_inverse_upper: f64,
    pub validity: Validity,
    pub per_block: Vec<BlockBound>,
    /// Constants of a single-block bound; empty for composed bounds.
    pub constants: BoundConstants,
    /// Some constant was obtained by interval propagation rather than in closed form.
    pub conservative: bool,
}

impl BiLipBound {
    fn single(kind: &str, forward: f64, inverse: f64, validity: Validity, constants: BoundConstants) -> Self {
        BiLipBound {
            lip_forward_upper: forward,
            lip_inverse_upper: inverse,
            validity,
            per_block: vec![BlockBound {
                index: 0,
                kind: kind.into(),
                forward,
                inverse,
                global: validity.is_global(),
                constants,
            }],
            constants,
            conservative: false,
        }
    }

    /// `Lip(F) · Lip(F⁻¹) ≥ 1`, which any pair of valid bounds satisfies.
    pub fn duality_holds(&self) -> bool {
        let (f, i) = (self.lip_forward_upper, self.lip_inverse_upper);
        if f.is_finite() && i.is_finite() {
            f * i >= 1.0 - 1e-12
        } else {
            true
        }
    }
}

/// Additive coupling: `1 + Lip(t)` in both directions, globally.
pub fn bound_additive(t_lip: f64) -> Result<BiLipBound> {
    if !(t_lip >= 0.0) {
        return Err(Error::InvalidConfig(format!("Lip(t) must be non-negative, got {t_lip}")));
    }
    let c = BoundConstants { lip_t: Some(t_lip), ..Default::default() };
    Ok(BiLipBound::single("additive", 1.0 + t_lip, 1.0 + t_lip, Validity::Global, c))
}

/// Everything the affine-coupling bound depends on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineBoundInputs {
    pub domain: Domain,
    pub g: ScalingFn,
    pub s_lip: f64,
    pub t_lip: f64,
    /// `sup |t|` over `y₁ ∈ [a*, b*]`.
    pub t_sup: f64,
    /// Range of `s(x₁)` over `x₁ ∈ [a, b]`.
    pub s_range_forward: Interval,
    /// Range of `s(y₁)` over `y₁ ∈ [a*, b*]`.
    pub s_range_inverse: Interval,
}

struct AffineParts {
    forward: f64,
    inverse: f64,
    constants: BoundConstants,
}

#[allow(clippy::too_many_arguments)]
fn affine_parts(
    g: ScalingFn,
    s_lip: f64,
    t_lip: f64,
    t_sup: f64,
    ab_max: f64,
    ab_star_max: f64,
    s_fwd: Interval,
    s_inv: Interval,
) -> AffineParts {
    let inf = f64::INFINITY;
    let (c_g, c_gp) = match g.constants(s_fwd) {
        Ok(c) => (c.c_g, c.c_g_prime),
        // the forward pair alone may still be finite
        Err(_) => (g.image(s_fwd).mag(), forward_derivative_sup(g, s_fwd)),
    };
    let (c_ig, c_igp) = match g.constants(s_inv) {
        Ok(c) => (c.c_inv_g, c.c_inv_g_prime),
        Err(_) => (inf, inf),
    };
    // 0·∞ is 0 for a vanishing factor
    let prod = |xs: &[f64]| if xs.contains(&0.0) { 0.0 } else { xs.iter().product::<f64>() };
    let m = prod(&[ab_max, c_gp, s_lip]) + t_lip;
    let m_star = prod(&[ab_star_max, c_igp, s_lip]) + prod(&[c_igp, s_lip, t_sup]) + prod(&[c_ig, t_lip]);
    let forward = c_g.max(1.0) + m;
    let inverse = c_ig.max(1.0) + m_star;
    AffineParts {
        forward: if forward.is_nan() { inf } else { forward },
        inverse: if inverse.is_nan() { inf } else { inverse },
        constants: BoundConstants {
            lip_t: Some(t_lip),
            lip_s: Some(s_lip),
            c_g: Some(c_g),
            c_g_prime: Some(c_gp),
            c_inv_g: Some(c_ig),
            c_inv_g_prime: Some(c_igp),
            c_t: Some(t_sup),
            ab_max: Some(ab_max),
            ab_star_max: Some(ab_star_max),
            m: Some(m),
            m_star: Some(m_star),
        },
    }
}

fn forward_derivative_sup(g: ScalingFn, s: Interval) -> f64 {
    // σ' peaks at 0
    let peak = g.derivative(0.0f64.clamp(s.lo, s.hi));
    match g {
        ScalingFn::Exp => s.hi.exp(),
        ScalingFn::Constant { .. } => 0.0,
        ScalingFn::Sigmoid | ScalingFn::SigmoidRange { .. } => peak,
    }
}

/// Affine coupling: `max(1, c_g) + M` forward and `max(1, c_{1/g}) + M*` inverse, with
/// `M = max(|a|,|b|)·c_{g'}·Lip(s) + Lip(t)` and
/// `M* = max(|a*|,|b*|)·c_{(1/g)'}·Lip(s) + c_{(1/g)'}·Lip(s)·c_t + c_{1/g}·Lip(t)`.
pub fn bound_affine(inp: &AffineBoundInputs) -> Result<BiLipBound> {
    let d = inp.domain;
    if !(d.a < d.b && d.a_star < d.b_star) {
        return Err(Error::InvalidConfig("affine bound needs a < b and a* < b*".into()));
    }
    if !(inp.s_lip >= 0.0 && inp.t_lip >= 0.0 && inp.t_sup >= 0.0) {
        return Err(Error::InvalidConfig("Lipschitz constants and sup |t| must be non-negative".into()));
    }
    inp.g.constants(inp.s_range_forward)?;
    inp.g.constants(inp.s_range_inverse)?;
    let ab = d.a.abs().max(d.b.abs());
    let ab_star = d.a_star.abs().max(d.b_star.abs());
    let p = affine_parts(
        inp.g,
        inp.s_lip,
        inp.t_lip,
        inp.t_sup,
        ab,
        ab_star,
        inp.s_range_forward,
        inp.s_range_inverse,
    );
    let validity = Validity::Local { a: d.a, b: d.b, a_star: d.a_star, b_star: d.b_star };
    Ok(BiLipBound::single("affine", p.forward, p.inverse, validity, p.constants))
}

/// Formula-only bound of a neural ODE block integrated to time `t`: `e^{Lip·t}` both ways.
pub fn node_bound(lip: f64, t: f64) -> Result<BiLipBound> {
    if !(lip >= 0.0 && t >= 0.0) {
        return Err(Error::InvalidConfig("Lip and t must be non-negative".into()));
    }
    let e = (lip * t).exp();
    Ok(BiLipBound::single("neural_ode", e, e, Validity::Global, BoundConstants::default()))
}

/// Input and output boxes of a block, as needed for local bounds.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BlockContext {
    /// Box containing the block's inputs (forward direction).
    pub input: Option<IntervalBox>,
    /// Box containing the block's outputs (inverse direction).
    pub output: Option<IntervalBox>,
}

fn pick(b: &[Interval], idx: &[usize]) -> IntervalBox {
    idx.iter().map(|&i| b[i]).collect()
}

fn mag_max(b: &[Interval]) -> f64 {
    b.iter().map(|i| i.mag()).fold(0.0, f64::max)
}

fn subnet_lip<T: Scalar>(m: &Mlp<T>) -> f64 {
    m.lip_upper_bound()
}

/// Bound of a single block. Coupling and residual Lipschitz constants come from the
/// spectral-norm product bound of their subnets.
pub fn bound_table1<T: Scalar>(block: &Block<T>, ctx: &BlockContext) -> BlockBound {
    let global = |kind: &str, f: f64, i: f64, c: BoundConstants| BlockBound {
        index: 0,
        kind: kind.into(),
        forward: f,
        inverse: i,
        global: true,
        constants: c,
    };
    match block {
        Block::Additive(b) => {
            let lt = subnet_lip(&b.t);
            global("additive", 1.0 + lt, 1.0 + lt, BoundConstants { lip_t: Some(lt), ..Default::default() })
        }
        Block::Affine(b) => {
            let (i1, i2) = (b.partition.i1(), b.partition.i2());
            let unb = Interval::everything();
            let (x1, x2) = match &ctx.input {
                Some(bx) => (pick(bx, i1), pick(bx, i2)),
                None => (vec![unb; i1.len()], vec![unb; i2.len()]),
            };
            let (y1, y2) = match &ctx.output {
                Some(bx) => (pick(bx, i1), pick(bx, i2)),
                None => (vec![unb; i1.len()], vec![unb; i2.len()]),
            };
            let s_fwd = box_hull(&b.s.output_box(&x1));
            let s_inv = box_hull(&b.s.output_box(&y1));
            let t_sup = mag_max(&b.t.output_box(&y1));
            let p = affine_parts(
                b.g,
                subnet_lip(&b.s),
                subnet_lip(&b.t),
                t_sup,
                mag_max(&x2),
                mag_max(&y2),
                s_fwd,
                s_inv,
            );
            BlockBound { index: 0, kind: "affine".into(), forward: p.forward, inverse: p.inverse, global: false, constants: p.constants }
        }
        Block::ActNorm(b) => {
            let m: Vec<f64> = b.scale.iter().map(|s| s.to_f64_lossless().abs()).collect();
            let hi = m.iter().copied().fold(0.0, f64::max);
            let lo = m.iter().copied().fold(f64::INFINITY, f64::min);
            global("actnorm", hi, 1.0 / lo, BoundConstants::default())
        }
        Block::Permutation(_) => global("permutation", 1.0, 1.0, BoundConstants::default()),
        Block::LinearLu(b) => {
            let w = b.weight().cast::<f64>();
            let (hi, lo) = match svd(&w) {
                Ok(s) => (s.max(), s.min()),
                Err(_) => (f64::INFINITY, 0.0),
            };
            global("linear_lu", hi, 1.0 / lo, BoundConstants::default())
        }
        Block::Residual(b) => {
            let l = subnet_lip(&b.g);
            let inv = if l < 1.0 { 1.0 / (1.0 - l) } else { f64::INFINITY };
            global("residual", 1.0 + l, inv, BoundConstants { lip_t: Some(l), ..Default::default() })
        }
    }
}

/// Interval image of `input` under one block.
pub fn block_forward_box<T: Scalar>(block: &Block<T>, input: &[Interval]) -> IntervalBox {
    match block {
        Block::Additive(b) => {
            let (i1, i2) = (b.partition.i1(), b.partition.i2());
            let t = b.t.output_box(&pick(input, i1));
            let mut out = input.to_vec();
            for (k, &j) in i2.iter().enumerate() {
                out[j] = input[j] + t[k];
            }
            out
        }
        Block::Affine(b) => {
            let (i1, i2) = (b.partition.i1(), b.partition.i2());
            let x1 = pick(input, i1);
            let s = b.s.output_box(&x1);
            let t = b.t.output_box(&x1);
            let mut out = input.to_vec();
            for (k, &j) in i2.iter().enumerate() {
                out[j] = input[j] * b.g.image(s[k]) + t[k];
            }
            out
        }
        Block::ActNorm(b) => input
            .iter()
            .zip(b.scale.iter().zip(&b.shift))
            .map(|(x, (&s, &h))| x.scale(s.to_f64_lossless()) + Interval::point(h.to_f64_lossless()))
            .collect(),
        Block::Permutation(p) => p.apply(input),
        Block::LinearLu(b) => linear_box(&b.weight().cast::<f64>(), input),
        Block::Residual(b) => {
            let g = b.g.output_box(input);
            input.iter().zip(&g).map(|(x, g)| *x + *g).collect()
        }
    }
}

/// Interval enclosure of `F⁻¹(output)` for one block.
pub fn block_inverse_box<T: Scalar>(block: &Block<T>, output: &[Interval]) -> IntervalBox {
    match block {
        Block::Additive(b) => {
            let (i1, i2) = (b.partition.i1(), b.partition.i2());
            let t = b.t.output_box(&pick(output, i1));
            let mut out = output.to_vec();
            for (k, &j) in i2.iter().enumerate() {
                out[j] = output[j] - t[k];
            }
            out
        }
        Block::Affine(b) => {
            let (i1, i2) = (b.partition.i1(), b.partition.i2());
            let y1 = pick(output, i1);
            let s = b.s.output_box(&y1);
            let t = b.t.output_box(&y1);
            let mut out = output.to_vec();
            for (k, &j) in i2.iter().enumerate() {
                out[j] = match b.g.image(s[k]).recip() {
                    Some(r) => (output[j] - t[k]) * r,
                    None => Interval::everything(),
                };
            }
            out
        }
        Block::ActNorm(b) => output
            .iter()
            .zip(b.scale.iter().zip(&b.shift))
            .map(|(y, (&s, &h))| (*y - Interval::point(h.to_f64_lossless())).scale(1.0 / s.to_f64_lossless()))
            .collect(),
        Block::Permutation(p) => p.apply_inverse(output),
        Block::LinearLu(b) => match crate::numerics::Lu::factor(&b.weight().cast::<f64>()) {
            Ok(lu) => linear_box(&lu.inverse(), output),
            Err(_) => vec![Interval::everything(); output.len()],
        },
        Block::Residual(b) => {
            // ‖x - y‖₂ = ‖g(x)‖₂ ≤ ‖g(y)‖₂ + L‖x - y‖₂
            let l = b.g.lip_upper_bound();
            let g = b.g.output_box(output);
            let r = g.iter().map(|i| i.mag().powi(2)).sum::<f64>().sqrt() / (1.0 - l);
            let r = if l < 1.0 { r } else { f64::INFINITY };
            output.iter().map(|y| *y + Interval::symmetric(r)).collect()
        }
    }
}

fn linear_box(w: &crate::numerics::Matrix<f64>, input: &[Interval]) -> IntervalBox {
    (0..w.rows())
        .map(|i| {
            w.row(i)
                .iter()
                .zip(input)
                .filter(|(&c, _)| c != 0.0)
                .fold(Interval::point(0.0), |acc, (&c, x)| acc + x.scale(c))
        })
        .collect()
}

/// Boxes before and after each block, `blocks + 1` entries.
pub fn forward_boxes<T: Scalar>(flow: &Flow<T>, input: &[Interval]) -> Vec<IntervalBox> {
    let mut out = vec![input.to_vec()];
    for b in flow.blocks() {
        let next = block_forward_box(b, out.last().expect("non-empty"));
        out.push(next);
    }
    out
}

/// Boxes after and before each block going backwards, indexed like `forward_boxes`.
pub fn inverse_boxes<T: Scalar>(flow: &Flow<T>, output: &[Interval]) -> Vec<IntervalBox> {
    let mut out = vec![output.to_vec()];
    for b in flow.blocks().iter().rev() {
        let prev = block_inverse_box(b, out.last().expect("non-empty"));
        out.push(prev);
    }
    out.reverse();
    out
}

/// Product of per-block bounds. With a domain, each block's forward bound uses the
/// interval image of `[a, b]^d` at its input and its inverse bound the interval
/// preimage of `[a*, b*]^d` at its output.
pub fn flow_bound<T: Scalar>(flow: &Flow<T>, domain: Option<&Domain>) -> BiLipBound {
    let d = flow.dim();
    let (fwd, inv) = match domain {
        Some(dm) => (Some(forward_boxes(flow, &dm.input_box(d))), Some(inverse_boxes(flow, &dm.output_box(d)))),
        None => (None, None),
    };
    let mut per_block = Vec::with_capacity(flow.depth());
    let (mut f, mut i) = (1.0f64, 1.0f64);
    let mut all_global = true;
    let mut conservative = false;
    for (k, b) in flow.blocks().iter().enumerate() {
        let ctx = BlockContext {
            input: fwd.as_ref().map(|v| v[k].clone()),
            output: inv.as_ref().map(|v| v[k + 1].clone()),
        };
        let mut bb = bound_table1(b, &ctx);
        bb.index = k;
        all_global &= bb.global;
        conservative |= !bb.global;
        f *= bb.forward;
        i *= bb.inverse;
        per_block.push(bb);
    }
    let validity = match (all_global, domain) {
        (false, Some(dm)) => Validity::Local { a: dm.a, b: dm.b, a_star: dm.a_star, b_star: dm.b_star },
        _ => Validity::Global,
    };
    let nan_to_inf = |v: f64| if v.is_nan() { f64::INFINITY } else { v };
    BiLipBound {
        lip_forward_upper: nan_to_inf(f),
        lip_inverse_upper: nan_to_inf(i),
        validity,
        per_block,
        constants: BoundConstants::default(),
        conservative,
    }
}

/// Componentwise comparison of the affine and additive bounds on a shared domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingReport {
    pub additive: (f64, f64),
    pub affine: (f64, f64),
    /// `affine - additive`, forward then inverse.
    pub margin: (f64, f64),
    /// Both margins strictly positive.
    pub holds: bool,
}

/// Checks that affine bounds strictly exceed additive ones for flows sharing their `t`
/// subnets. Affine blocks must use a non-constant scaling.
pub fn theorem1_check<T: Scalar>(additive: &Flow<T>, affine: &Flow<T>, domain: &Domain) -> Result<OrderingReport> {
    if additive.depth() != affine.depth() {
        return Err(Error::InvalidConfig("flows must have the same block structure".into()));
    }
    for (a, b) in additive.blocks().iter().zip(affine.blocks()) {
        match (a, b) {
            (Block::Additive(x), Block::Affine(y)) => {
                if x.t != y.t || x.partition != y.partition {
                    return Err(Error::InvalidConfig("coupling pairs must share t and the partition".into()));
                }
                if y.g.is_constant() {
                    return Err(Error::InvalidConfig("ordering assumes a non-constant scaling".into()));
                }
            }
            (Block::Additive(_), _) | (_, Block::Affine(_)) => {
                return Err(Error::InvalidConfig("additive blocks must pair with affine blocks".into()));
            }
            _ => {}
        }
    }
    let a = flow_bound(additive, Some(domain));
    let b = flow_bound(affine, Some(domain));
    let add = (a.lip_forward_upper, a.lip_inverse_upper);
    let aff = (b.lip_forward_upper, b.lip_inverse_upper);
    let margin = (aff.0 - add.0, aff.1 - add.1);
    Ok(OrderingReport { additive: add, affine: aff, margin, holds: margin.0 > 0.0 && margin.1 > 0.0 })
}

/// Largest sampled spectral norms compared against a bound.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Falsification {
    pub samples: usize,
    pub max_forward_norm: f64,
    pub max_inverse_norm: f64,
    /// Samples where a norm exceeded its bound.
    pub violations: usize,
    /// Samples skipped because the flow could not be evaluated there.
    pub skipped: usize,
}

impl Falsification {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Samples `‖J_F(x)‖₂` for `x ~ U([a, b]^d)` and `‖J_{F⁻¹}(y)‖₂` for `y ~ U([a*, b*]^d)`,
/// counting exceedances of `bound`. Global bounds are sampled on the same boxes.
pub fn falsify<T: Scalar>(flow: &Flow<T>, bound: &BiLipBound, domain: &Domain, samples: usize, rng: &mut Rng) -> Falsification {
    let d = flow.dim();
    // relative slack for the rounding in the sampled norms themselves
    let slack = 1.0 + 1e-9;
    let mut res = Falsification { samples, max_forward_norm: 0.0, max_inverse_norm: 0.0, violations: 0, skipped: 0 };
    for _ in 0..samples {
        let x: Vec<f64> = (0..d).map(|_| rng.uniform_range(domain.a, domain.b)).collect();
        let y: Vec<f64> = (0..d).map(|_| rng.uniform_range(domain.a_star, domain.b_star)).collect();
        let (jf, bad) = jacobian_at(flow, &cast_vec::<f64, T>(&x));
        let fwd = if bad { None } else { svd(&jf).ok().map(|s| s.max()) };
        let inv = flow
            .inverse(&cast_vec::<f64, T>(&y), Precision::F64)
            .ok()
            .and_then(|xi| {
                let (j, bad) = jacobian_at(flow, &xi);
                if bad {
                    None
                } else {
                    svd(&j).ok().map(|s| 1.0 / s.min())
                }
            });
        match (fwd, inv) {
            (Some(f), Some(i)) => {
                res.max_forward_norm = res.max_forward_norm.max(f);
                res.max_inverse_norm = res.max_inverse_norm.max(i);
                if f > bound.lip_forward_upper * slack || i > bound.lip_inverse_upper * slack {
                    res.violations += 1;
                }
            }
            _ => res.skipped += 1,
        }
    }
    res
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::{affine_chain, ActNorm, AdditiveCoupling, AffineCoupling, LinearLu, Partition, Residual};
    use crate::subnet::Activation;

    fn one_block(b: Block<f64>) -> Flow<f64> {
        Flow::new(b.dim(), vec![b]).unwrap()
    }

    #[test]
    fn additive_examples() {
        let b = bound_additive(0.0).unwrap();
        assert_eq!((b.lip_forward_upper, b.lip_inverse_upper), (1.0, 1.0));
        let b = bound_additive(2.0).unwrap();
        assert_eq!((b.lip_forward_upper, b.lip_inverse_upper), (3.0, 3.0));
        assert!(b.validity.is_global());
        assert!(bound_additive(-1.0).is_err());
    }

    #[test]
    fn affine_constant_scaling() {
        let inp = AffineBoundInputs {
            domain: Domain::symmetric(-2.0, 2.0).unwrap(),
            g: ScalingFn::constant(0.1).unwrap(),
            s_lip: 0.0,
            t_lip: 0.0,
            t_sup: 0.123456789,
            s_range_forward: Interval::point(0.0),
            s_range_inverse: Interval::point(0.0),
        };
        let b = bound_affine(&inp).unwrap();
        assert_eq!(b.lip_forward_upper, 1.0);
        assert!((b.lip_inverse_upper - 10.0).abs() < 1e-12);
        assert!(!b.validity.is_global());
    }

    #[test]
    fn modified_scaling_caps_leading_term() {
        let inp = AffineBoundInputs {
            domain: Domain::symmetric(-4.0, 4.0).unwrap(),
            g: ScalingFn::sigmoid_range(0.5, 1.0).unwrap(),
            s_lip: 1.0,
            t_lip: 1.0,
            t_sup: 1.0,
            s_range_forward: Interval::new(-1e6, 1e6),
            s_range_inverse: Interval::new(-1e6, 1e6),
        };
        let b = bound_affine(&inp).unwrap();
        assert!(b.constants.c_inv_g.unwrap() <= 2.0 + 1e-12);
        assert!(b.lip_inverse_upper.is_finite());
        // plain sigmoid approaches zero over the same range
        let sig = AffineBoundInputs { g: ScalingFn::Sigmoid, ..inp };
        assert!(matches!(bound_affine(&sig), Err(Error::Unbounded(_))));
        let narrow = Interval::new(-3.0, 3.0);
        let sig = AffineBoundInputs { s_range_forward: narrow, s_range_inverse: narrow, ..sig };
        let b_mod = bound_affine(&AffineBoundInputs { g: inp.g, ..sig }).unwrap();
        assert!(bound_affine(&sig).unwrap().lip_inverse_upper > b_mod.lip_inverse_upper);
    }

    #[test]
    fn exp_over_unbounded_range_is_unbounded() {
        let inp = AffineBoundInputs {
            domain: Domain::symmetric(-1.0, 1.0).unwrap(),
            g: ScalingFn::Exp,
            s_lip: 1.0,
            t_lip: 1.0,
            t_sup: 1.0,
            s_range_forward: Interval::everything(),
            s_range_inverse: Interval::everything(),
        };
        assert!(matches!(bound_affine(&inp), Err(Error::Unbounded(_))));
    }

    #[test]
    fn table_rows() {
        let an = Block::ActNorm(ActNorm::new(vec![2.0, 0.5], vec![0.0, 0.0]).unwrap());
        let b = bound_table1(&an, &BlockContext::default());
        assert_eq!((b.forward, b.inverse), (2.0, 2.0));

        let node = node_bound(1.0, 2.0).unwrap();
        assert_eq!(node.lip_forward_upper, node.lip_inverse_upper);
        assert!((node.lip_forward_upper - 7.38905609893065).abs() < 1e-12);

        // a single linear layer with known spectral norm
        let mut g = Mlp::<f64>::constant(2, &[0.0, 0.0]);
        g.layers_mut()[0].weight = crate::numerics::Matrix::from_rows(&[vec![0.8, 0.0], vec![0.0, 0.3]]);
        let r = Residual { g, coeff: 0.9, fp_iters: 200, fp_tol: 1e-10 };
        let b = bound_table1(&Block::Residual(r), &BlockContext::default());
        assert!((b.forward - 1.8).abs() < 1e-6);
        assert!((b.inverse - 5.0).abs() < 1e-5);
    }

    #[test]
    fn chain_bounds_compose() {
        let f = affine_chain::<f64>(3, 0.123456789, 0.1);
        let dm = Domain::symmetric(-2.0, 2.0).unwrap();
        let b = flow_bound(&f, Some(&dm));
        assert!((b.lip_forward_upper - 1.0).abs() < 1e-12);
        assert!((b.lip_inverse_upper - 1000.0).abs() < 1e-9);
        assert!(!b.validity.is_global());
        assert!(b.duality_holds());
    }

    #[test]
    fn unbounded_affine_without_domain() {
        let f = affine_chain::<f64>(1, 0.1, 0.5);
        let mut rng = Rng::new(1, 0);
        let s = Mlp::init(&mut rng, &[1, 4, 1], Activation::Tanh, false);
        let t = Mlp::init(&mut rng, &[1, 4, 1], Activation::Tanh, false);
        let b = Block::Affine(AffineCoupling::new(Partition::halves(2).unwrap(), s, t, ScalingFn::Sigmoid).unwrap());
        let g = flow_bound(&one_block(b), None);
        assert!(g.lip_forward_upper.is_infinite());
        let json = serde_json::to_string(&g).unwrap();
        let back: BiLipBound = serde_json::from_str(&json).unwrap();
        assert!(back.lip_forward_upper.is_infinite());
        assert!(flow_bound(&f, None).lip_forward_upper.is_finite());
    }

    #[test]
    fn sampled_norms_respect_bounds() {
        let mut rng = Rng::new(5, 0);
        let p = Partition::halves(4).unwrap();
        let mk = |rng: &mut Rng| Mlp::<f64>::init(rng, &[2, 8, 2], Activation::Tanh, false);
        let blocks = vec![
            Block::Additive(AdditiveCoupling::new(p.clone(), mk(&mut rng)).unwrap()),
            Block::Affine(AffineCoupling::new(p.clone(), mk(&mut rng), mk(&mut rng), ScalingFn::Sigmoid).unwrap()),
            Block::Affine(
                AffineCoupling::new(p, mk(&mut rng), mk(&mut rng), ScalingFn::sigmoid_range(0.5, 1.0).unwrap()).unwrap(),
            ),
            Block::LinearLu(LinearLu::random(&mut rng, 4, 0.5)),
            Block::Residual(Residual::new(Mlp::init(&mut rng, &[4, 8, 4], Activation::Elu, false), 0.8).unwrap()),
        ];
        for b in blocks {
            let f = one_block(b);
            let dm = Domain::from_forward_image(&f, -3.0, 3.0).unwrap();
            let bound = flow_bound(&f, Some(&dm));
            let r = falsify(&f, &bound, &dm, 500, &mut rng);
            assert!(r.passed(), "{:?} vs {:?}", r, (bound.lip_forward_upper, bound.lip_inverse_upper));
            assert!(bound.duality_holds());
        }
    }

    #[test]
    fn ordering_on_shared_t() {
        let mut rng = Rng::new(9, 0);
        let p = Partition::halves(2).unwrap();
        let t = Mlp::<f64>::init(&mut rng, &[1, 8, 1], Activation::Tanh, false);
        let s = Mlp::<f64>::init(&mut rng, &[1, 8, 1], Activation::Tanh, false);
        let add = one_block(Block::Additive(AdditiveCoupling::new(p.clone(), t.clone()).unwrap()));
        let aff = one_block(Block::Affine(AffineCoupling::new(p, s, t, ScalingFn::Sigmoid).unwrap()));
        let r = theorem1_check(&add, &aff, &Domain::symmetric(-4.0, 4.0).unwrap()).unwrap();
        assert!(r.holds, "{r:?}");
        assert!(r.margin.0 > 0.0 && r.margin.1 > 0.0);
    }

    #[test]
    fn data_domain_is_padded() {
        let d = Domain::from_data(&[vec![-1.0, 0.0], vec![1.0, 0.5]]).unwrap();
        assert!((d.a + 1.2).abs() < 1e-12 && (d.b - 1.2).abs() < 1e-12);
    }
}
