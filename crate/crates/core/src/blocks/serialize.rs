//! Versioned JSON documents for flows. Parameter arrays are stored either as base64 of
//! little-endian IEEE-754 binary64 bits (bit-exact) or as shortest round-trip decimal strings.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::block::Block;
use super::coupling::{AdditiveCoupling, AffineCoupling};
use super::flow::Flow;
use super::linear::{ActNorm, LinearLu, Permutation};
use super::partition::Partition;
use super::residual::Residual;
use crate::error::{Error, Result};
use crate::numerics::scalar::cast_vec;
use crate::numerics::{Matrix, Precision, Scalar};
use crate::subnet::{Activation, Dense, Mlp, ScalingFn};

pub const FORMAT: &str = "inverse-lab-flow";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    Base64,
    Decimal,
}

#[derive(Serialize, Deserialize)]
struct FlowDoc {
    format: String,
    version: u32,
    dim: usize,
    scalar: Precision,
    blocks: Vec<BlockDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum BlockDoc {
    Additive {
        i1: Vec<usize>,
        i2: Vec<usize>,
        t: MlpDoc,
    },
    Affine {
        i1: Vec<usize>,
        i2: Vec<usize>,
        g: ScalingFn,
        s: MlpDoc,
        t: MlpDoc,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        inverse_clamp: Option<f64>,
    },
    ActNorm {
        scale: ArrayDoc,
        shift: ArrayDoc,
    },
    Permutation {
        perm: Vec<usize>,
    },
    LinearLu {
        perm: Vec<usize>,
        lower: ArrayDoc,
        upper: ArrayDoc,
        log_s: ArrayDoc,
    },
    Residual {
        g: MlpDoc,
        coeff: f64,
        fp_iters: usize,
        fp_tol: f64,
    },
}

#[derive(Serialize, Deserialize)]
struct MlpDoc {
    layers: Vec<LayerDoc>,
}

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    activation: Activation,
    weight: ArrayDoc,
    bias: ArrayDoc,
}

#[derive(Serialize, Deserialize)]
struct ArrayDoc {
    shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    base64: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    decimal: Option<Vec<String>>,
}

impl ArrayDoc {
    fn encode(shape: Vec<usize>, data: &[f64], enc: Encoding) -> Self {
        match enc {
            Encoding::Base64 => {
                let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_bits().to_le_bytes()).collect();
                ArrayDoc { shape, base64: Some(STANDARD.encode(bytes)), decimal: None }
            }
            Encoding::Decimal => ArrayDoc { shape, base64: None, decimal: Some(data.iter().map(|v| v.to_string()).collect()) },
        }
    }

    fn decode(&self) -> Result<Vec<f64>> {
        let n: usize = self.shape.iter().product();
        let data: Vec<f64> = match (&self.base64, &self.decimal) {
            (Some(b), None) => {
                let bytes = STANDARD.decode(b).map_err(|e| Error::Serialization(e.to_string()))?;
                if bytes.len() % 8 != 0 {
                    return Err(Error::Serialization("base64 payload is not a whole number of f64s".into()));
                }
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
                    .collect()
            }
            (None, Some(d)) => d
                .iter()
                .map(|s| s.parse::<f64>().map_err(|e| Error::Serialization(format!("`{s}`: {e}"))))
                .collect::<Result<_>>()?,
            _ => return Err(Error::Serialization("array needs exactly one of `base64`, `decimal`".into())),
        };
        if data.len() != n {
            return Err(Error::Serialization(format!("array of shape {:?} holds {} values", self.shape, data.len())));
        }
        Ok(data)
    }

    fn vector<T: Scalar>(v: &[T], enc: Encoding) -> Self {
        let d: Vec<f64> = cast_vec(v);
        ArrayDoc::encode(vec![d.len()], &d, enc)
    }

    fn matrix<T: Scalar>(m: &Matrix<T>, enc: Encoding) -> Self {
        let d: Vec<f64> = cast_vec(m.as_slice());
        ArrayDoc::encode(vec![m.rows(), m.cols()], &d, enc)
    }

    fn to_vector<T: Scalar>(&self) -> Result<Vec<T>> {
        if self.shape.len() != 1 {
            return Err(Error::Serialization(format!("expected a vector, got shape {:?}", self.shape)));
        }
        Ok(cast_vec(&self.decode()?))
    }

    fn to_matrix<T: Scalar>(&self) -> Result<Matrix<T>> {
        if self.shape.len() != 2 {
            return Err(Error::Serialization(format!("expected a matrix, got shape {:?}", self.shape)));
        }
        Ok(Matrix::from_vec(self.shape[0], self.shape[1], cast_vec(&self.decode()?)))
    }
}

fn mlp_doc<T: Scalar>(m: &Mlp<T>, enc: Encoding) -> MlpDoc {
    MlpDoc {
        layers: m
            .layers()
            .iter()
            .map(|l| LayerDoc {
                activation: l.activation,
                weight: ArrayDoc::matrix(&l.weight, enc),
                bias: ArrayDoc::vector(&l.bias, enc),
            })
            .collect(),
    }
}

fn mlp_from_doc<T: Scalar>(d: &MlpDoc) -> Result<Mlp<T>> {
    let layers = d
        .layers
        .iter()
        .map(|l| Ok(Dense { weight: l.weight.to_matrix()?, bias: l.bias.to_vector()?, activation: l.activation }))
        .collect::<Result<Vec<_>>>()?;
    Mlp::new(layers)
}

fn block_doc<T: Scalar>(b: &Block<T>, enc: Encoding) -> BlockDoc {
    match b {
        Block::Additive(c) => BlockDoc::Additive {
            i1: c.partition.i1().to_vec(),
            i2: c.partition.i2().to_vec(),
            t: mlp_doc(&c.t, enc),
        },
        Block::Affine(c) => BlockDoc::Affine {
            i1: c.partition.i1().to_vec(),
            i2: c.partition.i2().to_vec(),
            g: c.g,
            s: mlp_doc(&c.s, enc),
            t: mlp_doc(&c.t, enc),
            inverse_clamp: c.inverse_clamp,
        },
        Block::ActNorm(a) => BlockDoc::ActNorm { scale: ArrayDoc::vector(&a.scale, enc), shift: ArrayDoc::vector(&a.shift, enc) },
        Block::Permutation(p) => BlockDoc::Permutation { perm: p.indices().to_vec() },
        Block::LinearLu(l) => BlockDoc::LinearLu {
            perm: l.perm.indices().to_vec(),
            lower: ArrayDoc::matrix(&l.lower, enc),
            upper: ArrayDoc::matrix(&l.upper, enc),
            log_s: ArrayDoc::vector(&l.log_s, enc),
        },
        Block::Residual(r) => BlockDoc::Residual { g: mlp_doc(&r.g, enc), coeff: r.coeff, fp_iters: r.fp_iters, fp_tol: r.fp_tol },
    }
}

fn block_from_doc<T: Scalar>(d: &BlockDoc, dim: usize) -> Result<Block<T>> {
    Ok(match d {
        BlockDoc::Additive { i1, i2, t } => {
            Block::Additive(AdditiveCoupling::new(Partition::new(dim, i1.clone(), i2.clone())?, mlp_from_doc(t)?)?)
        }
        BlockDoc::Affine { i1, i2, g, s, t, inverse_clamp } => {
            let mut a = AffineCoupling::new(Partition::new(dim, i1.clone(), i2.clone())?, mlp_from_doc(s)?, mlp_from_doc(t)?, *g)?;
            a.inverse_clamp = *inverse_clamp;
            Block::Affine(a)
        }
        BlockDoc::ActNorm { scale, shift } => Block::ActNorm(ActNorm::new(scale.to_vector()?, shift.to_vector()?)?),
        BlockDoc::Permutation { perm } => Block::Permutation(Permutation::new(perm.clone())?),
        BlockDoc::LinearLu { perm, lower, upper, log_s } => Block::LinearLu(LinearLu::new(
            Permutation::new(perm.clone())?,
            lower.to_matrix()?,
            upper.to_matrix()?,
            log_s.to_vector()?,
        )?),
        BlockDoc::Residual { g, coeff, fp_iters, fp_tol } => {
            Block::Residual(Residual { g: mlp_from_doc(g)?, coeff: *coeff, fp_iters: *fp_iters, fp_tol: *fp_tol })
        }
    })
}

pub fn to_json<T: Scalar>(flow: &Flow<T>, enc: Encoding) -> String {
    let doc = FlowDoc {
        format: FORMAT.into(),
        version: VERSION,
        dim: flow.dim(),
        scalar: T::PRECISION,
        blocks: flow.blocks().iter().map(|b| block_doc(b, enc)).collect(),
    };
    serde_json::to_string_pretty(&doc).expect("flow documents always serialize")
}

pub fn from_json<T: Scalar>(text: &str) -> Result<Flow<T>> {
    let doc: FlowDoc = serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
    if doc.format != FORMAT {
        return Err(Error::Serialization(format!("unknown format `{}`", doc.format)));
    }
    if doc.version != VERSION {
        return Err(Error::Serialization(format!("unsupported version {}", doc.version)));
    }
    let blocks = doc.blocks.iter().map(|b| block_from_doc(b, doc.dim)).collect::<Result<Vec<_>>>()?;
    Flow::new(doc.dim, blocks)
}

pub fn save<T: Scalar>(flow: &Flow<T>, path: &Path, enc: Encoding) -> Result<()> {
    std::fs::write(path, to_json(flow, enc)).map_err(|e| Error::Serialization(format!("{}: {e}", path.display())))
}

pub fn load<T: Scalar>(path: &Path) -> Result<Flow<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Serialization(format!("{}: {e}", path.display())))?;
    from_json(&text)
}
