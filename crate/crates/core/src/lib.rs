#![allow(clippy::needless_range_loop)]
// NaN-aware comparisons are written negated on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod numerics;
pub mod subnet;
pub mod blocks;
pub mod gradients;
pub mod stability;
pub mod training;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub type Flow32 = blocks::Flow<f32>;
pub type Flow64 = blocks::Flow<f64>;
pub type Block32 = blocks::Block<f32>;
pub type Block64 = blocks::Block<f64>;
pub type Mlp32 = subnet::Mlp<f32>;
pub type Mlp64 = subnet::Mlp<f64>;
pub type Matrix32 = numerics::Matrix<f32>;
pub type Matrix64 = numerics::Matrix<f64>;
