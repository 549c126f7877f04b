//! Inner functions of coupling and residual blocks: small MLPs and scaling nonlinearities.

pub mod activation;
pub mod interval;
pub mod mlp;
pub mod scaling;

pub use activation::Activation;
pub use interval::{box_hull, cube, Interval, IntervalBox};
pub use mlp::{Dense, Mlp, MlpCache, TangentCache};
pub use scaling::{ScalingConstants, ScalingFn};
