//! Invertible layers and their composition into flows.

pub mod block;
pub mod build;
pub mod coupling;
pub mod flow;
pub mod linear;
pub mod partition;
pub mod residual;
pub mod serialize;

pub use block::{Block, BlockCache};
pub use build::{additive_chain, affine_chain, random_flow, FlowSpec, Preset};
pub use coupling::{AdditiveCoupling, AffineCoupling};
pub use flow::{Flow, ForwardPass, InversePass, ReconTrace};
pub use linear::{ActNorm, LinearLu, Permutation};
pub use partition::Partition;
pub use residual::{FixedPointTrace, Residual};
