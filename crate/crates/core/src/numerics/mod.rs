//! Dense small-dimension linear algebra, seeded randomness and precision control.

pub mod linalg;
pub mod matrix;
pub mod rng;
pub mod scalar;

pub use linalg::{logdet_lu, power_iter_warm, spectral_norm_power_iter, svd, Lu, Svd};
pub use matrix::Matrix;
pub use rng::{sample_unit_sphere, Rng};
pub use scalar::{has_nonfinite, norm2, norm_inf, round_to_precision, Precision, Scalar};
