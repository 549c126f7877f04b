//! Jacobian spectra, reconstruction probes and bi-Lipschitz bound calculators.

pub mod bounds;
pub mod jacobian;
pub mod probe;

pub use bounds::{
    bound_additive, bound_affine, bound_table1, falsify, flow_bound, node_bound, theorem1_check, AffineBoundInputs,
    BiLipBound, BlockBound, BlockContext, BoundConstants, Domain, Falsification, OrderingReport, Validity,
};
pub use jacobian::{
    detect_noninvertible, is_numerically_noninvertible, jacobian_at, jacobian_report, JacobianReport,
    NoninvertibilityReport,
};
pub use probe::{recon_error, recon_error_probe, square_grid, ProbeResult, ProbeStatus};
