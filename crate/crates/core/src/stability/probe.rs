use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blocks::Flow;
use crate::error::Error;
use crate::numerics::scalar::cast_vec;
use crate::numerics::{Precision, Scalar};

/// Outcome of one reconstruction `F⁻¹(F(x))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeStatus {
    Ok,
    /// Infinity or NaN in the forward pass.
    ForwardNonFinite,
    /// Infinity or NaN in the inverse pass.
    InverseNonFinite,
    /// The fixed-point inverse of a residual block did not converge.
    NoConvergence,
    Failed,
}

impl ProbeStatus {
    pub fn is_nonfinite(self) -> bool {
        matches!(self, ProbeStatus::ForwardNonFinite | ProbeStatus::InverseNonFinite)
    }

    pub fn name(self) -> &'static str {
        match self {
            ProbeStatus::Ok => "ok",
            ProbeStatus::ForwardNonFinite => "forward_nonfinite",
            ProbeStatus::InverseNonFinite => "inverse_nonfinite",
            ProbeStatus::NoConvergence => "no_convergence",
            ProbeStatus::Failed => "failed",
        }
    }
}

/// Per-point ℓ₂ reconstruction errors, measured in binary64.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub precision: Precision,
    /// `‖x - F⁻¹(F(x))‖₂`; infinite where the status is not `Ok`.
    pub errors: Vec<f64>,
    pub status: Vec<ProbeStatus>,
}

impl ProbeResult {
    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn count_nonfinite(&self) -> usize {
        self.status.iter().filter(|s| s.is_nonfinite()).count()
    }

    /// Points that did not reconstruct at all, for any reason.
    pub fn count_failed(&self) -> usize {
        self.status.iter().filter(|&&s| s != ProbeStatus::Ok).count()
    }

    pub fn pct_nonfinite(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            100.0 * self.count_failed() as f64 / self.len() as f64
        }
    }

    fn finite(&self) -> impl Iterator<Item = f64> + '_ {
        self.errors.iter().copied().filter(|e| e.is_finite())
    }

    /// Mean over successfully reconstructed points.
    pub fn mean_finite(&self) -> f64 {
        let (s, n) = self.finite().fold((0.0, 0usize), |(s, n), e| (s + e, n + 1));
        if n == 0 {
            f64::NAN
        } else {
            s / n as f64
        }
    }

    /// Max over successfully reconstructed points.
    pub fn max_finite(&self) -> f64 {
        self.finite().fold(f64::NAN, f64::max)
    }

    /// Points that failed or whose error exceeds `threshold`.
    pub fn count_bad(&self, threshold: f64) -> usize {
        self.errors.iter().filter(|&&e| !(e <= threshold)).count()
    }
}

fn classify(e: &Error, inverse: bool) -> ProbeStatus {
    match e {
        Error::NonFinite { .. } if inverse => ProbeStatus::InverseNonFinite,
        Error::NonFinite { .. } => ProbeStatus::ForwardNonFinite,
        Error::NoConvergence { .. } => ProbeStatus::NoConvergence,
        // a singular residual Jacobian carries no finite log-determinant
        Error::Singular(_) => ProbeStatus::ForwardNonFinite,
        _ => ProbeStatus::Failed,
    }
}

/// Reconstruction error of a single point with forward and inverse at `precision`.
pub fn recon_error<T: Scalar>(flow: &Flow<T>, x: &[f64], precision: Precision) -> (f64, ProbeStatus) {
    let xt: Vec<T> = cast_vec(x);
    let z = match flow.eval(&xt, precision) {
        Ok((z, _)) => z,
        Err(e) => return (f64::INFINITY, classify(&e, false)),
    };
    match flow.inverse(&z, precision) {
        Ok(back) => {
            let err = back.iter().zip(x).map(|(b, a)| (b.to_f64_lossless() - a).powi(2)).sum::<f64>().sqrt();
            (err, ProbeStatus::Ok)
        }
        Err(e) => (f64::INFINITY, classify(&e, true)),
    }
}

/// Reconstruction errors over `points`, output in input order.
pub fn recon_error_probe<T: Scalar>(flow: &Flow<T>, points: &[Vec<f64>], precision: Precision) -> ProbeResult {
    let (errors, status) = points.par_iter().map(|x| recon_error(flow, x, precision)).unzip();
    ProbeResult { precision, errors, status }
}

/// `n × n` grid over `[lo, hi]²`, endpoints included, row-major with the second
/// coordinate in the outer loop.
pub fn square_grid(lo: f64, hi: f64, n: usize) -> Vec<Vec<f64>> {
    assert!(n >= 2, "grid needs at least two points per side");
    let step = (hi - lo) / (n - 1) as f64;
    let coord = |i: usize| if i + 1 == n { hi } else { lo + step * i as f64 };
    (0..n).flat_map(|r| (0..n).map(move |c| vec![coord(c), coord(r)])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::{additive_chain, affine_chain};

    #[test]
    fn identity_reconstructs_exactly() {
        let pts = square_grid(-1.0, 1.0, 5);
        let r = recon_error_probe(&Flow::<f64>::identity(2), &pts, Precision::F32);
        assert!(r.errors.iter().all(|&e| e == 0.0 || e < 1e-7));
        let r64 = recon_error_probe(&Flow::<f64>::identity(2), &pts, Precision::F64);
        assert!(r64.errors.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn additive_chain_is_stable_in_binary32() {
        let f = additive_chain::<f64>(100, 0.123456789);
        let r = recon_error_probe(&f, &[vec![1.0, 1.0]], Precision::F32);
        assert_eq!(r.status[0], ProbeStatus::Ok);
        assert!(r.errors[0] <= 1e-5, "{}", r.errors[0]);
    }

    #[test]
    fn affine_chain_breaks_in_binary32() {
        let f = affine_chain::<f64>(40, 0.123456789, 0.1);
        let r = recon_error_probe(&f, &[vec![1.0, 1.0]], Precision::F32);
        assert!(r.status[0].is_nonfinite() || r.errors[0] >= 0.1);
        assert_eq!(r.count_bad(0.1), 1);
    }

    #[test]
    fn grid_layout() {
        let g = square_grid(-6.0, 6.0, 3);
        assert_eq!(g.len(), 9);
        assert_eq!(g[0], vec![-6.0, -6.0]);
        assert_eq!(g[1], vec![0.0, -6.0]);
        assert_eq!(g[3], vec![-6.0, 0.0]);
        assert_eq!(g[8], vec![6.0, 6.0]);
    }
}
