use serde::{Deserialize, Serialize};

use crate::blocks::Flow;
use crate::numerics::{logdet_lu, svd, Matrix, Precision, Scalar};

/// Jacobian of `F` at `x`, one exact jvp per basis vector. The flag is set if any entry
/// is non-finite.
pub fn jacobian_at<T: Scalar>(flow: &Flow<T>, x: &[T]) -> (Matrix<f64>, bool) {
    let d = flow.dim();
    let cols: Vec<Vec<f64>> = (0..d)
        .map(|j| {
            let mut e = vec![T::zero(); d];
            e[j] = T::one();
            flow.jvp(x, &e).1.iter().map(|v| v.to_f64_lossless()).collect()
        })
        .collect();
    let m = Matrix::from_columns(&cols);
    let bad = m.has_nonfinite();
    (m, bad)
}

/// Spectrum of the Jacobian at one point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JacobianReport {
    pub point: Vec<f64>,
    /// Descending. NaN when the Jacobian is non-finite.
    pub singular_values: Vec<f64>,
    /// `σ₁ / σ_d`.
    pub cond_number: f64,
    /// From an LU factorization of the Jacobian, independent of the SVD.
    pub log_abs_det: f64,
    pub nonfinite: bool,
    /// The Jacobian itself, kept so non-finite reports retain whatever was finite.
    pub jacobian: Matrix<f64>,
}

impl JacobianReport {
    pub fn sigma_max(&self) -> f64 {
        self.singular_values.first().copied().unwrap_or(f64::NAN)
    }

    pub fn sigma_min(&self) -> f64 {
        self.singular_values.last().copied().unwrap_or(f64::NAN)
    }
}

pub fn jacobian_report<T: Scalar>(flow: &Flow<T>, x: &[T]) -> JacobianReport {
    let (jac, nonfinite) = jacobian_at(flow, x);
    let point = x.iter().map(|v| v.to_f64_lossless()).collect();
    let d = flow.dim();
    if nonfinite {
        return JacobianReport {
            point,
            singular_values: vec![f64::NAN; d],
            cond_number: f64::NAN,
            log_abs_det: f64::NAN,
            nonfinite,
            jacobian: jac,
        };
    }
    let sv = svd(&jac).map(|s| s.singular_values).unwrap_or_else(|_| vec![f64::NAN; d]);
    let cond = match (sv.first(), sv.last()) {
        (Some(&hi), Some(&lo)) => hi / lo,
        _ => 1.0,
    };
    let log_abs_det = match logdet_lu(&jac) {
        Ok((l, _)) => l,
        Err(_) => f64::NEG_INFINITY,
    };
    JacobianReport { point, singular_values: sv, cond_number: cond, log_abs_det, nonfinite, jacobian: jac }
}

/// Threshold rule of the exploding-inverse detector: `σ_d < u·σ₁` with `u` the unit
/// roundoff of the working precision.
pub fn is_numerically_noninvertible(sigma_min: f64, sigma_max: f64, precision: Precision) -> bool {
    !(sigma_min >= precision.unit_roundoff() * sigma_max)
}

/// Detector verdict over a set of points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoninvertibilityReport {
    pub precision: Precision,
    pub min_sigma: f64,
    pub max_sigma: f64,
    /// Points whose Jacobian trips the threshold (non-finite counts as tripped).
    pub flagged_points: usize,
    pub numerically_noninvertible: bool,
}

pub fn detect_noninvertible<T: Scalar>(flow: &Flow<T>, points: &[Vec<T>], precision: Precision) -> NoninvertibilityReport {
    let mut min_sigma = f64::INFINITY;
    let mut max_sigma = 0.0f64;
    let mut flagged = 0;
    for x in points {
        let r = jacobian_report(flow, x);
        let (lo, hi) = (r.sigma_min(), r.sigma_max());
        if r.nonfinite || is_numerically_noninvertible(lo, hi, precision) {
            flagged += 1;
        }
        if lo.is_finite() {
            min_sigma = min_sigma.min(lo);
            max_sigma = max_sigma.max(hi);
        }
    }
    NoninvertibilityReport {
        precision,
        min_sigma,
        max_sigma,
        flagged_points: flagged,
        numerically_noninvertible: flagged > 0,
    }
}
