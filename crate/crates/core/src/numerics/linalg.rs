//! Small dense factorizations: one-sided Jacobi SVD, power iteration, LU.

use super::matrix::Matrix;
use super::rng::Rng;
use super::scalar::{dot, norm2, Scalar};
use crate::error::{Error, Result};

const JACOBI_MAX_SWEEPS: usize = 80;

/// Thin SVD `m = U diag(σ) Vᵀ`, singular values sorted descending.
#[derive(Clone, Debug)]
pub struct Svd<T> {
    pub singular_values: Vec<T>,
    /// `rows × k` with orthonormal columns, `k = min(rows, cols)`.
    pub u: Matrix<T>,
    /// `cols × k` with orthonormal columns.
    pub v: Matrix<T>,
}

impl<T: Scalar> Svd<T> {
    pub fn reconstruct(&self) -> Matrix<T> {
        let k = self.singular_values.len();
        let (m, n) = (self.u.rows(), self.v.rows());
        Matrix::from_fn(m, n, |i, j| {
            (0..k).fold(T::zero(), |acc, l| acc + self.u[(i, l)] * self.singular_values[l] * self.v[(j, l)])
        })
    }

    pub fn max(&self) -> T {
        self.singular_values.first().copied().unwrap_or_else(T::zero)
    }

    pub fn min(&self) -> T {
        self.singular_values.last().copied().unwrap_or_else(T::zero)
    }
}

/// Singular value decomposition by one-sided (Hestenes) Jacobi rotations.
pub fn svd<T: Scalar>(m: &Matrix<T>) -> Result<Svd<T>> {
    if m.has_nonfinite() {
        return Err(Error::non_finite("svd input"));
    }
    if m.rows() < m.cols() {
        let t = svd(&m.transpose())?;
        return Ok(Svd { singular_values: t.singular_values, u: t.v, v: t.u });
    }
    let (rows, n) = m.dims();
    // columns of the working matrix, stored contiguously
    let mut cols: Vec<Vec<T>> = (0..n).map(|j| m.column(j)).collect();
    let mut v: Vec<Vec<T>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { T::one() } else { T::zero() }).collect())
        .collect();
    let eps = T::epsilon();
    // a pair whose cosine rounds to a few ulps cannot be reduced further
    let tol = eps * T::lit(n as f64);
    let mut converged = n < 2;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == T::zero() || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (gamma + gamma);
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            context: "jacobi svd".into(),
            iters: JACOBI_MAX_SWEEPS,
            residual: f64::NAN,
        });
    }
    let mut sigma: Vec<T> = cols.iter().map(|c| norm2(c)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sigma[b].partial_cmp(&sigma[a]).unwrap_or(std::cmp::Ordering::Equal));

    let mut u_cols: Vec<Vec<T>> = Vec::with_capacity(n);
    let mut v_cols: Vec<Vec<T>> = Vec::with_capacity(n);
    let sorted: Vec<T> = order.iter().map(|&j| sigma[j]).collect();
    let tiny = sorted.first().copied().unwrap_or_else(T::zero) * eps * T::lit(rows as f64);
    for &j in &order {
        let s = sigma[j];
        let u = if s > tiny && s > T::min_positive_value() {
            cols[j].iter().map(|&x| x / s).collect()
        } else {
            complete_basis(&u_cols, rows)
        };
        u_cols.push(u);
        v_cols.push(v[j].clone());
    }
    sigma = sorted;
    Ok(Svd {
        singular_values: sigma,
        u: Matrix::from_columns(&u_cols),
        v: Matrix::from_columns(&v_cols),
    })
}

fn rotate<T: Scalar>(cols: &mut [Vec<T>], p: usize, q: usize, c: T, s: T) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (a, b) in cp.iter_mut().zip(cq.iter_mut()) {
        let (x, y) = (*a, *b);
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

/// A unit vector orthogonal to every vector in `basis` (Gram-Schmidt on e_i).
fn complete_basis<T: Scalar>(basis: &[Vec<T>], dim: usize) -> Vec<T> {
    let mut best: Vec<T> = vec![T::zero(); dim];
    let mut best_norm = T::zero();
    for i in 0..dim {
        let mut e = vec![T::zero(); dim];
        e[i] = T::one();
        for _ in 0..2 {
            for b in basis {
                let proj = dot(&e, b);
                for (x, &y) in e.iter_mut().zip(b) {
                    *x = *x - proj * y;
                }
            }
        }
        let n = norm2(&e);
        if n > best_norm {
            best_norm = n;
            best = e;
        }
        if best_norm > T::lit(0.5) {
            break;
        }
    }
    best.iter().map(|&x| x / best_norm).collect()
}

/// Largest singular value by power iteration on `mᵀm`.
///
/// The estimate `‖m v‖` for a unit `v` never exceeds the true σ₁.
pub fn spectral_norm_power_iter<T: Scalar>(m: &Matrix<T>, iters: usize, tol: T) -> Result<T> {
    let mut v = start_vector(m.cols());
    let (sigma, change) = power_iter_warm(m, &mut v, iters, tol);
    if change <= tol * sigma || sigma == T::zero() {
        Ok(sigma)
    } else {
        Err(Error::NoConvergence {
            context: "power iteration".into(),
            iters,
            residual: (change / sigma).to_f64_lossless(),
        })
    }
}

/// Power iteration continuing from `v` (updated in place). Returns the estimate and the
/// absolute change in the last step.
pub fn power_iter_warm<T: Scalar>(m: &Matrix<T>, v: &mut Vec<T>, iters: usize, tol: T) -> (T, T) {
    if v.len() != m.cols() || norm2(v) == T::zero() {
        *v = start_vector(m.cols());
    }
    let mut sigma = T::zero();
    let mut change = T::infinity();
    for _ in 0..iters.max(1) {
        let w = m.matvec(v);
        let s = norm2(&w);
        if s == T::zero() {
            return (T::zero(), T::zero());
        }
        change = (s - sigma).abs();
        sigma = s;
        let mut next = m.matvec_t(&w);
        let nn = norm2(&next);
        if nn == T::zero() {
            break;
        }
        for x in next.iter_mut() {
            *x = *x / nn;
        }
        *v = next;
        if change <= tol * sigma {
            break;
        }
    }
    // the estimate at the final v
    let s = norm2(&m.matvec(v));
    if s >= sigma {
        change = change.min(s - sigma);
        sigma = s;
    }
    (sigma, change)
}

fn start_vector<T: Scalar>(n: usize) -> Vec<T> {
    let mut rng = Rng::new(0x0005_eed0_f1ab, 0);
    let raw: Vec<f64> = (0..n).map(|_| 1.0 + 0.5 * rng.normal()).collect();
    let nrm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    raw.iter().map(|&x| T::lit(x / nrm)).collect()
}

/// LU factorization with partial pivoting, `P m = L U`.
#[derive(Clone, Debug)]
pub struct Lu<T> {
    lu: Matrix<T>,
    perm: Vec<usize>,
    perm_sign: T,
}

impl<T: Scalar> Lu<T> {
    pub fn factor(m: &Matrix<T>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                context: "lu of non-square matrix".into(),
                expected: m.rows(),
                got: m.cols(),
            });
        }
        if m.has_nonfinite() {
            return Err(Error::non_finite("lu input"));
        }
        let n = m.rows();
        let mut a = m.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = T::one();
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, a[(i, k)].abs()))
                .fold((k, T::zero()), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pmax == T::zero() {
                return Err(Error::Singular(format!("zero pivot in column {k}")));
            }
            if p != k {
                for j in 0..n {
                    let tmp = a[(k, j)];
                    a[(k, j)] = a[(p, j)];
                    a[(p, j)] = tmp;
                }
                perm.swap(k, p);
                sign = -sign;
            }
            let piv = a[(k, k)];
            for i in k + 1..n {
                let f = a[(i, k)] / piv;
                a[(i, k)] = f;
                if f != T::zero() {
                    for j in k + 1..n {
                        a[(i, j)] = a[(i, j)] - f * a[(k, j)];
                    }
                }
            }
        }
        Ok(Lu { lu: a, perm, perm_sign: sign })
    }

    /// `(log|det|, sign)`.
    pub fn log_det(&self) -> (T, T) {
        let mut log_abs = T::zero();
        let mut sign = self.perm_sign;
        for i in 0..self.lu.rows() {
            let u = self.lu[(i, i)];
            log_abs = log_abs + u.abs().ln();
            if u < T::zero() {
                sign = -sign;
            }
        }
        (log_abs, sign)
    }

    /// Solves `m x = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.lu.rows();
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for k in 0..i {
                x[i] = x[i] - self.lu[(i, k)] * x[k];
            }
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                x[i] = x[i] - self.lu[(i, k)] * x[k];
            }
            x[i] = x[i] / self.lu[(i, i)];
        }
        x
    }

    /// Solves `mᵀ x = b`.
    pub fn solve_transpose(&self, b: &[T]) -> Vec<T> {
        let n = self.lu.rows();
        // mᵀ = Uᵀ Lᵀ P, so solve Uᵀ w = b, Lᵀ y = w, x = Pᵀ y
        let mut w = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                w[i] = w[i] - self.lu[(k, i)] * w[k];
            }
            w[i] = w[i] / self.lu[(i, i)];
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                w[i] = w[i] - self.lu[(k, i)] * w[k];
            }
        }
        let mut x = vec![T::zero(); n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = w[i];
        }
        x
    }

    pub fn inverse(&self) -> Matrix<T> {
        let n = self.lu.rows();
        let cols: Vec<Vec<T>> = (0..n)
            .map(|j| {
                let mut e = vec![T::zero(); n];
                e[j] = T::one();
                self.solve(&e)
            })
            .collect();
        Matrix::from_columns(&cols)
    }
}

/// `(log|det m|, sign)` via LU with partial pivoting.
pub fn logdet_lu<T: Scalar>(m: &Matrix<T>) -> Result<(T, T)> {
    Ok(Lu::factor(m)?.log_det())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn svd_of_diagonal_and_identity() {
        let s = svd(&Matrix::from_diag(&[1.0, 3.0])).unwrap();
        assert_eq!(s.singular_values, vec![3.0, 1.0]);
        let id = svd(&Matrix::<f64>::identity(4)).unwrap();
        assert!(id.singular_values.iter().all(|&x| (x - 1.0).abs() < 1e-15));
    }

    #[test]
    fn svd_of_wide_matrix() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        let s = svd(&m).unwrap();
        assert_eq!(s.singular_values.len(), 2);
        let r = s.reconstruct();
        assert!(r.sub(&m).frobenius_norm() < 1e-12 * m.frobenius_norm());
    }

    #[test]
    fn svd_rank_deficient_has_orthonormal_u() {
        let m = Matrix::<f64>::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0], vec![0.0, 0.0]]);
        let s = svd(&m).unwrap();
        assert_abs_diff_eq!(s.singular_values[0], 2.0, epsilon = 1e-14);
        assert!(s.singular_values[1].abs() < 1e-14);
        let utu = s.u.transpose().matmul(&s.u);
        assert!(utu.sub(&Matrix::identity(2)).frobenius_norm() < 1e-12);
    }

    #[test]
    fn svd_converges_on_block_triangular_jacobian() {
        let m = Matrix::from_rows(&[
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.26328631170092226, -0.12837332852426545, 0.7116705390417459, 0.0],
            vec![-0.48930466290143815, 0.3308278386449559, 0.0, 0.6494610310522968],
        ]);
        let s = svd(&m).unwrap();
        assert!(s.reconstruct().sub(&m).frobenius_norm() < 1e-14);
    }

    #[test]
    fn svd_rejects_nan() {
        let m = Matrix::from_rows(&[vec![1.0, f64::NAN], vec![0.0, 1.0]]);
        assert!(matches!(svd(&m), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn power_iteration_examples() {
        let a = Matrix::from_rows(&[vec![3.0, 0.0], vec![0.0, 1.0]]);
        assert_abs_diff_eq!(spectral_norm_power_iter(&a, 500, 1e-12).unwrap(), 3.0, epsilon = 1e-8);
        let nil = Matrix::from_rows(&[vec![0.0, 2.0], vec![0.0, 0.0]]);
        let oracle = svd(&nil).unwrap().max();
        assert_abs_diff_eq!(oracle, 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(spectral_norm_power_iter(&nil, 500, 1e-12).unwrap(), oracle, epsilon = 1e-8);
        let id = Matrix::<f64>::identity(4);
        assert_abs_diff_eq!(spectral_norm_power_iter(&id, 10, 1e-12).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(spectral_norm_power_iter(&Matrix::<f64>::zeros(3, 3), 10, 1e-9).unwrap(), 0.0);
    }

    #[test]
    fn power_iteration_reports_no_convergence() {
        // equal top singular values rotate slowly only if the start vector is unlucky;
        // a single iteration on a gapped matrix cannot meet a 1e-15 tolerance
        let a = Matrix::from_rows(&[vec![1.0, 0.9], vec![0.9, 1.0]]);
        let b = Matrix::from_rows(&[vec![2.0, 0.1, 0.0], vec![0.3, 1.9, 0.2], vec![0.0, 0.1, 1.8]]);
        assert!(spectral_norm_power_iter(&b, 1, 1e-15).is_err());
        assert!(spectral_norm_power_iter(&a, 1000, 1e-12).is_ok());
    }

    #[test]
    fn logdet_examples() {
        let (l, s) = logdet_lu(&Matrix::from_diag(&[0.1, 1.0])).unwrap();
        assert_abs_diff_eq!(l, 0.1f64.ln(), epsilon = 1e-15);
        assert_eq!(s, 1.0);
        assert_eq!(logdet_lu(&Matrix::<f64>::identity(3)).unwrap(), (0.0, 1.0));
        let (l, s) = logdet_lu(&Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]])).unwrap();
        assert_abs_diff_eq!(l, 3f64.ln(), epsilon = 1e-15);
        assert_eq!(s, 1.0);
        let (l, s) = logdet_lu(&Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]])).unwrap();
        assert_abs_diff_eq!(l, 0.0, epsilon = 1e-15);
        assert_eq!(s, -1.0);
        assert!(matches!(
            logdet_lu(&Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]])),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn lu_solves_both_orientations() {
        let m = Matrix::from_rows(&[vec![4.0, 1.0, 2.0], vec![0.5, 3.0, 1.0], vec![1.0, -1.0, 5.0]]);
        let lu = Lu::factor(&m).unwrap();
        let b = vec![1.0, -2.0, 0.5];
        let x = lu.solve(&b);
        let r = m.matvec(&x);
        for (a, c) in r.iter().zip(&b) {
            assert_abs_diff_eq!(a, c, epsilon = 1e-13);
        }
        let xt = lu.solve_transpose(&b);
        let rt = m.matvec_t(&xt);
        for (a, c) in rt.iter().zip(&b) {
            assert_abs_diff_eq!(a, c, epsilon = 1e-13);
        }
        let inv = lu.inverse();
        assert!(inv.matmul(&m).sub(&Matrix::identity(3)).frobenius_norm() < 1e-13);
    }
}
