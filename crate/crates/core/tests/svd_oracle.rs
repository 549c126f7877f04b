use inverse_lab::numerics::{svd, Matrix, Rng};
use proptest::prelude::*;

/// `I − 2vvᵀ/‖v‖²`, orthogonal by construction.
fn householder(v: &[f64]) -> Matrix<f64> {
    let n = v.len();
    let nn: f64 = v.iter().map(|a| a * a).sum();
    Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } - 2.0 * v[i] * v[j] / nn)
}

fn reconstruct(s: &inverse_lab::numerics::Svd<f64>) -> Matrix<f64> {
    let k = s.singular_values.len();
    let us = Matrix::from_fn(s.u.rows(), k, |i, j| s.u.as_slice()[i * k + j] * s.singular_values[j]);
    us.matmul(&s.v.transpose())
}

#[test]
fn recovers_planted_spectrum() {
    let u = householder(&[1.0, -2.0, 0.5, 3.0, 1.5]);
    let v = householder(&[0.3, 0.1, -1.0, 2.0, -0.7]);
    let a = u.matmul(&Matrix::from_diag(&[5.0, 4.0, 3.0, 2.0, 1.0])).matmul(&v.transpose());
    let s = svd(&a).unwrap();
    for (got, want) in s.singular_values.iter().zip([5.0, 4.0, 3.0, 2.0, 1.0]) {
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }
    assert!(reconstruct(&s).sub(&a).frobenius_norm() < 1e-12);
}

#[test]
fn planted_spectrum_with_wide_range() {
    let u = householder(&[2.0, 1.0, -1.0, 0.5]);
    let v = householder(&[-0.4, 1.0, 1.0, 3.0]);
    let sig = [1e3, 1.0, 1e-3, 1e-6];
    let a = u.matmul(&Matrix::from_diag(&sig)).matmul(&v.transpose());
    let s = svd(&a).unwrap();
    for (got, want) in s.singular_values.iter().zip(sig) {
        assert!((got - want).abs() <= 1e-12 * 1e3, "{got} vs {want}");
    }
}

fn orthonormal_columns(m: &Matrix<f64>) -> f64 {
    let g = m.transpose().matmul(m);
    g.sub(&Matrix::identity(g.rows())).frobenius_norm()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn factorization_is_consistent(rows in 1usize..7, cols in 1usize..7, seed in any::<u64>()) {
        let mut rng = Rng::new(seed, 0);
        let a = Matrix::from_fn(rows, cols, |_, _| rng.normal());
        let s = svd(&a).unwrap();
        prop_assert_eq!(s.singular_values.len(), rows.min(cols));
        prop_assert!(s.singular_values.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(s.singular_values.iter().all(|&v| v >= 0.0));
        prop_assert!(reconstruct(&s).sub(&a).frobenius_norm() <= 1e-12 * a.frobenius_norm().max(1.0));
        prop_assert!(orthonormal_columns(&s.u) < 1e-12);
        prop_assert!(orthonormal_columns(&s.v) < 1e-12);
        // ‖A‖_F² = Σσ²
        let fro2: f64 = s.singular_values.iter().map(|v| v * v).sum();
        prop_assert!((fro2 - a.frobenius_norm().powi(2)).abs() <= 1e-12 * fro2.max(1.0));
    }
}
