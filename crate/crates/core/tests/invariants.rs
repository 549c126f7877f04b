use inverse_lab::blocks::{random_flow, serialize, Flow};
use inverse_lab::gradients::{batch_gradient, Path};
use inverse_lab::numerics::{svd, Precision, Rng};
use inverse_lab::stability::{flow_bound, jacobian_at, Domain};
use inverse_lab::training::{fd_penalty, invertibility_attack, AttackConfig, FdRegConfig, NfLoss};
use proptest::prelude::*;

fn flow_and_point(seed: u64, dim: usize, depth: usize) -> (Flow<f64>, Vec<f64>) {
    let mut rng = Rng::new(seed, 7);
    let f = random_flow(&mut rng, dim, depth);
    let x = (0..dim).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    (f, x)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn inverse_undoes_forward(seed in any::<u64>(), dim in 2usize..6, depth in 1usize..8) {
        let (f, x) = flow_and_point(seed, dim, depth);
        let (z, _) = f.eval(&x, Precision::F64).unwrap();
        let back = f.inverse(&z, Precision::F64).unwrap();
        for (a, b) in x.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn logdet_matches_singular_values(seed in any::<u64>(), dim in 2usize..6, depth in 1usize..8) {
        let (f, x) = flow_and_point(seed, dim, depth);
        let (_, logdet) = f.eval(&x, Precision::F64).unwrap();
        let (j, bad) = jacobian_at(&f, &x);
        prop_assert!(!bad);
        let s: f64 = svd(&j).unwrap().singular_values.iter().map(|v| v.ln()).sum();
        prop_assert!((logdet - s).abs() < 1e-6, "{logdet} vs {s}");
    }

    #[test]
    fn gradient_paths_agree(seed in any::<u64>(), dim in 2usize..5, depth in 1usize..6) {
        let (f, _) = flow_and_point(seed, dim, depth);
        let mut rng = Rng::new(seed, 8);
        let batch: Vec<Vec<f64>> = (0..3).map(|_| rng.normal_vec(dim)).collect();
        let a = batch_gradient(&f, &batch, &NfLoss, Precision::F64, Path::Standard);
        let b = batch_gradient(&f, &batch, &NfLoss, Precision::F64, Path::Memsave);
        let num: f64 = a.grad.iter().zip(&b.grad).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        let den: f64 = a.grad.iter().map(|p| p * p).sum::<f64>().sqrt();
        prop_assert!(num <= 1e-6 * den.max(1e-12));
    }

    #[test]
    fn params_and_serialization_roundtrip(seed in any::<u64>(), dim in 2usize..5, depth in 1usize..7) {
        let (mut f, x) = flow_and_point(seed, dim, depth);
        let p = f.params();
        f.set_params(&p);
        prop_assert_eq!(f.params(), p.clone());
        let g: Flow<f64> = serialize::from_json(&serialize::to_json(&f, serialize::Encoding::Base64)).unwrap();
        prop_assert_eq!(g.params(), p);
        prop_assert_eq!(g.eval(&x, Precision::F64).unwrap(), f.eval(&x, Precision::F64).unwrap());
    }

    #[test]
    fn bound_duality(seed in any::<u64>(), depth in 1usize..6) {
        let (f, _) = flow_and_point(seed, 2, depth);
        for dom in [None, Domain::symmetric(-1.0, 1.0).ok()] {
            let b = flow_bound(&f, dom.as_ref());
            prop_assert!(b.duality_holds());
        }
    }

    #[test]
    fn fd_penalty_is_nonnegative_and_finite(seed in any::<u64>(), depth in 1usize..5) {
        let (f, x) = flow_and_point(seed, 3, depth);
        let v = fd_penalty(&f, &x, &FdRegConfig::default(), &mut Rng::new(seed, 9)).unwrap();
        prop_assert!(v >= 0.0 && v.is_finite());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn attack_iterates_stay_in_ball(seed in any::<u64>(), radius in 1e-3f64..0.5) {
        let (f, x) = flow_and_point(seed, 2, 3);
        let cfg = AttackConfig { radius, iterations: 40, step: radius / 7.0, ..Default::default() };
        let r = invertibility_attack(&f, &x, &cfg).unwrap();
        prop_assert!(r.x.iter().zip(&x).all(|(a, b)| (a - b).abs() <= radius + 1e-12));
        prop_assert_eq!(r.curve.len(), 41);
    }

    #[test]
    fn rng_streams_are_reproducible(seed in any::<u64>(), stream in any::<u64>()) {
        let a: Vec<f64> = { let mut r = Rng::new(seed, stream); (0..16).map(|_| r.normal()).collect() };
        let b: Vec<f64> = { let mut r = Rng::new(seed, stream); (0..16).map(|_| r.normal()).collect() };
        let c: Vec<f64> = { let mut r = Rng::new(seed, stream.wrapping_add(1)); (0..16).map(|_| r.normal()).collect() };
        prop_assert_eq!(&a, &b);
        prop_assert_ne!(a, c);
    }
}
