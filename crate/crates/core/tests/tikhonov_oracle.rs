use fourpi_core::linalg::{self, LinearMap};
use fourpi_core::tikhonov::{solve, verify_stability, LinearProblem, SsnConfig};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Exhaustive search over active sets: the unique candidate with x_I ≥ 0
/// and nonnegative multipliers on the active set.
fn enumerate(t: &DMatrix<f64>, y: &[f64], x0: &[f64], alpha: f64) -> Vec<f64> {
    let n = t.ncols();
    let h = t.transpose() * t + DMatrix::identity(n, n) * alpha;
    let b = t.transpose() * DVector::from_column_slice(y) + DVector::from_column_slice(x0) * alpha;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << n) {
        let inactive: Vec<usize> = (0..n).filter(|i| mask & (1 << i) == 0).collect();
        let mut x = vec![0.0; n];
        if !inactive.is_empty() {
            let k = inactive.len();
            let hi = DMatrix::from_fn(k, k, |r, c| h[(inactive[r], inactive[c])]);
            let bi = DVector::from_fn(k, |r, _| b[inactive[r]]);
            let sol = hi.cholesky().expect("SPD").solve(&bi);
            for (r, &i) in inactive.iter().enumerate() {
                x[i] = sol[r];
            }
        }
        let grad = &h * DVector::from_column_slice(&x) - &b;
        let primal = inactive.iter().map(|&i| (-x[i]).max(0.0)).fold(0.0, f64::max);
        let dual = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| (-grad[i]).max(0.0)).fold(0.0, f64::max);
        let violation = primal.max(dual);
        if best.as_ref().is_none_or(|(v, _)| violation < *v) {
            best = Some((violation, x));
        }
    }
    let (v, x) = best.unwrap();
    assert!(v < 1e-10, "no KKT-consistent active set (violation {v:e})");
    x
}

fn random_instance(rng: &mut ChaCha8Rng, n: usize) -> (DMatrix<f64>, Vec<f64>, Vec<f64>, f64) {
    let m = n + rng.random_range(0..4);
    let t = DMatrix::from_fn(m, n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
    let y: Vec<f64> = (0..m).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let x0: Vec<f64> = (0..n).map(|_| 0.3 * rng.random::<f64>()).collect();
    let alpha = 10f64.powf(-3.0 + 3.0 * rng.random::<f64>());
    (t, y, x0, alpha)
}

#[test]
fn matches_exhaustive_active_set_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfg = SsnConfig::default();
    for trial in 0..25 {
        let n = if trial < 5 { 12 } else { rng.random_range(2..=10) };
        let (t, y, x0, alpha) = random_instance(&mut rng, n);
        let p = LinearProblem::nonnegative(&t, y.clone(), x0.clone(), alpha).unwrap();
        let s = solve(&p, &cfg).unwrap();
        assert!(s.report.converged, "trial {trial}: {:?}", s.report);
        let oracle = enumerate(&t, &y, &x0, alpha);
        let err = linalg::dist(&s.x, &oracle);
        assert!(err <= 1e-8, "trial {trial}: distance {err:e}");
    }
}

#[test]
fn objective_beats_anchor_and_projected_unconstrained() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let (t, y, x0, alpha) = random_instance(&mut rng, 8);
        let p = LinearProblem::nonnegative(&t, y.clone(), x0.clone(), alpha).unwrap();
        let s = solve(&p, &SsnConfig::default()).unwrap();
        let free = LinearProblem::unconstrained(&t, y.clone(), x0.clone(), alpha).unwrap();
        let mut u = solve(&free, &SsnConfig::default()).unwrap().x;
        p.project(&mut u);
        let f = p.objective(&s.x);
        assert!(f <= p.objective(&x0) + 1e-12 && f <= p.objective(&u) + 1e-12);
    }
}

#[test]
fn mixed_free_and_constrained_blocks() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..10 {
        let (t, y, x0, alpha) = random_instance(&mut rng, 9);
        let mask: Vec<bool> = (0..9).map(|i| i % 3 != 0).collect();
        let p = LinearProblem::new(&t, y, x0, alpha, mask.clone()).unwrap();
        let s = solve(&p, &SsnConfig::default()).unwrap();
        assert!(s.report.converged);
        for ((x, m), &c) in s.x.iter().zip(&s.multiplier).zip(&mask) {
            if c {
                assert!(*x >= 0.0 && *m >= -1e-12 && x * m == 0.0);
            } else {
                assert_eq!(*m, 0.0);
            }
        }
    }
}

#[test]
fn stability_bound_on_smoothing_operators() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 24;
    for _ in 0..20 {
        let width = 1.0 + 3.0 * rng.random::<f64>();
        let t = DMatrix::from_fn(n, n, |i, j| {
            let d = i as f64 - j as f64;
            (-0.5 * d * d / (width * width)).exp()
        });
        let y1: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.3).collect();
        let y2: Vec<f64> = y1.iter().map(|v| v + 0.2 * (rng.random::<f64>() - 0.5)).collect();
        let alpha = 10f64.powf(-4.0 * rng.random::<f64>());
        let c =
            verify_stability(&t, &y1, &y2, &vec![0.0; n], alpha, &vec![true; n], 1e-10, &SsnConfig::default()).unwrap();
        assert!(c.holds, "{} > {}", c.difference, c.bound);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn kkt_invariants_hold(seed in any::<u64>(), n in 1usize..16) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (t, y, x0, alpha) = random_instance(&mut rng, n);
        let p = LinearProblem::nonnegative(&t, y.clone(), x0.clone(), alpha).unwrap();
        let cfg = SsnConfig::default();
        let s = solve(&p, &cfg).unwrap();
        prop_assert!(s.report.converged);
        prop_assert!(s.x.iter().all(|&v| v >= 0.0));
        prop_assert!(s.x.iter().zip(&s.multiplier).all(|(x, m)| x * m == 0.0));
        let mut ty = vec![0.0; n];
        t.apply_adjoint(&y, &mut ty);
        let scale = linalg::norm(&ty) + alpha * linalg::norm(&x0);
        prop_assert!(s.report.stationarity_residual <= cfg.kkt_tol * scale.max(1e-300));
    }

    #[test]
    fn identical_data_gives_identical_solutions(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (t, y, x0, alpha) = random_instance(&mut rng, 6);
        let c = verify_stability(&t, &y, &y, &x0, alpha, &[true; 6], 0.0, &SsnConfig::default()).unwrap();
        prop_assert_eq!(c.difference, 0.0);
        prop_assert!(c.holds);
    }
}
