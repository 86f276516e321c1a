//! Matrix-free linear maps between Euclidean spaces and the Krylov/power
//! iterations built on them.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A linear map `R^n -> R^m` with its Euclidean adjoint.
pub trait LinearMap {
    fn domain_dim(&self) -> usize;
    fn range_dim(&self) -> usize;
    fn apply(&self, x: &[f64], out: &mut [f64]);
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]);
}

impl<T: LinearMap + ?Sized> LinearMap for &T {
    fn domain_dim(&self) -> usize {
        (**self).domain_dim()
    }
    fn range_dim(&self) -> usize {
        (**self).range_dim()
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        (**self).apply(x, out)
    }
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        (**self).apply_adjoint(y, out)
    }
}

impl<T: LinearMap + ?Sized> LinearMap for alloc::boxed::Box<T> {
    fn domain_dim(&self) -> usize {
        (**self).domain_dim()
    }
    fn range_dim(&self) -> usize {
        (**self).range_dim()
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        (**self).apply(x, out)
    }
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        (**self).apply_adjoint(y, out)
    }
}

impl LinearMap for DMatrix<f64> {
    fn domain_dim(&self) -> usize {
        self.ncols()
    }
    fn range_dim(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..self.ncols()).map(|j| self[(i, j)] * x[j]).sum();
        }
    }
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = (0..self.nrows()).map(|i| self[(i, j)] * y[i]).sum();
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Identity(pub usize);

impl LinearMap for Identity {
    fn domain_dim(&self) -> usize {
        self.0
    }
    fn range_dim(&self) -> usize {
        self.0
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
    }
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        out.copy_from_slice(y);
    }
}

/// `A − B` for maps of equal shape.
pub struct Difference<'a> {
    pub left: &'a dyn LinearMap,
    pub right: &'a dyn LinearMap,
}

impl LinearMap for Difference<'_> {
    fn domain_dim(&self) -> usize {
        self.left.domain_dim()
    }
    fn range_dim(&self) -> usize {
        self.left.range_dim()
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let mut tmp = vec![0.0; out.len()];
        self.left.apply(x, out);
        self.right.apply(x, &mut tmp);
        for (o, t) in out.iter_mut().zip(&tmp) {
            *o -= t;
        }
    }
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        let mut tmp = vec![0.0; out.len()];
        self.left.apply_adjoint(y, out);
        self.right.apply_adjoint(y, &mut tmp);
        for (o, t) in out.iter_mut().zip(&tmp) {
            *o -= t;
        }
    }
}

/// Materializes a map as a dense matrix, column by column.
pub fn to_dense(map: &dyn LinearMap) -> DMatrix<f64> {
    let (m, n) = (map.range_dim(), map.domain_dim());
    let mut a = DMatrix::zeros(m, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; m];
    for j in 0..n {
        e[j] = 1.0;
        map.apply(&e, &mut col);
        for i in 0..m {
            a[(i, j)] = col[i];
        }
        e[j] = 0.0;
    }
    a
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// `y += s * x`
pub fn axpy(s: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

pub fn random_unit(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    let s = norm(&v);
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
    v
}

/// Largest relative pairing defect |⟨Ax, y⟩ − ⟨x, A*y⟩| / (‖Ax‖‖y‖ + ‖x‖‖A*y‖)
/// over `trials` random pairs.
pub fn adjoint_mismatch(map: &dyn LinearMap, trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, m) = (map.domain_dim(), map.range_dim());
    let mut ax = vec![0.0; m];
    let mut aty = vec![0.0; n];
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let x = random_unit(n, &mut rng);
        let y = random_unit(m, &mut rng);
        map.apply(&x, &mut ax);
        map.apply_adjoint(&y, &mut aty);
        let scale = norm(&ax) * norm(&y) + norm(&x) * norm(&aty);
        if scale > 0.0 {
            worst = worst.max((dot(&ax, &y) - dot(&x, &aty)).abs() / scale);
        }
    }
    worst
}

/// Power iteration on A*A; returns the estimate of ‖A‖ and the iterations used.
pub fn operator_norm(map: &dyn LinearMap, max_iter: usize, rel_tol: f64, seed: u64) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = random_unit(map.domain_dim(), &mut rng);
    let mut av = vec![0.0; map.range_dim()];
    let mut w = vec![0.0; map.domain_dim()];
    let mut estimate = 0.0;
    for it in 1..=max_iter {
        map.apply(&v, &mut av);
        map.apply_adjoint(&av, &mut w);
        let lambda = norm(&w);
        if lambda == 0.0 {
            return (0.0, it);
        }
        let next = libm::sqrt(lambda);
        w.iter_mut().for_each(|x| *x /= lambda);
        core::mem::swap(&mut v, &mut w);
        if it > 1 && (next - estimate).abs() <= rel_tol * next {
            return (next, it);
        }
        estimate = next;
    }
    (estimate, max_iter)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOutcome {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

/// Conjugate gradients for a symmetric positive definite operator, starting
/// from the contents of `x`. Stops when ‖b − Ax‖ ≤ tol·‖b‖.
pub fn conjugate_gradient(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> CgOutcome {
    let n = b.len();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return CgOutcome { iterations: 0, relative_residual: 0.0, converged: true };
    }
    let mut ap = vec![0.0; n];
    apply(x, &mut ap);
    let mut r: Vec<f64> = b.iter().zip(&ap).map(|(bi, ai)| bi - ai).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let target = tol * bnorm;
    let mut it = 0;
    while libm::sqrt(rr) > target && it < max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let step = rr / pap;
        axpy(step, &p, x);
        axpy(-step, &ap, &mut r);
        let rr_next = dot(&r, &r);
        let beta = rr_next / rr;
        rr = rr_next;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        it += 1;
    }
    let rel = libm::sqrt(rr) / bnorm;
    CgOutcome { iterations: it, relative_residual: rel, converged: rel <= tol }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cg_solves_spd_system() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let b = [1.0, 2.0, 3.0];
        let mut x = [0.0; 3];
        let out = conjugate_gradient(|v, o| a.apply(v, o), &b, &mut x, 1e-14, 50);
        assert!(out.converged);
        let mut ax = [0.0; 3];
        a.apply(&x, &mut ax);
        assert!(dist(&ax, &b) < 1e-12);
    }

    #[test]
    fn dense_adjoint_is_transpose() {
        let a = DMatrix::from_fn(4, 3, |i, j| (i as f64 + 1.0) * (j as f64 - 1.3));
        assert!(adjoint_mismatch(&a, 10, 1) < 1e-15);
    }

    #[test]
    fn power_iteration_finds_largest_singular_value() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.5, -3.0, 1.0]));
        let (s, _) = operator_norm(&a, 500, 1e-12, 3);
        assert!((s - 3.0).abs() < 1e-9);
    }

    #[test]
    fn to_dense_roundtrip() {
        let a = DMatrix::from_fn(3, 5, |i, j| (i * 5 + j) as f64);
        assert_eq!(to_dense(&a), a);
    }
}
