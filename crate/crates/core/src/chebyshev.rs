//! Tensor-product Chebyshev basis for the relative phase on Ω′, with the
//! H² Gram matrix G_kl = ∫ ψ_k ψ_l + ∇ψ_k·∇ψ_l + Δψ_k Δψ_l.
//!
//! Axis j of Ω′ = ∏[−L_j, L_j] is mapped onto [−1, 1] by t = x/L_j.
//! Solver-facing coordinates are whitened, ĉ = R c with G = RᵀR, so the
//! coefficient metric becomes the dot product.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::grid::{DomainBox, Grid};

/// Gauss–Legendre nodes and weights on [−1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = libm::cos(PI * (i as f64 + 0.75) / (n as f64 + 0.5));
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// P_n(x) and P_n′(x).
fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    (p1, n as f64 * (x * p1 - p0) / (x * x - 1.0))
}

/// T_k(t), T_k′(t), T_k″(t) for k = 0..=degree.
pub fn chebyshev_with_derivatives(degree: usize, t: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = degree + 1;
    let mut v = vec![0.0; n];
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    v[0] = 1.0;
    if n > 1 {
        v[1] = t;
        d1[1] = 1.0;
    }
    for k in 1..degree {
        v[k + 1] = 2.0 * t * v[k] - v[k - 1];
        d1[k + 1] = 2.0 * v[k] + 2.0 * t * d1[k] - d1[k - 1];
        d2[k + 1] = 4.0 * d1[k] + 2.0 * t * d2[k] - d2[k - 1];
    }
    (v, d1, d2)
}

/// One-dimensional integrals over [−L, L] in physical units.
struct AxisIntegrals {
    /// ∫ T_i T_j
    mass: DMatrix<f64>,
    /// ∫ T_i′ T_j′
    stiff: DMatrix<f64>,
    /// ∫ T_i″ T_j″
    bend: DMatrix<f64>,
    /// ∫ T_i″ T_j
    mixed: DMatrix<f64>,
}

impl AxisIntegrals {
    fn new(degree: usize, half: f64) -> Self {
        let n = degree + 1;
        let (nodes, weights) = gauss_legendre(degree + 2);
        let mut mass = DMatrix::zeros(n, n);
        let mut stiff = DMatrix::zeros(n, n);
        let mut bend = DMatrix::zeros(n, n);
        let mut mixed = DMatrix::zeros(n, n);
        for (&t, &w) in nodes.iter().zip(&weights) {
            let (v, d1, d2) = chebyshev_with_derivatives(degree, t);
            for i in 0..n {
                for j in 0..n {
                    mass[(i, j)] += w * v[i] * v[j];
                    stiff[(i, j)] += w * d1[i] * d1[j];
                    bend[(i, j)] += w * d2[i] * d2[j];
                    mixed[(i, j)] += w * d2[i] * v[j];
                }
            }
        }
        // dx = L dt, d/dx = L⁻¹ d/dt
        mass *= half;
        stiff /= half;
        bend /= half * half * half;
        mixed /= half;
        Self { mass, stiff, bend, mixed }
    }
}

/// Tensor Chebyshev basis on Ω′ with its H² Gram matrix and whitener.
#[derive(Debug, Clone)]
pub struct PhaseBasis {
    degrees: Vec<usize>,
    halfwidths: Vec<f64>,
    indices: Vec<Vec<usize>>,
    gram: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl PhaseBasis {
    /// `halfwidths` are the half side lengths L_j of Ω′.
    pub fn new(degrees: &[usize], halfwidths: &[f64]) -> Result<Self> {
        if degrees.is_empty() || degrees.len() != halfwidths.len() {
            return Err(Error::Shape(format!("{} degrees for {} axes", degrees.len(), halfwidths.len())));
        }
        if halfwidths.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidParameter("phase basis halfwidths must be positive".into()));
        }
        let axes: Vec<AxisIntegrals> =
            degrees.iter().zip(halfwidths).map(|(&d, &l)| AxisIntegrals::new(d, l)).collect();
        let indices = multi_indices(degrees);
        let k = indices.len();
        let dim = degrees.len();
        let mut gram = DMatrix::zeros(k, k);
        for (p, a) in indices.iter().enumerate() {
            for (q, b) in indices.iter().enumerate().skip(p) {
                let mass: Vec<f64> = (0..dim).map(|j| axes[j].mass[(a[j], b[j])]).collect();
                let prod_except =
                    |skip: &[usize]| -> f64 { (0..dim).filter(|j| !skip.contains(j)).map(|j| mass[j]).product() };
                let mut v = mass.iter().product::<f64>();
                for s in 0..dim {
                    v += axes[s].stiff[(a[s], b[s])] * prod_except(&[s]);
                    v += axes[s].bend[(a[s], b[s])] * prod_except(&[s]);
                    for r in 0..dim {
                        if r != s {
                            // ∂²_s ψ_a · ∂²_r ψ_b
                            v += axes[s].mixed[(a[s], b[s])] * axes[r].mixed[(b[r], a[r])] * prod_except(&[s, r]);
                        }
                    }
                }
                gram[(p, q)] = v;
                gram[(q, p)] = v;
            }
        }
        let chol = match Cholesky::new(gram.clone()) {
            Some(c) => c,
            None => {
                let eig = gram.clone().symmetric_eigen();
                let lo = eig.eigenvalues.min();
                let hi = eig.eigenvalues.max();
                return Err(Error::GramIndefinite { pivot: lo, condition: hi / lo.abs().max(f64::MIN_POSITIVE) });
            }
        };
        Ok(Self { degrees: degrees.to_vec(), halfwidths: halfwidths.to_vec(), indices, gram, chol })
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn halfwidths(&self) -> &[f64] {
        &self.halfwidths
    }

    /// Number of basis functions.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Per-axis degrees of each basis function, last axis fastest.
    pub fn multi_indices(&self) -> &[Vec<usize>] {
        &self.indices
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Ratio of extreme Gram eigenvalues.
    pub fn condition(&self) -> f64 {
        let eig = self.gram.clone().symmetric_eigen();
        eig.eigenvalues.max() / eig.eigenvalues.min()
    }

    /// ‖c‖_G = √(cᵀ G c).
    pub fn norm(&self, c: &[f64]) -> f64 {
        let v = DVector::from_column_slice(c);
        libm::sqrt((v.transpose() * &self.gram * &v)[(0, 0)].max(0.0))
    }

    /// ĉ = R c.
    pub fn whiten(&self, c: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(c);
        (self.chol.l().transpose() * v).as_slice().to_vec()
    }

    /// c = R⁻¹ ĉ.
    pub fn unwhiten(&self, hat: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(hat);
        let c = self.chol.l().transpose().solve_upper_triangular(&v).expect("Cholesky factor has positive diagonal");
        c.as_slice().to_vec()
    }

    /// R⁻ᵀ b: maps an L²-pairing vector b_k = ⟨v, ψ_k⟩ to whitened coordinates.
    pub fn whiten_dual(&self, b: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(b);
        let c = self.chol.l().solve_lower_triangular(&v).expect("Cholesky factor has positive diagonal");
        c.as_slice().to_vec()
    }

    /// G⁻¹ b, the Riesz representative in the coefficient metric.
    pub fn riesz(&self, b: &[f64]) -> Vec<f64> {
        self.chol.solve(&DVector::from_column_slice(b)).as_slice().to_vec()
    }

    /// φ(x) at a physical point.
    pub fn evaluate_at(&self, c: &[f64], point: &[f64]) -> f64 {
        let tables: Vec<Vec<f64>> = self
            .degrees
            .iter()
            .zip(&self.halfwidths)
            .zip(point)
            .map(|((&d, &l), &x)| chebyshev_with_derivatives(d, x / l).0)
            .collect();
        self.indices
            .iter()
            .zip(c)
            .map(|(idx, &ck)| ck * idx.iter().enumerate().map(|(j, &i)| tables[j][i]).product::<f64>())
            .sum()
    }

    /// Tabulates every basis function at the cell centers of `grid`.
    pub fn sample(&self, grid: &Grid) -> Result<BasisSamples> {
        if grid.ndim() != self.degrees.len() {
            return Err(Error::Shape(format!("{}-D grid for {}-D phase basis", grid.ndim(), self.degrees.len())));
        }
        let axis_tables: Vec<Vec<Vec<f64>>> = (0..grid.ndim())
            .map(|j| {
                (0..grid.dims()[j])
                    .map(|i| {
                        chebyshev_with_derivatives(self.degrees[j], grid.center_coord(j, i) / self.halfwidths[j]).0
                    })
                    .collect()
            })
            .collect();
        let n = grid.len();
        let mut values = vec![0.0; self.len() * n];
        let mut idx = vec![0usize; grid.ndim()];
        for p in 0..n {
            grid.unravel(p, &mut idx);
            for (k, deg) in self.indices.iter().enumerate() {
                values[k * n + p] = deg.iter().enumerate().map(|(j, &d)| axis_tables[j][idx[j]][d]).product();
            }
        }
        Ok(BasisSamples { grid: grid.clone(), count: self.len(), values })
    }
}

/// Basis functions tabulated on a grid.
#[derive(Debug, Clone)]
pub struct BasisSamples {
    grid: Grid,
    count: usize,
    values: Vec<f64>,
}

impl BasisSamples {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let n = self.grid.len();
        &self.values[k * n..(k + 1) * n]
    }

    /// Σ_k c_k ψ_k on the grid.
    pub fn synthesize(&self, c: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        for (k, &ck) in c.iter().enumerate().take(self.count) {
            if ck != 0.0 {
                crate::linalg::axpy(ck, self.row(k), &mut out);
            }
        }
        out
    }

    /// b_k = Σ_x ψ_k(x) v(x) dV.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let dv = self.grid.voxel_volume();
        (0..self.count).map(|k| crate::linalg::dot(self.row(k), v) * dv).collect()
    }
}

fn multi_indices(degrees: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for &d in degrees {
        let mut next = Vec::with_capacity(out.len() * (d + 1));
        for prefix in &out {
            for i in 0..=d {
                let mut v = prefix.clone();
                v.push(i);
                next.push(v);
            }
        }
        out = next;
    }
    out
}

/// Basis on the extended box Ω′ of `domain`.
pub fn build_phase_basis(degrees: &[usize], domain: &DomainBox) -> Result<PhaseBasis> {
    PhaseBasis::new(degrees, &domain.extended_halfwidths())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(5);
        for p in 0..10 {
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(p)).sum();
            let exact = if p % 2 == 1 { 0.0 } else { 2.0 / (p as f64 + 1.0) };
            assert!((q - exact).abs() < 1e-14, "degree {p}: {q} vs {exact}");
        }
    }

    #[test]
    fn chebyshev_derivatives_match_closed_forms() {
        // T_3 = 4t³ − 3t, T_4 = 8t⁴ − 8t² + 1
        let t = 0.37;
        let (v, d1, d2) = chebyshev_with_derivatives(4, t);
        assert!((v[3] - (4.0 * t * t * t - 3.0 * t)).abs() < 1e-14);
        assert!((d1[3] - (12.0 * t * t - 3.0)).abs() < 1e-14);
        assert!((d2[3] - 24.0 * t).abs() < 1e-14);
        assert!((d2[4] - (96.0 * t * t - 16.0)).abs() < 1e-13);
        assert!((v[4] - libm::cos(4.0 * libm::acos(t))).abs() < 1e-14);
    }

    #[test]
    fn constant_basis_has_volume_gram() {
        let b = PhaseBasis::new(&[0, 0], &[3.0, 5.0]).unwrap();
        assert_eq!(b.len(), 1);
        assert!((b.gram()[(0, 0)] - 60.0).abs() < 1e-12);
    }

    #[test]
    fn degree_one_matches_hand_integration() {
        let (l, m) = (2.5, 4.0);
        let b = PhaseBasis::new(&[1, 0], &[l, m]).unwrap();
        let g = b.gram();
        let area = 2.0 * m;
        assert!((g[(0, 0)] - 2.0 * l * area).abs() < 1e-12);
        // ∫ (x/L)² dx + ∫ (1/L)² dx
        let expected = (2.0 * l / 3.0 + 2.0 / l) * area;
        assert!((g[(1, 1)] - expected).abs() < 1e-12 * expected);
        assert!(g[(0, 1)].abs() < 1e-13);
    }

    #[test]
    fn laplacian_cross_terms_enter() {
        // ψ = T_2(x/L)·T_2(y/M): Δψ has both ∂²_x and ∂²_y parts
        let b = PhaseBasis::new(&[2, 2], &[1.0, 1.0]).unwrap();
        let k = b.multi_indices().iter().position(|i| i == &[2, 2]).unwrap();
        // ψ = (2x²−1)(2y²−1); Δψ = 4(2y²−1) + 4(2x²−1)
        let n = 60;
        let (x, w) = gauss_legendre(n);
        let mut exact = 0.0;
        for (xi, wi) in x.iter().zip(&w) {
            for (yj, wj) in x.iter().zip(&w) {
                let tx = 2.0 * xi * xi - 1.0;
                let ty = 2.0 * yj * yj - 1.0;
                let psi = tx * ty;
                let gx = 4.0 * xi * ty;
                let gy = 4.0 * yj * tx;
                let lap = 4.0 * ty + 4.0 * tx;
                exact += wi * wj * (psi * psi + gx * gx + gy * gy + lap * lap);
            }
        }
        assert!((b.gram()[(k, k)] - exact).abs() < 1e-12 * exact);
    }

    #[test]
    fn whitening_preserves_norm() {
        let b = PhaseBasis::new(&[3, 2], &[1.7, 0.8]).unwrap();
        let c: Vec<f64> = (0..b.len()).map(|k| libm::sin(k as f64 + 0.3)).collect();
        let hat = b.whiten(&c);
        let e = crate::linalg::norm(&hat);
        assert!((e - b.norm(&c)).abs() < 1e-12 * e);
        let back = b.unwhiten(&hat);
        assert!(crate::linalg::dist(&back, &c) < 1e-12);
        let r = b.riesz(&b.gram().as_slice().iter().take(b.len()).copied().collect::<Vec<_>>());
        assert!((r[0] - 1.0).abs() < 1e-10 && r[1..].iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn gram_is_symmetric_positive_definite() {
        let b = PhaseBasis::new(&[7, 7], &[1200.0, 2000.0]).unwrap();
        let g = b.gram();
        assert!((g - g.transpose()).amax() < 1e-12 * g.amax());
        assert!(b.condition().is_finite());
    }

    #[test]
    fn samples_agree_with_pointwise_evaluation() {
        let grid = Grid::new(&[6, 5], &[0.5, 0.7]).unwrap();
        let ext = grid.extent();
        let b = PhaseBasis::new(&[3, 2], &[ext[0] / 2.0, ext[1] / 2.0]).unwrap();
        let s = b.sample(&grid).unwrap();
        let c: Vec<f64> = (0..b.len()).map(|k| 0.1 * k as f64 - 0.4).collect();
        let phi = s.synthesize(&c);
        let mut idx = [0usize; 2];
        for (p, &v) in phi.iter().enumerate() {
            grid.unravel(p, &mut idx);
            let pt = [grid.center_coord(0, idx[0]), grid.center_coord(1, idx[1])];
            assert!((v - b.evaluate_at(&c, &pt)).abs() < 1e-13);
        }
    }
}
