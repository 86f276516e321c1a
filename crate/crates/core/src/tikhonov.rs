//! Constrained linear Tikhonov regularization
//!
//! ```text
//! minimize ‖T x − y‖² + α ‖x − x₀‖²   subject to x_i ≥ 0 for constrained i
//! ```
//!
//! solved by a primal-dual active-set (semi-smooth Newton) iteration. With
//! the multiplier μ of the bound constraints the optimality system reads
//!
//! ```text
//! T*(T x − y) + α (x − x₀) − μ = 0,   μ ≥ 0,   x ≥ 0,   μ_i x_i = 0,
//! ```
//!
//! and a Newton step fixes the active set A = {i : μ_i − c·x_i > 0}, sets
//! x_A = 0 and solves the reduced normal equations on the complement with
//! conjugate gradients. For Hessians that are not M-matrices the plain
//! iteration can cycle; after a few steps without fewer sign violations the
//! solver falls back to exchanging one index at a time (largest index first),
//! which terminates for every positive definite Hessian.
//!
//! All vectors are Euclidean. Callers with another metric whiten first.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{self, conjugate_gradient, Difference, LinearMap};

/// One instance of the constrained quadratic subproblem.
pub struct LinearProblem<'a> {
    operator: &'a dyn LinearMap,
    rhs: Vec<f64>,
    anchor: Vec<f64>,
    alpha: f64,
    constrained: Vec<bool>,
}

impl<'a> LinearProblem<'a> {
    pub fn new(
        operator: &'a dyn LinearMap,
        rhs: Vec<f64>,
        anchor: Vec<f64>,
        alpha: f64,
        constrained: Vec<bool>,
    ) -> Result<Self> {
        let n = operator.domain_dim();
        if rhs.len() != operator.range_dim() || anchor.len() != n || constrained.len() != n {
            return Err(Error::Shape(format!(
                "operator {}x{}, rhs {}, anchor {}, mask {}",
                operator.range_dim(),
                n,
                rhs.len(),
                anchor.len(),
                constrained.len()
            )));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
        }
        if rhs.iter().chain(&anchor).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("LinearProblem"));
        }
        Ok(Self { operator, rhs, anchor, alpha, constrained })
    }

    /// Problem with every component constrained to be nonnegative.
    pub fn nonnegative(operator: &'a dyn LinearMap, rhs: Vec<f64>, anchor: Vec<f64>, alpha: f64) -> Result<Self> {
        let n = operator.domain_dim();
        Self::new(operator, rhs, anchor, alpha, vec![true; n])
    }

    /// Problem without constraints.
    pub fn unconstrained(operator: &'a dyn LinearMap, rhs: Vec<f64>, anchor: Vec<f64>, alpha: f64) -> Result<Self> {
        let n = operator.domain_dim();
        Self::new(operator, rhs, anchor, alpha, vec![false; n])
    }

    pub fn dim(&self) -> usize {
        self.anchor.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn anchor(&self) -> &[f64] {
        &self.anchor
    }

    pub fn constrained(&self) -> &[bool] {
        &self.constrained
    }

    pub fn operator(&self) -> &dyn LinearMap {
        self.operator
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut tx = vec![0.0; self.operator.range_dim()];
        self.operator.apply(x, &mut tx);
        let misfit = linalg::dist(&tx, &self.rhs);
        let reg = linalg::dist(x, &self.anchor);
        misfit * misfit + self.alpha * reg * reg
    }

    /// Gradient of half the objective: T*(T x − y) + α (x − x₀).
    pub fn half_gradient(&self, x: &[f64], out: &mut [f64]) {
        let mut r = vec![0.0; self.operator.range_dim()];
        self.operator.apply(x, &mut r);
        for (ri, yi) in r.iter_mut().zip(&self.rhs) {
            *ri -= yi;
        }
        self.operator.apply_adjoint(&r, out);
        for ((o, xi), ai) in out.iter_mut().zip(x).zip(&self.anchor) {
            *o += self.alpha * (xi - ai);
        }
    }

    /// Metric projection onto the constraint set.
    pub fn project(&self, x: &mut [f64]) {
        for (v, &c) in x.iter_mut().zip(&self.constrained) {
            if c && *v < 0.0 {
                *v = 0.0;
            }
        }
    }

    /// Scale of the stationarity test: ‖T*y‖ + α‖x₀‖.
    fn residual_scale(&self) -> f64 {
        let mut ty = vec![0.0; self.dim()];
        self.operator.apply_adjoint(&self.rhs, &mut ty);
        linalg::norm(&ty) + self.alpha * linalg::norm(&self.anchor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsnConfig {
    /// The c in the active-set predicate μ_i − c·x_i > 0.
    pub complementarity_scale: f64,
    pub max_outer: usize,
    /// Relative stationarity tolerance, measured against ‖T*y‖ + α‖x₀‖.
    pub kkt_tol: f64,
    /// Relative residual tolerance of the inner CG solves.
    pub cg_tol: f64,
    pub cg_max: usize,
    /// Full-exchange steps allowed without progress before single exchanges.
    pub backup_patience: usize,
    /// Random pairs for the adjoint sanity check; 0 disables it.
    pub adjoint_trials: usize,
}

impl Default for SsnConfig {
    fn default() -> Self {
        Self {
            complementarity_scale: 1.0,
            max_outer: 200,
            kkt_tol: 1e-9,
            cg_tol: 1e-11,
            cg_max: 5000,
            backup_patience: 3,
            adjoint_trials: 2,
        }
    }
}

impl SsnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.complementarity_scale > 0.0 && self.kkt_tol > 0.0 && self.cg_tol > 0.0)
            || self.max_outer == 0
            || self.cg_max == 0
        {
            return Err(Error::InvalidParameter(format!("SSN configuration must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// First-order optimality diagnostics at the returned point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktReport {
    /// ‖T*(Tx − y) + α(x − x₀) − μ‖.
    pub stationarity_residual: f64,
    /// Σ |x_i μ_i|; zero by construction of the active set.
    pub complementarity_residual: f64,
    /// Largest negative part of a constrained component before the final projection.
    pub feasibility_violation: f64,
    /// Most negative multiplier on the active set (0 when dual feasible).
    pub dual_violation: f64,
    pub outer_iters: usize,
    pub total_cg_iters: usize,
    pub active_count: usize,
    pub objective: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsnSolution {
    pub x: Vec<f64>,
    /// Multiplier of the nonnegativity constraints (zero off the active set).
    pub multiplier: Vec<f64>,
    pub report: KktReport,
}

fn active_key(active: &[bool]) -> Vec<u64> {
    active.chunks(64).map(|c| c.iter().enumerate().fold(0u64, |acc, (i, &b)| acc | ((b as u64) << i))).collect()
}

/// Solves from the projected anchor.
pub fn solve(problem: &LinearProblem<'_>, cfg: &SsnConfig) -> Result<SsnSolution> {
    let mut start = problem.anchor.clone();
    problem.project(&mut start);
    solve_from(problem, cfg, &start)
}

/// Solves starting from `start` (used to warm start from a previous iterate).
pub fn solve_from(problem: &LinearProblem<'_>, cfg: &SsnConfig, start: &[f64]) -> Result<SsnSolution> {
    cfg.validate()?;
    let n = problem.dim();
    if start.len() != n {
        return Err(Error::Shape(format!("start has {} components, expected {n}", start.len())));
    }
    if cfg.adjoint_trials > 0 {
        let mismatch = linalg::adjoint_mismatch(problem.operator, cfg.adjoint_trials, 0x5eed);
        if !(mismatch <= 1e-8) {
            return Err(Error::AdjointMismatch { mismatch });
        }
    }

    let op = problem.operator;
    let alpha = problem.alpha;
    let c = cfg.complementarity_scale;
    let tol = cfg.kkt_tol * problem.residual_scale();

    // right-hand side of the normal equations
    let mut b = vec![0.0; n];
    op.apply_adjoint(&problem.rhs, &mut b);
    for (bi, ai) in b.iter_mut().zip(&problem.anchor) {
        *bi += alpha * ai;
    }

    let mut x = start.to_vec();
    let mut grad = vec![0.0; n];
    problem.half_gradient(&x, &mut grad);
    let mut active: Vec<bool> = (0..n).map(|i| problem.constrained[i] && grad[i] - c * x[i] > 0.0).collect();

    let mut cg_tol = cfg.cg_tol.min(0.1 * cfg.kkt_tol);
    let mut tightened = false;
    let mut seen = BTreeSet::new();
    seen.insert(active_key(&active));
    let mut best_violations = usize::MAX;
    let mut patience = cfg.backup_patience;
    let mut single_exchange = false;

    let mut tx = vec![0.0; op.range_dim()];
    let mut report = KktReport::default();
    let mut mu = vec![0.0; n];
    let mut rhs_i = vec![0.0; n];

    for outer in 1..=cfg.max_outer {
        report.outer_iters = outer;

        // Newton step: x_A = 0, reduced normal equations on the inactive set
        for i in 0..n {
            if active[i] {
                x[i] = 0.0;
                rhs_i[i] = 0.0;
            } else {
                rhs_i[i] = b[i];
            }
        }
        let act = &active;
        let cg = conjugate_gradient(
            |v, out| {
                op.apply(v, &mut tx);
                op.apply_adjoint(&tx, out);
                for i in 0..n {
                    out[i] = if act[i] { 0.0 } else { out[i] + alpha * v[i] };
                }
            },
            &rhs_i,
            &mut x,
            cg_tol,
            cfg.cg_max,
        );
        report.total_cg_iters += cg.iterations;

        problem.half_gradient(&x, &mut grad);
        let mut stationarity = 0.0;
        let mut violations: Vec<usize> = Vec::new();
        for i in 0..n {
            if active[i] {
                mu[i] = grad[i];
                if mu[i] < 0.0 {
                    violations.push(i);
                }
            } else {
                mu[i] = 0.0;
                stationarity += grad[i] * grad[i];
                if problem.constrained[i] && x[i] < 0.0 {
                    violations.push(i);
                }
            }
        }
        let stationarity = libm::sqrt(stationarity);
        report.stationarity_residual = stationarity;

        if violations.is_empty() {
            if stationarity <= tol {
                report.converged = true;
                break;
            }
            // consistent active set but the inner solve was too loose
            if cg_tol > 1e-15 {
                cg_tol = (cg_tol * 1e-2).max(1e-16);
                continue;
            }
            break;
        }

        if violations.len() < best_violations {
            best_violations = violations.len();
            patience = cfg.backup_patience;
        } else if patience > 0 {
            patience -= 1;
        } else {
            single_exchange = true;
        }

        if single_exchange {
            let i = *violations.last().expect("nonempty");
            active[i] = !active[i];
        } else {
            for i in 0..n {
                active[i] = problem.constrained[i] && mu[i] - c * x[i] > 0.0;
            }
        }

        if !seen.insert(active_key(&active)) {
            // revisited active set: tighten the inner solves once, then
            // switch to single exchanges for the rest of the run
            if !tightened {
                tightened = true;
                cg_tol = (cg_tol * 1e-2).max(1e-16);
            }
            single_exchange = true;
        }
    }

    report.feasibility_violation =
        (0..n).filter(|&i| problem.constrained[i]).map(|i| (-x[i]).max(0.0)).fold(0.0, f64::max);
    report.dual_violation = mu.iter().map(|m| (-m).max(0.0)).fold(0.0, f64::max);
    problem.project(&mut x);
    report.complementarity_residual = x.iter().zip(&mu).map(|(a, m)| (a * m).abs()).sum();
    report.active_count = active.iter().filter(|&&a| a).count();
    report.objective = problem.objective(&x);
    Ok(SsnSolution { x, multiplier: mu, report })
}

/// Outcome of the data-stability check ‖x₁ − x₂‖ ≤ ‖y₁ − y₂‖/α.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityCheck {
    pub x1: SsnSolution,
    pub x2: SsnSolution,
    pub difference: f64,
    pub bound: f64,
    pub holds: bool,
}

#[allow(clippy::too_many_arguments)]
pub fn verify_stability(
    operator: &dyn LinearMap,
    y1: &[f64],
    y2: &[f64],
    anchor: &[f64],
    alpha: f64,
    constrained: &[bool],
    slack: f64,
    cfg: &SsnConfig,
) -> Result<StabilityCheck> {
    let p1 = LinearProblem::new(operator, y1.to_vec(), anchor.to_vec(), alpha, constrained.to_vec())?;
    let p2 = LinearProblem::new(operator, y2.to_vec(), anchor.to_vec(), alpha, constrained.to_vec())?;
    let x1 = solve(&p1, cfg)?;
    let x2 = solve(&p2, cfg)?;
    let difference = linalg::dist(&x1.x, &x2.x);
    let bound = linalg::dist(y1, y2) / alpha;
    let holds = difference <= bound * (1.0 + slack);
    Ok(StabilityCheck { x1, x2, difference, bound, holds })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproximationRow {
    pub alpha: f64,
    /// ‖x_α − x†‖
    pub error: f64,
    /// ‖T x_α − g‖
    pub residual: f64,
    /// error / (√α ‖ω‖)
    pub error_ratio: f64,
    /// residual / (α ‖ω‖)
    pub residual_ratio: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApproximationTable {
    pub x_dagger: Vec<f64>,
    pub exact_data: Vec<f64>,
    pub omega_norm: f64,
    pub rows: Vec<ApproximationRow>,
}

impl ApproximationTable {
    /// Both bounds hold on every row within relative `slack`.
    pub fn bounds_hold(&self, slack: f64) -> bool {
        self.rows.iter().all(|r| r.error_ratio <= 1.0 + slack && r.residual_ratio <= 1.0 + slack)
    }
}

/// Builds x† = P_C(T*ω + x₀) with exact data g = T x† and records the
/// regularization error for every α.
pub fn verify_approximation(
    operator: &dyn LinearMap,
    omega: &[f64],
    anchor: &[f64],
    constrained: &[bool],
    alphas: &[f64],
    cfg: &SsnConfig,
) -> Result<ApproximationTable> {
    let n = operator.domain_dim();
    if omega.len() != operator.range_dim() || anchor.len() != n || constrained.len() != n {
        return Err(Error::Shape("verify_approximation: inconsistent dimensions".into()));
    }
    let mut x_dagger = vec![0.0; n];
    operator.apply_adjoint(omega, &mut x_dagger);
    for ((x, a), &c) in x_dagger.iter_mut().zip(anchor).zip(constrained) {
        *x += a;
        if c && *x < 0.0 {
            *x = 0.0;
        }
    }
    let mut exact_data = vec![0.0; operator.range_dim()];
    operator.apply(&x_dagger, &mut exact_data);
    let omega_norm = linalg::norm(omega);

    let mut rows = Vec::with_capacity(alphas.len());
    let mut start = anchor.to_vec();
    for &alpha in alphas {
        let problem = LinearProblem::new(operator, exact_data.clone(), anchor.to_vec(), alpha, constrained.to_vec())?;
        problem.project(&mut start);
        let sol = solve_from(&problem, cfg, &start)?;
        let error = linalg::dist(&sol.x, &x_dagger);
        let mut tx = vec![0.0; operator.range_dim()];
        operator.apply(&sol.x, &mut tx);
        let residual = linalg::dist(&tx, &exact_data);
        let ratio = |v: f64, s: f64| {
            if s > 0.0 {
                v / s
            } else if v == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        };
        rows.push(ApproximationRow {
            alpha,
            error,
            residual,
            error_ratio: ratio(error, libm::sqrt(alpha) * omega_norm),
            residual_ratio: ratio(residual, alpha * omega_norm),
            converged: sol.report.converged,
        });
        start = sol.x;
    }
    Ok(ApproximationTable { x_dagger, exact_data, omega_norm, rows })
}

/// Outcome of the operator-perturbation check
/// ‖x₁ − x₂‖ ≤ √(3/2)·‖ω‖·‖T₁ − T₂‖.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationCheck {
    pub x_tilde: Vec<f64>,
    pub difference: f64,
    pub operator_gap: f64,
    pub bound: f64,
    pub holds: bool,
    pub converged: bool,
}

/// Minimizers of ‖T_i(x − x̃)‖² + α‖x − x₀‖² over C for two operators, with
/// x̃ = P_C(T₂*ω + x₀) built in. `operator_gap` may be supplied when ‖T₁ − T₂‖
/// is known in closed form; otherwise it is estimated by power iteration.
#[allow(clippy::too_many_arguments)]
pub fn verify_operator_perturbation(
    t1: &dyn LinearMap,
    t2: &dyn LinearMap,
    omega: &[f64],
    anchor: &[f64],
    constrained: &[bool],
    alpha: f64,
    operator_gap: Option<f64>,
    slack: f64,
    cfg: &SsnConfig,
) -> Result<PerturbationCheck> {
    let n = t2.domain_dim();
    let mut x_tilde = vec![0.0; n];
    t2.apply_adjoint(omega, &mut x_tilde);
    for ((x, a), &c) in x_tilde.iter_mut().zip(anchor).zip(constrained) {
        *x += a;
        if c && *x < 0.0 {
            *x = 0.0;
        }
    }
    let mut y1 = vec![0.0; t1.range_dim()];
    t1.apply(&x_tilde, &mut y1);
    let mut y2 = vec![0.0; t2.range_dim()];
    t2.apply(&x_tilde, &mut y2);
    let p1 = LinearProblem::new(t1, y1, anchor.to_vec(), alpha, constrained.to_vec())?;
    let p2 = LinearProblem::new(t2, y2, anchor.to_vec(), alpha, constrained.to_vec())?;
    let s1 = solve(&p1, cfg)?;
    let s2 = solve(&p2, cfg)?;
    let operator_gap =
        operator_gap.unwrap_or_else(|| linalg::operator_norm(&Difference { left: t1, right: t2 }, 2000, 1e-12, 17).0);
    let difference = linalg::dist(&s1.x, &s2.x);
    let bound = libm::sqrt(1.5) * linalg::norm(omega) * operator_gap;
    Ok(PerturbationCheck {
        x_tilde,
        difference,
        operator_gap,
        bound,
        holds: difference <= bound * (1.0 + slack),
        converged: s1.report.converged && s2.report.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Identity;
    use nalgebra::DMatrix;

    #[test]
    fn identity_unconstrained_closed_form() {
        let id = Identity(4);
        let g = vec![1.0, -2.0, 0.5, 3.0];
        let alpha = 0.25;
        let p = LinearProblem::unconstrained(&id, g.clone(), vec![0.0; 4], alpha).unwrap();
        let s = solve(&p, &SsnConfig::default()).unwrap();
        assert!(s.report.converged);
        for (x, gi) in s.x.iter().zip(&g) {
            assert!((x - gi / (1.0 + alpha)).abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_projection_onto_constraint() {
        let id = Identity(1);
        for alpha in [1e-3, 0.5, 10.0] {
            let p = LinearProblem::nonnegative(&id, vec![-1.0], vec![0.0], alpha).unwrap();
            let s = solve(&p, &SsnConfig::default()).unwrap();
            assert!(s.report.converged);
            assert_eq!(s.x[0], 0.0);
            assert!((s.multiplier[0] - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_bad_problems() {
        let id = Identity(2);
        assert!(LinearProblem::nonnegative(&id, vec![0.0; 2], vec![0.0; 2], 0.0).is_err());
        assert!(LinearProblem::nonnegative(&id, vec![0.0; 3], vec![0.0; 2], 1.0).is_err());
        let p = LinearProblem::nonnegative(&id, vec![0.0; 2], vec![0.0; 2], 1.0).unwrap();
        let bad = SsnConfig { max_outer: 0, ..SsnConfig::default() };
        assert!(solve(&p, &bad).is_err());
    }

    struct Broken;
    impl LinearMap for Broken {
        fn domain_dim(&self) -> usize {
            3
        }
        fn range_dim(&self) -> usize {
            3
        }
        fn apply(&self, x: &[f64], out: &mut [f64]) {
            out.copy_from_slice(x);
        }
        fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
            out.copy_from_slice(y);
            out[0] *= 2.0;
        }
    }

    #[test]
    fn adjoint_pair_failure_is_reported() {
        let p = LinearProblem::nonnegative(&Broken, vec![1.0; 3], vec![0.0; 3], 1.0).unwrap();
        assert!(matches!(solve(&p, &SsnConfig::default()), Err(Error::AdjointMismatch { .. })));
    }

    #[test]
    fn zero_data_zero_anchor_gives_zero() {
        let a = DMatrix::from_fn(3, 3, |i, j| 1.0 / (1.0 + i as f64 + j as f64));
        let p = LinearProblem::nonnegative(&a, vec![0.0; 3], vec![0.0; 3], 1e-3).unwrap();
        let s = solve(&p, &SsnConfig::default()).unwrap();
        assert!(s.report.converged);
        assert!(s.x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stability_identity_closed_form() {
        let id = Identity(3);
        let y1 = [1.0, 2.0, 3.0];
        let y2 = [1.5, 1.0, 3.0];
        let alpha = 0.1;
        let chk = verify_stability(&id, &y1, &y2, &[0.0; 3], alpha, &[false; 3], 1e-10, &SsnConfig::default()).unwrap();
        let dy = linalg::dist(&y1, &y2);
        assert!((chk.difference - dy / (1.0 + alpha)).abs() < 1e-12);
        assert!(chk.holds);
        let same = verify_stability(&id, &y1, &y1, &[0.0; 3], alpha, &[true; 3], 0.0, &SsnConfig::default()).unwrap();
        assert_eq!(same.difference, 0.0);
        assert!(same.holds);
    }

    #[test]
    fn zero_source_gives_zero_error() {
        let a = DMatrix::from_fn(5, 4, |i, j| libm::exp(-((i as f64 - j as f64).powi(2))));
        let anchor = [0.5, 0.0, 1.0, 2.0];
        let t = verify_approximation(&a, &[0.0; 5], &anchor, &[true; 4], &[1.0, 1e-2, 1e-4], &SsnConfig::default())
            .unwrap();
        assert_eq!(t.x_dagger, anchor.to_vec());
        for r in &t.rows {
            assert!(r.error < 1e-12 && r.residual < 1e-12, "{r:?}");
        }
    }

    #[test]
    fn diagonal_unconstrained_matches_closed_form() {
        // x_α − x† = −α (D² + α)⁻¹ D ω componentwise
        let d = [2.0, 1.0, 0.3, 0.05];
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&d));
        let omega = [0.3, -1.0, 0.7, 2.0];
        let alphas = [1.0, 1e-1, 1e-2, 1e-3];
        let t = verify_approximation(&a, &omega, &[0.0; 4], &[false; 4], &alphas, &SsnConfig::default()).unwrap();
        for (row, &alpha) in t.rows.iter().zip(&alphas) {
            let expected: f64 = d
                .iter()
                .zip(&omega)
                .map(|(s, w)| {
                    let e = alpha * s * w / (s * s + alpha);
                    e * e
                })
                .sum::<f64>()
                .sqrt();
            assert!((row.error - expected).abs() <= 1e-10 * expected, "{} vs {expected}", row.error);
            assert!(row.error_ratio <= 1.0 && row.residual_ratio <= 1.0);
        }
    }
}
