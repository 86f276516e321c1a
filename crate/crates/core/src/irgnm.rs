//! Iteratively regularized Gauss–Newton method with convex constraints.
//!
//! Each step linearizes the forward operator at the current iterate and
//! solves
//!
//! ```text
//! x_{n+1} = argmin_{x ∈ C} ‖F′[x_n](x − x_n) + F(x_n) − g_δ‖² + α_n ‖x − x₀‖²
//! ```
//!
//! with α_n = α₀ qⁿ. With a positive combined noise level δ̄ the iteration
//! stops at the first N with α_N < η δ̄; in noise-free mode it runs to
//! `max_iters`.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fit::{loglog_fit, SlopeFit};
use crate::linalg::{self, LinearMap};
use crate::tikhonov::{solve_from, LinearProblem, SsnConfig};

/// A differentiable forward operator on Euclidean coordinates.
///
/// Implementations expose the state and the data in coordinates where both
/// the X- and the Y-metric are the plain dot product (whiten non-Euclidean
/// metrics before handing vectors out). `linearize` returns F′[x] together
/// with its adjoint as a [`LinearMap`]; it is called once per outer step, so
/// implementations may cache work there.
pub trait ForwardOperator {
    fn domain_dim(&self) -> usize;
    fn range_dim(&self) -> usize;
    /// Components subject to x_i ≥ 0.
    fn constrained(&self) -> &[bool];
    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn linearize<'a>(&'a self, x: &[f64]) -> Result<Box<dyn LinearMap + 'a>>;

    fn derivative_apply(&self, x: &[f64], h: &[f64]) -> Result<Vec<f64>> {
        let lin = self.linearize(x)?;
        let mut out = vec![0.0; self.range_dim()];
        lin.apply(h, &mut out);
        Ok(out)
    }

    fn derivative_adjoint(&self, x: &[f64], g: &[f64]) -> Result<Vec<f64>> {
        let lin = self.linearize(x)?;
        let mut out = vec![0.0; self.domain_dim()];
        lin.apply_adjoint(g, &mut out);
        Ok(out)
    }
}

/// Error bounds on the data, the operator and its derivative at x†.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseBudget {
    pub delta_g: f64,
    pub delta_f: f64,
    pub delta_fprime: f64,
}

impl NoiseBudget {
    pub fn combined(&self) -> Result<f64> {
        combined_noise(self)
    }
}

/// δ̄ = max(δ_g + δ_F, δ_F′²).
pub fn combined_noise(budget: &NoiseBudget) -> Result<f64> {
    let NoiseBudget { delta_g, delta_f, delta_fprime } = *budget;
    if !(delta_g >= 0.0 && delta_f >= 0.0 && delta_fprime >= 0.0) {
        return Err(Error::InvalidParameter(format!("noise levels must be nonnegative: {budget:?}")));
    }
    Ok((delta_g + delta_f).max(delta_fprime * delta_fprime))
}

/// Index N with α_N < η δ̄ ≤ α_n for all n < N.
///
/// Returns `alphas.len()` when no listed value falls below the threshold.
pub fn stopping_index(alphas: &[f64], eta: f64, delta_bar: f64) -> Result<usize> {
    if !(eta > 0.0) {
        return Err(Error::InvalidParameter(format!("eta must be positive, got {eta}")));
    }
    if delta_bar == 0.0 {
        return Err(Error::NoStoppingIndex);
    }
    if !(delta_bar > 0.0) {
        return Err(Error::InvalidParameter(format!("delta_bar must be nonnegative, got {delta_bar}")));
    }
    if alphas.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidParameter("alphas must be strictly decreasing".into()));
    }
    let threshold = eta * delta_bar;
    Ok(alphas.iter().position(|&a| a < threshold).unwrap_or(alphas.len()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Constrained subproblem in every step.
    Constrained,
    /// No constraint at all.
    Unconstrained,
    /// Unconstrained step followed by the metric projection onto C.
    Projected,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrgnmConfig {
    pub alpha0: f64,
    /// Ratio q = α_{n+1}/α_n ∈ (0, 1).
    pub decay: f64,
    pub eta: f64,
    /// Combined noise level; 0 selects noise-free mode.
    pub delta_bar: f64,
    pub max_iters: usize,
    pub variant: Variant,
    pub inner: SsnConfig,
}

impl Default for IrgnmConfig {
    fn default() -> Self {
        Self {
            alpha0: 1.0,
            decay: 2.0 / 3.0,
            eta: 1.0,
            delta_bar: 0.0,
            max_iters: 20,
            variant: Variant::Constrained,
            inner: SsnConfig::default(),
        }
    }
}

impl IrgnmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha0 > 0.0 && self.alpha0.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha0 must be positive, got {}", self.alpha0)));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::InvalidParameter(format!("decay must lie in (0, 1), got {}", self.decay)));
        }
        if !(self.eta > 0.0) || !(self.delta_bar >= 0.0) {
            return Err(Error::InvalidParameter("eta must be positive and delta_bar nonnegative".into()));
        }
        self.inner.validate()
    }

    /// α_n = α₀ qⁿ.
    pub fn alpha(&self, n: usize) -> f64 {
        let mut a = self.alpha0;
        for _ in 0..n {
            a *= self.decay;
        }
        a
    }
}

/// Distances of an iterate from a known exact solution.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IterateErrors {
    /// Distance in the solver's (X-metric) coordinates.
    pub total: f64,
    pub object: Option<f64>,
    pub phase: Option<f64>,
}

/// Supplies errors against ground truth for the trace.
pub trait TruthMetric {
    fn errors(&self, x: &[f64]) -> IterateErrors;
}

/// Plain Euclidean distance to a reference state.
pub struct EuclideanTruth<'a>(pub &'a [f64]);

impl TruthMetric for EuclideanTruth<'_> {
    fn errors(&self, x: &[f64]) -> IterateErrors {
        IterateErrors { total: linalg::dist(x, self.0), object: None, phase: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub n: usize,
    pub alpha: f64,
    /// ‖F(x_n) − g_δ‖ in data-space norm.
    pub residual: f64,
    pub errors: Option<IterateErrors>,
    /// ‖x_n − x†‖ / √α_n.
    pub theta: Option<f64>,
    /// Inner work spent producing x_n (zero for n = 0).
    pub ssn_iters: usize,
    pub cg_iters: usize,
    pub inner_converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// α_N < η δ̄.
    Discrepancy,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrgnmTrace {
    pub records: Vec<IterationRecord>,
    pub stopping_index: usize,
    pub reason: StopReason,
    /// Steps whose inner solve did not reach its KKT tolerance.
    pub inner_failures: usize,
}

impl IrgnmTrace {
    pub fn alphas(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.alpha).collect()
    }

    pub fn total_errors(&self) -> Option<Vec<f64>> {
        self.records.iter().map(|r| r.errors.map(|e| e.total)).collect()
    }

    /// Log-log fit of ‖x_n − x†‖ against √α_n over records `first..=last`.
    pub fn rate_fit(&self, first: usize, last: usize) -> Result<SlopeFit> {
        let errs = self.total_errors().ok_or(Error::InvalidParameter("trace has no error column".into()))?;
        let last = last.min(self.records.len().saturating_sub(1));
        if first > last {
            return Err(Error::RateFit { needed: 2, got: 0 });
        }
        let xs: Vec<f64> = self.records[first..=last].iter().map(|r| libm::sqrt(r.alpha)).collect();
        loglog_fit(&xs, &errs[first..=last], 2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrgnmOutcome {
    pub x: Vec<f64>,
    pub trace: IrgnmTrace,
}

pub fn run(
    op: &dyn ForwardOperator,
    g_delta: &[f64],
    x0: &[f64],
    cfg: &IrgnmConfig,
    truth: Option<&dyn TruthMetric>,
) -> Result<IrgnmOutcome> {
    cfg.validate()?;
    let n_dim = op.domain_dim();
    if x0.len() != n_dim || g_delta.len() != op.range_dim() || op.constrained().len() != n_dim {
        return Err(Error::Shape(format!(
            "state {} (expected {n_dim}), data {} (expected {})",
            x0.len(),
            g_delta.len(),
            op.range_dim()
        )));
    }
    let mask = op.constrained();
    if cfg.variant != Variant::Unconstrained && x0.iter().zip(mask).any(|(&v, &c)| c && v < 0.0) {
        return Err(Error::InvalidParameter("initial guess violates the constraint".into()));
    }
    let step_mask: Vec<bool> = match cfg.variant {
        Variant::Constrained => mask.to_vec(),
        Variant::Unconstrained | Variant::Projected => vec![false; n_dim],
    };

    let mut x = x0.to_vec();
    let mut records = Vec::new();
    let mut inner_failures = 0;
    let mut last_work = (0usize, 0usize, true);
    let mut n = 0;
    let reason = loop {
        let alpha = cfg.alpha(n);
        let fx = op.evaluate(&x)?;
        let residual = linalg::dist(&fx, g_delta);
        if !residual.is_finite() {
            return Err(Error::NonFinite("IRGNM residual"));
        }
        let errors = truth.map(|t| t.errors(&x));
        records.push(IterationRecord {
            n,
            alpha,
            residual,
            errors,
            theta: errors.map(|e| e.total / libm::sqrt(alpha)),
            ssn_iters: last_work.0,
            cg_iters: last_work.1,
            inner_converged: last_work.2,
        });

        if cfg.delta_bar > 0.0 && alpha < cfg.eta * cfg.delta_bar {
            break StopReason::Discrepancy;
        }
        if n >= cfg.max_iters {
            break StopReason::MaxIterations;
        }

        let lin = op.linearize(&x)?;
        let mut rhs = vec![0.0; op.range_dim()];
        lin.apply(&x, &mut rhs);
        for ((r, g), f) in rhs.iter_mut().zip(g_delta).zip(&fx) {
            *r += g - f;
        }
        let problem = LinearProblem::new(&*lin, rhs, x0.to_vec(), alpha, step_mask.clone())?;
        let mut start = x.clone();
        problem.project(&mut start);
        let sol = solve_from(&problem, &cfg.inner, &start)?;
        if !sol.report.converged {
            inner_failures += 1;
        }
        last_work = (sol.report.outer_iters, sol.report.total_cg_iters, sol.report.converged);
        x = sol.x;
        if cfg.variant == Variant::Projected {
            for (v, &c) in x.iter_mut().zip(mask) {
                if c && *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("IRGNM iterate"));
        }
        n += 1;
    };

    Ok(IrgnmOutcome { x, trace: IrgnmTrace { records, stopping_index: n, reason, inner_failures } })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorDiagnostics {
    /// Largest relative pairing defect of F′[x] over the random trials.
    pub adjoint_mismatch: f64,
    /// (t, ‖F(x + t h) − F(x) − t F′[x] h‖) for the dyadic step sweep.
    pub remainders: Vec<(f64, f64)>,
    /// Slope of the remainder in log-log scale; infinite when the remainder
    /// vanishes to rounding (linear operators).
    pub taylor_order: f64,
}

/// Adjoint pairing test and dyadic Taylor-remainder sweep at `x`.
///
/// Steps are `t0·2^{-k}` for k = 0..steps along a random unit direction.
pub fn check_operator(
    op: &dyn ForwardOperator,
    x: &[f64],
    trials: usize,
    t0: f64,
    steps: usize,
    seed: u64,
) -> Result<OperatorDiagnostics> {
    let lin = op.linearize(x)?;
    let adjoint_mismatch = linalg::adjoint_mismatch(&*lin, trials, seed);

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a11_0e5d);
    let h = linalg::random_unit(op.domain_dim(), &mut rng);
    let fx = op.evaluate(x)?;
    let mut dh = vec![0.0; op.range_dim()];
    lin.apply(&h, &mut dh);
    let scale = linalg::norm(&fx) + linalg::norm(&dh);

    let mut remainders = Vec::with_capacity(steps);
    let mut t = t0;
    let mut xt = vec![0.0; x.len()];
    for _ in 0..steps {
        for ((a, b), c) in xt.iter_mut().zip(x).zip(&h) {
            *a = b + t * c;
        }
        let ft = op.evaluate(&xt)?;
        let r: f64 = ft
            .iter()
            .zip(&fx)
            .zip(&dh)
            .map(|((a, b), c)| {
                let d = a - b - t * c;
                d * d
            })
            .sum();
        remainders.push((t, libm::sqrt(r)));
        t *= 0.5;
    }
    // points at the rounding floor carry no information about the order
    let floor = 1e-11 * scale.max(f64::MIN_POSITIVE);
    let usable: Vec<(f64, f64)> = remainders.iter().copied().filter(|&(_, r)| r > floor).collect();
    let taylor_order = if usable.len() < 3 {
        f64::INFINITY
    } else {
        let (ts, rs): (Vec<f64>, Vec<f64>) = usable.into_iter().unzip();
        loglog_fit(&ts, &rs, 3)?.slope
    };
    Ok(OperatorDiagnostics { adjoint_mismatch, remainders, taylor_order })
}

/// Largest observed ‖(F′[x₁] − F′[x₂])h‖ / (‖x₁ − x₂‖·‖h‖) over random
/// pairs x₁, x₂ in the ball of `radius` around `center`.
pub fn empirical_lipschitz(
    op: &dyn ForwardOperator,
    center: &[f64],
    radius: f64,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = op.domain_dim();
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let mut pick = || -> Vec<f64> {
            let u = linalg::random_unit(n, &mut rng);
            let r = radius * rng.random::<f64>();
            center.iter().zip(&u).map(|(c, v)| c + r * v).collect()
        };
        let x1 = pick();
        let x2 = pick();
        let h = linalg::random_unit(n, &mut rng);
        let d1 = op.derivative_apply(&x1, &h)?;
        let d2 = op.derivative_apply(&x2, &h)?;
        let gap = linalg::dist(&x1, &x2);
        if gap > 0.0 {
            worst = worst.max(linalg::dist(&d1, &d2) / gap);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Identity;

    struct LinearOp {
        n: usize,
        mask: Vec<bool>,
    }

    impl ForwardOperator for LinearOp {
        fn domain_dim(&self) -> usize {
            self.n
        }
        fn range_dim(&self) -> usize {
            self.n
        }
        fn constrained(&self) -> &[bool] {
            &self.mask
        }
        fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
            Ok(x.to_vec())
        }
        fn linearize<'a>(&'a self, _x: &[f64]) -> Result<Box<dyn LinearMap + 'a>> {
            Ok(Box::new(Identity(self.n)))
        }
    }

    #[test]
    fn combined_noise_examples() {
        let c = |g, f, d| combined_noise(&NoiseBudget { delta_g: g, delta_f: f, delta_fprime: d }).unwrap();
        assert_eq!(c(0.1, 0.0, 0.0), 0.1);
        assert_eq!(c(0.0, 0.0, 0.5), 0.25);
        assert!((c(0.01, 0.02, 0.2) - 0.04).abs() < 1e-17);
        assert!(combined_noise(&NoiseBudget { delta_g: -1.0, ..Default::default() }).is_err());
    }

    #[test]
    fn stopping_index_examples() {
        let a = [1.0, 0.5, 0.25, 0.125];
        assert_eq!(stopping_index(&a, 1.0, 0.3).unwrap(), 2);
        assert_eq!(stopping_index(&a, 1.0, 2.0).unwrap(), 0);
        assert_eq!(stopping_index(&a, 1.0, 0.25).unwrap(), 3);
        assert_eq!(stopping_index(&a, 0.5, 0.5).unwrap(), 3);
        assert!(matches!(stopping_index(&a, 1.0, 0.0), Err(Error::NoStoppingIndex)));
        assert!(stopping_index(&[1.0, 1.0], 1.0, 0.1).is_err());
    }

    #[test]
    fn identity_iterates_follow_closed_form() {
        let op = LinearOp { n: 3, mask: vec![false; 3] };
        let g = [1.0, -2.0, 0.5];
        let cfg = IrgnmConfig { variant: Variant::Unconstrained, max_iters: 12, ..Default::default() };
        let out = run(&op, &g, &[0.0; 3], &cfg, Some(&EuclideanTruth(&g))).unwrap();
        assert_eq!(out.trace.records.len(), 13);
        assert_eq!(out.trace.reason, StopReason::MaxIterations);
        // x_{n+1} = g/(1+α_n), so ‖x_{n+1} − g‖ = ‖g‖ α_n/(1+α_n)
        let gn = linalg::norm(&g);
        for w in out.trace.records.windows(2) {
            let expected = gn * w[0].alpha / (1.0 + w[0].alpha);
            let got = w[1].errors.unwrap().total;
            assert!((got - expected).abs() < 1e-10 * gn, "{got} vs {expected}");
            assert!(w[1].alpha < w[0].alpha);
            assert!((w[0].alpha / w[1].alpha - 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_start_is_a_fixed_point() {
        let op = LinearOp { n: 4, mask: vec![true; 4] };
        let xd = [0.0, 1.0, 2.0, 0.5];
        let out = run(&op, &xd, &xd, &IrgnmConfig::default(), Some(&EuclideanTruth(&xd))).unwrap();
        assert_eq!(out.trace.records[0].residual, 0.0);
        for r in &out.trace.records {
            assert!(r.errors.unwrap().total < 1e-12);
        }
    }

    #[test]
    fn discrepancy_rule_stops() {
        let op = LinearOp { n: 2, mask: vec![true; 2] };
        let cfg = IrgnmConfig { delta_bar: 0.1, eta: 1.0, max_iters: 100, ..Default::default() };
        let out = run(&op, &[1.0, 1.0], &[0.0; 2], &cfg, None).unwrap();
        let alphas = out.trace.alphas();
        assert_eq!(out.trace.reason, StopReason::Discrepancy);
        assert_eq!(out.trace.stopping_index, stopping_index(&alphas, 1.0, 0.1).unwrap());
        assert!(*alphas.last().unwrap() < 0.1);
        assert!(alphas[alphas.len() - 2] >= 0.1);
    }

    #[test]
    fn infeasible_start_is_rejected() {
        let op = LinearOp { n: 2, mask: vec![true; 2] };
        assert!(run(&op, &[1.0, 1.0], &[-1.0, 0.0], &IrgnmConfig::default(), None).is_err());
    }

    #[test]
    fn linear_operator_has_infinite_taylor_order() {
        let op = LinearOp { n: 5, mask: vec![false; 5] };
        let d = check_operator(&op, &[1.0, 2.0, 3.0, 4.0, 5.0], 4, 1.0, 10, 1).unwrap();
        assert!(d.taylor_order.is_infinite());
        assert!(d.adjoint_mismatch < 1e-15);
    }
}
