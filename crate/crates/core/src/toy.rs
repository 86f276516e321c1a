//! Synthetic inverse problems with a built-in projected source condition.
//!
//! The operators act on periodic 1-D signals. The linear part T is a
//! circulant Gaussian blur with strictly positive transfer function, so it
//! is injective and self-adjoint; the nonlinear operator is
//! F(x) = T x + β (T x)² with pointwise square. The exact solution is
//! constructed to satisfy x† = P_C(F′[x†]*ω + x₀) by a fixed-point
//! iteration, which makes the convergence theory checkable to rounding.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fft::Fft1d;
use crate::fit::{loglog_fit, SlopeFit};
use crate::irgnm::{ForwardOperator, NoiseBudget};
use crate::linalg::{self, LinearMap};

/// Periodic convolution with a real, even transfer function.
#[derive(Debug, Clone)]
pub struct Circulant {
    transfer: Vec<f64>,
    fft: Fft1d,
}

impl Circulant {
    pub fn new(transfer: Vec<f64>) -> Result<Self> {
        let n = transfer.len();
        if n == 0 {
            return Err(Error::Shape("empty transfer function".into()));
        }
        let asym = (1..n).map(|k| (transfer[k] - transfer[n - k]).abs()).fold(0.0, f64::max);
        if asym > 1e-12 * transfer.iter().map(|t| t.abs()).fold(0.0, f64::max) {
            return Err(Error::InvalidParameter("transfer function must be even".into()));
        }
        Ok(Self { fft: Fft1d::new(n), transfer })
    }

    /// Gaussian blur of standard deviation `width` (in samples) scaled by `gain`.
    pub fn gaussian(n: usize, width: f64, gain: f64) -> Result<Self> {
        if !(width > 0.0 && gain > 0.0) {
            return Err(Error::InvalidParameter(format!("width {width} and gain {gain} must be positive")));
        }
        let transfer = (0..n)
            .map(|k| {
                let nu = 2.0 * PI * signed_frequency(k, n) * width / n as f64;
                gain * libm::exp(-0.5 * nu * nu)
            })
            .collect();
        Self::new(transfer)
    }

    pub fn transfer(&self) -> &[f64] {
        &self.transfer
    }

    pub fn len(&self) -> usize {
        self.transfer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transfer.is_empty()
    }

    /// Operator norm, exact for circulants.
    pub fn norm(&self) -> f64 {
        self.transfer.iter().map(|t| t.abs()).fold(0.0, f64::max)
    }

    fn filter(&self, x: &[f64], out: &mut [f64]) {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft.forward(&mut buf);
        for (b, t) in buf.iter_mut().zip(&self.transfer) {
            *b *= *t;
        }
        self.fft.inverse(&mut buf);
        let scale = 1.0 / self.len() as f64;
        for (o, b) in out.iter_mut().zip(&buf) {
            *o = b.re * scale;
        }
    }
}

fn signed_frequency(k: usize, n: usize) -> f64 {
    if 2 * k <= n {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

impl LinearMap for Circulant {
    fn domain_dim(&self) -> usize {
        self.len()
    }
    fn range_dim(&self) -> usize {
        self.len()
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        self.filter(x, out)
    }
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        self.filter(y, out)
    }
}

/// F(x) = T x + β (T x)² + shift.
#[derive(Debug, Clone)]
pub struct QuadraticOperator {
    t: Circulant,
    beta: f64,
    shift: Vec<f64>,
    mask: Vec<bool>,
}

impl QuadraticOperator {
    pub fn new(t: Circulant, beta: f64, mask: Vec<bool>) -> Result<Self> {
        if !(beta >= 0.0) {
            return Err(Error::InvalidParameter(format!("beta must be nonnegative, got {beta}")));
        }
        if mask.len() != t.len() {
            return Err(Error::Shape("constraint mask length".into()));
        }
        let shift = vec![0.0; t.len()];
        Ok(Self { t, beta, shift, mask })
    }

    pub fn blur(&self) -> &Circulant {
        &self.t
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    fn blurred(&self, x: &[f64]) -> Vec<f64> {
        let mut tx = vec![0.0; x.len()];
        self.t.apply(x, &mut tx);
        tx
    }
}

/// F′[x] = diag(1 + 2β T x) ∘ T.
pub struct QuadraticDerivative<'a> {
    t: &'a Circulant,
    gain: Vec<f64>,
}

impl LinearMap for QuadraticDerivative<'_> {
    fn domain_dim(&self) -> usize {
        self.t.len()
    }
    fn range_dim(&self) -> usize {
        self.t.len()
    }
    fn apply(&self, h: &[f64], out: &mut [f64]) {
        self.t.apply(h, out);
        for (o, g) in out.iter_mut().zip(&self.gain) {
            *o *= g;
        }
    }
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        let scaled: Vec<f64> = y.iter().zip(&self.gain).map(|(a, b)| a * b).collect();
        self.t.apply_adjoint(&scaled, out);
    }
}

impl QuadraticOperator {
    pub fn derivative_at(&self, x: &[f64]) -> QuadraticDerivative<'_> {
        let gain = self.blurred(x).iter().map(|v| 1.0 + 2.0 * self.beta * v).collect();
        QuadraticDerivative { t: &self.t, gain }
    }
}

impl ForwardOperator for QuadraticOperator {
    fn domain_dim(&self) -> usize {
        self.t.len()
    }
    fn range_dim(&self) -> usize {
        self.t.len()
    }
    fn constrained(&self) -> &[bool] {
        &self.mask
    }
    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.t.len() {
            return Err(Error::Shape("toy state length".into()));
        }
        let mut tx = self.blurred(x);
        for (v, s) in tx.iter_mut().zip(&self.shift) {
            *v = *v + self.beta * *v * *v + s;
        }
        Ok(tx)
    }
    fn linearize<'a>(&'a self, x: &[f64]) -> Result<Box<dyn LinearMap + 'a>> {
        Ok(Box::new(self.derivative_at(x)))
    }
}

/// Parameters of a synthetic problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySpec {
    pub size: usize,
    /// Gaussian standard deviation of T in samples.
    pub width: f64,
    pub gain: f64,
    pub beta: f64,
    pub omega: Vec<f64>,
    pub anchor: Vec<f64>,
    pub constrained: Vec<bool>,
}

impl ToySpec {
    /// Source element with flat-in-√|k| spectrum and random phases, scaled
    /// to ‖ω‖ = ρ, and a constant anchor `offset·std(Tω)`; all components
    /// constrained.
    pub fn standard(size: usize, width: f64, gain: f64, beta: f64, rho: f64, offset: f64, seed: u64) -> Result<Self> {
        let t = Circulant::gaussian(size, width, gain)?;
        let omega = shaped_source(size, rho, seed);
        let mut tw = vec![0.0; size];
        t.apply(&omega, &mut tw);
        let mean = tw.iter().sum::<f64>() / size as f64;
        let std = libm::sqrt(tw.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / size as f64);
        Ok(Self { size, width, gain, beta, omega, anchor: vec![offset * std; size], constrained: vec![true; size] })
    }

    fn validate(&self) -> Result<()> {
        let n = self.size;
        if n == 0 || self.omega.len() != n || self.anchor.len() != n || self.constrained.len() != n {
            return Err(Error::Shape(format!("toy spec vectors must have length {n}")));
        }
        if self.anchor.iter().zip(&self.constrained).any(|(&a, &c)| c && a < 0.0) {
            return Err(Error::InvalidParameter("anchor must be feasible".into()));
        }
        Ok(())
    }
}

/// Real signal whose spectrum has modulus √(|k|+1) and uniformly random phase.
pub fn shaped_source(n: usize, rho: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = vec![Complex64::new(0.0, 0.0); n];
    for k in 0..=n / 2 {
        let amp = libm::sqrt(k as f64 + 1.0);
        let phase = if k == 0 || 2 * k == n { 0.0 } else { rng.random::<f64>() * 2.0 * PI };
        let sign = if (k == 0 || 2 * k == n) && rng.random::<bool>() { -1.0 } else { 1.0 };
        spec[k] = Complex64::from_polar(sign * amp, phase);
        if k != 0 && 2 * k != n {
            spec[n - k] = spec[k].conj();
        }
    }
    Fft1d::new(n).inverse(&mut spec);
    let mut w: Vec<f64> = spec.iter().map(|c| c.re).collect();
    let s = linalg::norm(&w);
    if s > 0.0 {
        w.iter_mut().for_each(|v| *v *= rho / s);
    }
    w
}

/// A synthetic problem with known exact solution and (possibly perturbed) data.
#[derive(Debug, Clone)]
pub struct ToyProblem {
    /// Exact operator F.
    pub exact: QuadraticOperator,
    /// Operator handed to the solver (F_δ); equals `exact` when unperturbed.
    pub operator: QuadraticOperator,
    pub spec: ToySpec,
    pub x_dagger: Vec<f64>,
    /// g = F(x†).
    pub exact_data: Vec<f64>,
    /// g_δ.
    pub data: Vec<f64>,
    pub noise: NoiseBudget,
    pub fixed_point_iters: usize,
}

impl ToyProblem {
    /// ‖x† − P_C(F′[x†]*ω + x₀)‖ for the exact operator.
    pub fn source_residual(&self) -> f64 {
        let next = source_map(&self.exact, &self.spec, &self.x_dagger);
        linalg::dist(&next, &self.x_dagger)
    }
}

fn source_map(op: &QuadraticOperator, spec: &ToySpec, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; spec.size];
    op.derivative_at(x).apply_adjoint(&spec.omega, &mut y);
    for ((v, a), &c) in y.iter_mut().zip(&spec.anchor).zip(&spec.constrained) {
        *v += a;
        if c && *v < 0.0 {
            *v = 0.0;
        }
    }
    y
}

/// Linear problem: x† = P_C(T*ω + x₀), g = T x†.
pub fn build_linear_toy(spec: &ToySpec) -> Result<ToyProblem> {
    if spec.beta != 0.0 {
        return Err(Error::InvalidParameter("linear toy requires beta = 0".into()));
    }
    build_nonlinear_toy(spec)
}

/// Nonlinear problem with x† from the fixed-point iteration
/// x ← P_C(F′[x]*ω + x₀), started at P_C(T*ω + x₀).
pub fn build_nonlinear_toy(spec: &ToySpec) -> Result<ToyProblem> {
    spec.validate()?;
    let t = Circulant::gaussian(spec.size, spec.width, spec.gain)?;
    let op = QuadraticOperator::new(t.clone(), spec.beta, spec.constrained.clone())?;
    let linear = QuadraticOperator::new(t, 0.0, spec.constrained.clone())?;
    let mut x = source_map(&linear, spec, &vec![0.0; spec.size]);
    let mut iters = 0;
    if spec.beta != 0.0 {
        let mut prev_step = f64::INFINITY;
        let mut factor: f64 = 0.0;
        loop {
            let next = source_map(&op, spec, &x);
            let step = linalg::dist(&next, &x);
            x = next;
            iters += 1;
            if step <= 1e-13 * linalg::norm(&x).max(1.0) {
                break;
            }
            if prev_step.is_finite() && prev_step > 0.0 {
                factor = factor.max(step / prev_step);
            }
            if factor >= 1.0 || iters >= 500 {
                return Err(Error::NoContraction { factor: factor.max(step / prev_step) });
            }
            prev_step = step;
        }
    }
    let exact_data = op.evaluate(&x)?;
    Ok(ToyProblem {
        exact: op.clone(),
        operator: op,
        spec: spec.clone(),
        x_dagger: x,
        data: exact_data.clone(),
        exact_data,
        noise: NoiseBudget::default(),
        fixed_point_iters: iters,
    })
}

/// Power-iteration settings used to calibrate the derivative perturbation.
const CALIBRATION_ITERS: usize = 20;
const CALIBRATION_TOL: f64 = 1e-3;

/// Copy of `problem` with g_δ = g + e (‖e‖ = δ_g), F_δ(x†) = F(x†) + e_F
/// (‖e_F‖ = δ_F) and a perturbed transfer function calibrated so that
/// ‖F_δ′[x†] − F′[x†]‖ ≈ δ_F′.
pub fn perturb(problem: &ToyProblem, budget: NoiseBudget, seed: u64) -> Result<ToyProblem> {
    budget.combined()?;
    let n = problem.spec.size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = problem.clone();
    out.noise = budget;

    let e = linalg::random_unit(n, &mut rng);
    out.data = problem.exact_data.iter().zip(&e).map(|(g, v)| g + budget.delta_g * v).collect();

    let exact_t = problem.exact.blur();
    let pattern = perturbation_pattern(n, &mut rng);
    let build = |s: f64| -> Result<QuadraticOperator> {
        let transfer = exact_t.transfer().iter().zip(&pattern).map(|(t, p)| t + s * p).collect();
        QuadraticOperator::new(Circulant::new(transfer)?, problem.exact.beta, problem.spec.constrained.clone())
    };
    let gap = |op: &QuadraticOperator| -> f64 {
        let d1 = op.derivative_at(&problem.x_dagger);
        let d2 = problem.exact.derivative_at(&problem.x_dagger);
        linalg::operator_norm(&linalg::Difference { left: &d1, right: &d2 }, CALIBRATION_ITERS, CALIBRATION_TOL, 99).0
    };

    let mut op = if budget.delta_fprime > 0.0 {
        // secant iteration on s ↦ ‖F_δ′ − F′‖, which is nearly linear
        let (mut s0, mut n0) = (0.0, 0.0);
        let mut s1 = budget.delta_fprime;
        let mut cand = build(s1)?;
        let mut n1 = gap(&cand);
        for _ in 0..12 {
            if (n1 - budget.delta_fprime).abs() <= 1e-4 * budget.delta_fprime || n1 == n0 {
                break;
            }
            let s2 = s1 + (budget.delta_fprime - n1) * (s1 - s0) / (n1 - n0);
            s0 = s1;
            n0 = n1;
            s1 = s2;
            cand = build(s1)?;
            n1 = gap(&cand);
        }
        cand
    } else {
        problem.operator.clone()
    };

    // shift so that F_δ(x†) = F(x†) + e_F exactly
    let unshifted = {
        let mut tmp = op.clone();
        tmp.shift = vec![0.0; n];
        tmp.evaluate(&problem.x_dagger)?
    };
    let e_f = linalg::random_unit(n, &mut rng);
    op.shift =
        problem.exact_data.iter().zip(&unshifted).zip(&e_f).map(|((g, u), v)| g - u + budget.delta_f * v).collect();
    out.operator = op;
    Ok(out)
}

/// Even perturbation pattern with one dominant frequency pair, so that the
/// power iteration separates the top singular value quickly.
fn perturbation_pattern(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut p = vec![0.0; n];
    for k in 0..=n / 2 {
        let v = 0.5 * (2.0 * rng.random::<f64>() - 1.0);
        p[k] = v;
        p[(n - k) % n] = v;
    }
    let spike = (n / 8).max(1).min(n / 2);
    p[spike] = 1.0;
    p[(n - spike) % n] = 1.0;
    p
}

/// Log-log slope fit for rate experiments (at least five points).
pub fn measure_rate(abscissa: &[f64], values: &[f64]) -> Result<SlopeFit> {
    loglog_fit(abscissa, values, 5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circulant_is_self_adjoint_and_positive() {
        let t = Circulant::gaussian(64, 2.0, 1.5).unwrap();
        assert!(t.transfer().iter().all(|&v| v > 0.0));
        assert!(linalg::adjoint_mismatch(&t, 5, 1) < 1e-14);
        assert!((t.norm() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn zero_source_zero_anchor_is_trivial() {
        let spec = ToySpec {
            size: 32,
            width: 2.0,
            gain: 1.0,
            beta: 0.0,
            omega: vec![0.0; 32],
            anchor: vec![0.0; 32],
            constrained: vec![true; 32],
        };
        let p = build_linear_toy(&spec).unwrap();
        assert!(p.x_dagger.iter().all(|&v| v == 0.0));
        assert!(p.exact_data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_toy_rejects_nonlinearity() {
        let spec = ToySpec::standard(32, 2.0, 1.0, 0.1, 1.0, 0.0, 1).unwrap();
        assert!(build_linear_toy(&spec).is_err());
    }

    #[test]
    fn shaped_source_has_requested_norm() {
        let w = shaped_source(100, 2.5, 4);
        assert!((linalg::norm(&w) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn measure_rate_recovers_noisy_power_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..12).map(|k| 10f64.powf(-0.5 * k as f64)).collect();
        let ys: Vec<f64> =
            xs.iter().map(|x| 3.0 * x.sqrt() * (1.0 + 0.01 * (2.0 * rng.random::<f64>() - 1.0))).collect();
        let f = measure_rate(&xs, &ys).unwrap();
        assert!((f.slope - 0.5).abs() < 0.02);
    }

    #[test]
    fn large_beta_is_rejected() {
        let spec = ToySpec::standard(64, 2.0, 3.0, 5.0, 10.0, 1.0, 2).unwrap();
        assert!(matches!(build_nonlinear_toy(&spec), Err(Error::NoContraction { .. })));
    }
}
