//! Ground-truth generators and data simulation for 4Pi experiments.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fourpi::FourPiOperator;
use crate::grid::{Grid, ScalarField};
use crate::poisson::poisson_sample;

/// Smooth random curves drawn as Gaussian tubes of standard deviation
/// `width` (nm), with unit peak before summation.
pub fn filaments(grid: &Grid, count: usize, width: f64, seed: u64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nd = grid.ndim();
    let half: Vec<f64> = grid.extent().iter().map(|e| 0.5 * e).collect();
    let mut curves = Vec::with_capacity(count);
    for _ in 0..count {
        // x(s) = a + b s + c sin(k s + θ) per axis, s ∈ [−1, 1]
        let params: Vec<[f64; 5]> = (0..nd)
            .map(|j| {
                let h = half[j];
                [
                    (rng.random::<f64>() - 0.5) * h,
                    (rng.random::<f64>() - 0.5) * 1.6 * h,
                    (rng.random::<f64>() - 0.5) * 0.5 * h,
                    1.0 + 2.0 * rng.random::<f64>(),
                    2.0 * PI * rng.random::<f64>(),
                ]
            })
            .collect();
        curves.push(params);
    }
    let samples = 400;
    let points: Vec<Vec<f64>> = curves
        .iter()
        .flat_map(|p| {
            (0..samples).map(move |i| {
                let s = -1.0 + 2.0 * i as f64 / (samples - 1) as f64;
                p.iter().map(|q| q[0] + q[1] * s + q[2] * libm::sin(q[3] * s + q[4])).collect::<Vec<f64>>()
            })
        })
        .collect();
    let cut = 16.0 * width * width;
    ScalarField::from_fn(grid.clone(), |x| {
        let mut v = 0.0;
        for seg in points.chunks(samples) {
            let mut best = f64::INFINITY;
            for p in seg {
                let d: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                best = best.min(d);
            }
            if best < cut {
                v += libm::exp(-0.5 * best / (width * width));
            }
        }
        v
    })
}

/// Piecewise-constant block of value 1 covering the central fraction
/// `fraction` of each axis.
pub fn block(grid: &Grid, fraction: f64) -> ScalarField {
    let half: Vec<f64> = grid.extent().iter().map(|e| 0.5 * e * fraction).collect();
    ScalarField::from_fn(grid.clone(), |x| if x.iter().zip(&half).all(|(a, h)| a.abs() <= *h) { 1.0 } else { 0.0 })
}

/// Relative phase a·sin(2π x₀/L₀) + b·arctan(x_last/s) + shift on `grid`,
/// deliberately outside any polynomial space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SineArctanPhase {
    pub sine_amplitude: f64,
    /// Period L₀ along the first axis (nm).
    pub sine_period: f64,
    pub arctan_amplitude: f64,
    /// Length scale s of the arctan along the last axis (nm).
    pub arctan_scale: f64,
    pub shift: f64,
}

impl Default for SineArctanPhase {
    fn default() -> Self {
        Self { sine_amplitude: 0.6, sine_period: 2400.0, arctan_amplitude: 0.4, arctan_scale: 300.0, shift: 0.3 }
    }
}

impl SineArctanPhase {
    pub fn at(&self, x: &[f64]) -> f64 {
        let first = x.first().copied().unwrap_or(0.0);
        let last = x.last().copied().unwrap_or(0.0);
        self.sine_amplitude * libm::sin(2.0 * PI * first / self.sine_period)
            + self.arctan_amplitude * libm::atan(last / self.arctan_scale)
            + self.shift
    }

    pub fn sample(&self, grid: &Grid) -> Vec<f64> {
        ScalarField::from_fn(grid.clone(), |x| self.at(x)).into_values()
    }
}

/// Exact and Poisson-noisy data for a ground truth.
#[derive(Debug, Clone)]
pub struct Simulation {
    /// Object rescaled so the exact data peaks at the requested intensity.
    pub object: ScalarField,
    /// φ† on the data grid.
    pub phase: Vec<f64>,
    pub exact: ScalarField,
    pub noisy: ScalarField,
    pub clamped: usize,
    /// ‖g_δ − g‖ / ‖g‖ in plain L².
    pub relative_noise: f64,
}

/// Scales `object` so max F(f†, φ†) = `peak`, then draws Poisson counts.
pub fn simulate(op: &FourPiOperator, object: &ScalarField, phase: &[f64], peak: f64, seed: u64) -> Result<Simulation> {
    if !(peak >= 0.0 && peak.is_finite()) {
        return Err(Error::InvalidParameter("peak intensity must be nonnegative".into()));
    }
    let raw = op.forward_gridded(object, phase)?;
    let top = raw.max();
    let scale = if top > 0.0 { peak / top } else { 0.0 };
    let scaled: Vec<f64> = object.values().iter().map(|v| v * scale).collect();
    let object = ScalarField::new(object.grid().clone(), scaled)?;
    let exact = ScalarField::new(raw.grid().clone(), raw.values().iter().map(|v| v * scale).collect())?;
    let sample = poisson_sample(&exact, seed);
    let diff: f64 = sample.counts.values().iter().zip(exact.values()).map(|(a, b)| (a - b) * (a - b)).sum();
    let norm: f64 = exact.values().iter().map(|v| v * v).sum();
    let relative_noise = if norm > 0.0 { libm::sqrt(diff / norm) } else { 0.0 };
    Ok(Simulation {
        object,
        phase: phase.to_vec(),
        exact,
        noisy: sample.counts,
        clamped: sample.clamped,
        relative_noise,
    })
}

/// Zero phase on a grid.
pub fn flat_phase(grid: &Grid) -> Vec<f64> {
    vec![0.0; grid.len()]
}
