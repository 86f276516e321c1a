//! The 4Pi forward operator over (object, relative phase).
//!
//! With the separable psf p(z, φ) = Σ_{m=−M}^{M} e^{imφ} A_m(z),
//!
//! ```text
//! F(f, φ)(x) = Σ_m e^{imφ(x)} (A_m ⋆ f)(x)
//! ```
//!
//! is a sum of FFT convolutions modulated by the phase. The kernels satisfy
//! A_{−m} = conj(A_m), so only m = 0..=M are stored and every sum over ±m
//! is evaluated as 2·Re of the m > 0 half. The object lives on Ω, data and
//! kernels on the extended cell Ω′, and the phase is expanded in a
//! [`PhaseBasis`] on Ω′.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::chebyshev::{BasisSamples, PhaseBasis};
use crate::conv::Convolver;
use crate::error::{Error, Result};
use crate::grid::{ComplexField, DomainBox, Grid, ScalarField, WeightField};
use crate::irgnm::{ForwardOperator, IterateErrors, TruthMetric};
use crate::linalg::{self, LinearMap};

/// Optical constants used to derive Gaussian widths and the fringe wavenumber.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Optics {
    pub numerical_aperture: f64,
    /// nm
    pub lambda_excitation: f64,
    /// nm
    pub lambda_emission: f64,
    pub refractive_index: f64,
}

impl Default for Optics {
    fn default() -> Self {
        Self { numerical_aperture: 1.34, lambda_excitation: 635.0, lambda_emission: 680.0, refractive_index: 1.46 }
    }
}

/// Simple 4Pi psf p(z, φ) = h(z)·cosⁿ(c·z_last + φ/2) with Gaussian h of
/// unit integral. The optical axis is the last grid axis.
#[derive(Debug, Clone, PartialEq)]
pub struct CosinePsfSpec {
    /// Standard deviations of h per axis (nm).
    pub widths: Vec<f64>,
    /// Interference wavenumber c (1/nm).
    pub wavenumber: f64,
    pub exponent: u32,
}

impl CosinePsfSpec {
    /// Gaussian approximation of a confocal psf: with the effective
    /// wavelength λ = λ_ex λ_em / √(λ_ex² + λ_em²), lateral σ = 0.21 λ/NA
    /// and axial σ = 0.66 n λ/NA². Fringes follow the excitation standing
    /// wave, c = 2π n / λ_ex.
    pub fn from_optics(ndim: usize, optics: &Optics, exponent: u32) -> Self {
        let (le, lm) = (optics.lambda_excitation, optics.lambda_emission);
        let lambda = le * lm / libm::sqrt(le * le + lm * lm);
        let na = optics.numerical_aperture;
        let lateral = 0.21 * lambda / na;
        let axial = 0.66 * optics.refractive_index * lambda / (na * na);
        let mut widths = vec![lateral; ndim];
        if let Some(w) = widths.last_mut() {
            *w = axial;
        }
        Self { widths, wavenumber: 2.0 * PI * optics.refractive_index / le, exponent }
    }

    pub fn validate(&self) -> Result<()> {
        if self.exponent != 2 && self.exponent != 4 {
            return Err(Error::UnsupportedExponent(self.exponent));
        }
        if self.widths.is_empty() || self.widths.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidParameter("psf widths must be positive".into()));
        }
        if !self.wavenumber.is_finite() {
            return Err(Error::NonFinite("psf wavenumber"));
        }
        Ok(())
    }

    /// h(z), normalized to unit integral over ℝ^d.
    pub fn confocal(&self, z: &[f64]) -> f64 {
        self.widths
            .iter()
            .zip(z)
            .map(|(&s, &x)| libm::exp(-0.5 * (x / s) * (x / s)) / (libm::sqrt(2.0 * PI) * s))
            .product()
    }

    /// Direct evaluation of p(z, φ).
    pub fn evaluate(&self, z: &[f64], phi: f64) -> f64 {
        let axial = z.last().copied().unwrap_or(0.0);
        let c = libm::cos(self.wavenumber * axial + 0.5 * phi);
        let mut pw = 1.0;
        for _ in 0..self.exponent {
            pw *= c;
        }
        self.confocal(z) * pw
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelSource {
    CosineModel,
    File,
}

/// Relative tolerance for A_{−m} = conj(A_m).
pub const SYMMETRY_TOL: f64 = 1e-8;

/// The kernel family {A_m} on the Ω′ cell, stored for m = 0..=M.
#[derive(Debug, Clone)]
pub struct KernelExpansion {
    components: Vec<ComplexField>,
    source: KernelSource,
}

impl KernelExpansion {
    /// Builds from the full list A_{−M}, …, A_M (odd length). Pairs are
    /// checked for conjugate symmetry within [`SYMMETRY_TOL`] relative to the
    /// largest kernel value and then averaged.
    pub fn from_components(all: Vec<ComplexField>, source: KernelSource) -> Result<Self> {
        if all.len() % 2 != 1 {
            return Err(Error::Shape(format!("expected 2M+1 kernel components, got {}", all.len())));
        }
        let order = all.len() / 2;
        let grid = all[0].grid().clone();
        for a in &all {
            a.grid().check_same(&grid, "kernel component")?;
        }
        let scale = all.iter().map(|a| a.max_abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let mut components = Vec::with_capacity(order + 1);
        for m in 0..=order {
            let pos = &all[order + m];
            let neg = &all[order - m];
            let deviation =
                pos.values().iter().zip(neg.values()).map(|(p, q)| (p - q.conj()).norm()).fold(0.0, f64::max) / scale;
            if deviation > SYMMETRY_TOL {
                return Err(Error::SymmetryViolation { m: m as i32, deviation });
            }
            let avg = pos.values().iter().zip(neg.values()).map(|(p, q)| 0.5 * (p + q.conj())).collect();
            components.push(ComplexField::new(grid.clone(), avg)?);
        }
        let out = Self { components, source };
        out.check_nonnegative(32)?;
        Ok(out)
    }

    /// Builds from A_0, …, A_M directly (symmetric by construction).
    pub fn from_nonnegative(mut half: Vec<ComplexField>, source: KernelSource) -> Result<Self> {
        if half.is_empty() {
            return Err(Error::Shape("kernel expansion needs A_0".into()));
        }
        let grid = half[0].grid().clone();
        for a in &half {
            a.grid().check_same(&grid, "kernel component")?;
        }
        for v in half[0].values_mut() {
            v.im = 0.0;
        }
        let out = Self { components: half, source };
        out.check_nonnegative(32)?;
        Ok(out)
    }

    pub fn order(&self) -> usize {
        self.components.len() - 1
    }

    pub fn source(&self) -> KernelSource {
        self.source
    }

    pub fn grid(&self) -> &Grid {
        self.components[0].grid()
    }

    /// A_m for any m in −M..=M.
    pub fn component(&self, m: i32) -> Option<ComplexField> {
        let k = m.unsigned_abs() as usize;
        let a = self.components.get(k)?;
        Some(if m < 0 { a.conj() } else { a.clone() })
    }

    /// A_0, …, A_M.
    pub fn nonnegative(&self) -> &[ComplexField] {
        &self.components
    }

    /// p(z, φ) = Σ_m e^{imφ} A_m(z) in wrap-around layout.
    pub fn psf(&self, phi: f64) -> ScalarField {
        let mut vals: Vec<f64> = self.components[0].values().iter().map(|a| a.re).collect();
        for (m, a) in self.components.iter().enumerate().skip(1) {
            let e = Complex64::from_polar(1.0, m as f64 * phi);
            for (v, z) in vals.iter_mut().zip(a.values()) {
                *v += 2.0 * (e * z).re;
            }
        }
        ScalarField::new(self.grid().clone(), vals).expect("finite kernel values")
    }

    fn check_nonnegative(&self, phases: usize) -> Result<()> {
        let mut lo: f64 = 0.0;
        let mut hi: f64 = 0.0;
        for k in 0..phases {
            let p = self.psf(2.0 * PI * k as f64 / phases as f64);
            lo = lo.min(p.min());
            hi = hi.max(p.values().iter().fold(0.0, |a: f64, v| a.max(v.abs())));
        }
        if lo < -1e-12 * hi {
            return Err(Error::InvalidParameter(format!("psf takes negative values (min {lo:e}, max {hi:e})")));
        }
        Ok(())
    }
}

/// Binomial expansion of h·cosⁿ(c z + φ/2): A_m = 2⁻ⁿ C(n, n/2 − m) h e^{2imcz}.
pub fn build_cosine_expansion(spec: &CosinePsfSpec, domain: &DomainBox) -> Result<KernelExpansion> {
    spec.validate()?;
    if spec.widths.len() != domain.ndim() {
        return Err(Error::Shape(format!("{} psf widths for a {}-D box", spec.widths.len(), domain.ndim())));
    }
    let grid = domain.extended_grid()?;
    let radius = domain.kernel_halfwidths().to_vec();
    let n = spec.exponent as usize;
    let order = n / 2;
    let last = grid.ndim() - 1;
    let mut h = vec![0.0; grid.len()];
    let mut axial = vec![0.0; grid.len()];
    let mut idx = vec![0usize; grid.ndim()];
    let mut z = vec![0.0; grid.ndim()];
    for (k, (hv, av)) in h.iter_mut().zip(axial.iter_mut()).enumerate() {
        grid.unravel(k, &mut idx);
        for a in 0..grid.ndim() {
            z[a] = grid.wrapped_offset(a, idx[a]);
        }
        if z.iter().zip(&radius).all(|(x, r)| x.abs() <= *r) {
            *hv = spec.confocal(&z);
        }
        *av = z[last];
    }
    let mut components = Vec::with_capacity(order + 1);
    for m in 0..=order {
        let coef = binomial(n, order - m) as f64 / (1u64 << n) as f64;
        let vals = h
            .iter()
            .zip(&axial)
            .map(|(&hv, &zv)| Complex64::from_polar(coef * hv, 2.0 * m as f64 * spec.wavenumber * zv))
            .collect();
        components.push(ComplexField::new(grid.clone(), vals)?);
    }
    KernelExpansion::from_nonnegative(components, KernelSource::CosineModel)
}

fn binomial(n: usize, k: usize) -> u64 {
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i + 1) as u64)
}

/// p(·, φ) on the kernel cell, rolled so the zero offset sits at index n/2
/// of every axis.
pub fn synthesize_psf(kernel: &KernelExpansion, phi: f64) -> ScalarField {
    let wrapped = kernel.psf(phi);
    let grid = wrapped.grid().clone();
    let dims = grid.dims().to_vec();
    let mut out = vec![0.0; grid.len()];
    let mut idx = vec![0usize; dims.len()];
    let mut src = vec![0usize; dims.len()];
    for (k, o) in out.iter_mut().enumerate() {
        grid.unravel(k, &mut idx);
        for a in 0..dims.len() {
            src[a] = (idx[a] + dims[a] - dims[a] / 2) % dims[a];
        }
        *o = wrapped.values()[grid.ravel(&src)];
    }
    ScalarField::new(grid, out).expect("finite psf")
}

/// Coefficients of the phase in a [`PhaseBasis`].
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseCoeffs(pub Vec<f64>);

impl PhaseCoeffs {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    /// The constant phase φ ≡ value (ψ_0 = 1).
    pub fn constant(n: usize, value: f64) -> Self {
        let mut c = vec![0.0; n];
        c[0] = value;
        Self(c)
    }
}

/// x = (f, φ).
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub object: ScalarField,
    pub phase: PhaseCoeffs,
}

/// Forward operator with cached kernel spectra and basis samples.
#[derive(Debug, Clone)]
pub struct FourPiOperator {
    kernel: KernelExpansion,
    basis: PhaseBasis,
    samples: BasisSamples,
    conv: Convolver,
    spectra: Vec<Vec<Complex64>>,
    weight: WeightField,
}

/// Quantities at a fixed state shared by F, F′ and F′*.
struct Linearization {
    /// e^{imφ} for m = 1..=M
    phasors: Vec<Vec<Complex64>>,
    /// Re Σ_m i m e^{imφ} (A_m ⋆ f)
    dphase: Vec<f64>,
}

impl FourPiOperator {
    /// `weight` lives on the data grid Ω′ (the kernel grid).
    pub fn new(kernel: KernelExpansion, basis: PhaseBasis, object_grid: &Grid, weight: WeightField) -> Result<Self> {
        let extended = kernel.grid().clone();
        let conv = Convolver::new(object_grid, &extended)?;
        weight.grid().check_same(&extended, "weight")?;
        let samples = basis.sample(&extended)?;
        let spectra = kernel.nonnegative().iter().map(|a| conv.kernel_spectrum(a)).collect::<Result<Vec<_>>>()?;
        Ok(Self { kernel, basis, samples, conv, spectra, weight })
    }

    /// Same operator with a different data weight.
    pub fn with_weight(&self, weight: WeightField) -> Result<Self> {
        weight.grid().check_same(self.data_grid(), "weight")?;
        Ok(Self { weight, ..self.clone() })
    }

    pub fn object_grid(&self) -> &Grid {
        self.conv.object_grid()
    }

    pub fn data_grid(&self) -> &Grid {
        self.conv.extended_grid()
    }

    pub fn kernel(&self) -> &KernelExpansion {
        &self.kernel
    }

    pub fn basis(&self) -> &PhaseBasis {
        &self.basis
    }

    pub fn samples(&self) -> &BasisSamples {
        &self.samples
    }

    pub fn weight(&self) -> &WeightField {
        &self.weight
    }

    pub fn convolver(&self) -> &Convolver {
        &self.conv
    }

    /// φ on the Ω′ grid.
    pub fn phase_field(&self, c: &PhaseCoeffs) -> Result<Vec<f64>> {
        self.check_phase(c)?;
        Ok(self.samples.synthesize(&c.0))
    }

    fn check_phase(&self, c: &PhaseCoeffs) -> Result<()> {
        if c.0.len() != self.basis.len() {
            return Err(Error::Shape(format!("{} phase coefficients for a basis of {}", c.0.len(), self.basis.len())));
        }
        if c.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("phase coefficients"));
        }
        Ok(())
    }

    fn check_object(&self, f: &ScalarField) -> Result<()> {
        f.grid().check_same(self.object_grid(), "object")
    }

    fn blur(&self, f: &[f64]) -> Vec<Vec<Complex64>> {
        let spec = self.conv.object_spectrum(f);
        self.spectra.iter().map(|k| self.conv.apply_spectrum(k, &spec)).collect()
    }

    fn linearization(&self, f: &[f64], phi: Vec<f64>) -> Linearization {
        let order = self.kernel.order();
        let phasors: Vec<Vec<Complex64>> =
            (1..=order).map(|m| phi.iter().map(|&p| Complex64::from_polar(1.0, m as f64 * p)).collect()).collect();
        let blurred = self.blur(f);
        let mut dphase = vec![0.0; phi.len()];
        for m in 1..=order {
            let (e, b) = (&phasors[m - 1], &blurred[m]);
            for (d, (ei, bi)) in dphase.iter_mut().zip(e.iter().zip(b)) {
                // 2 Re(i m e b)
                *d -= 2.0 * m as f64 * (ei * bi).im;
            }
        }
        Linearization { phasors, dphase }
    }

    /// Σ_m e^{imφ} B_m for precomputed B_m = A_m ⋆ f.
    fn modulate(&self, blurred: &[Vec<Complex64>], phasors: &[Vec<Complex64>]) -> Result<Vec<f64>> {
        let b0 = &blurred[0];
        let scale = b0.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let residue = b0.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
        if residue > 1e-10 * scale + 1e-300 {
            return Err(Error::InvalidParameter(format!("imaginary residue {residue:e} in forward evaluation")));
        }
        let mut g: Vec<f64> = b0.iter().map(|z| z.re).collect();
        for (e, b) in phasors.iter().zip(&blurred[1..]) {
            for (gi, (ei, bi)) in g.iter_mut().zip(e.iter().zip(b)) {
                *gi += 2.0 * (ei * bi).re;
            }
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("4Pi forward"));
        }
        Ok(g)
    }

    /// Forward model with an arbitrary gridded phase on Ω′.
    pub fn forward_gridded(&self, f: &ScalarField, phi: &[f64]) -> Result<ScalarField> {
        self.check_object(f)?;
        if phi.len() != self.data_grid().len() {
            return Err(Error::Shape("gridded phase must live on the data grid".into()));
        }
        let order = self.kernel.order();
        let phasors: Vec<Vec<Complex64>> =
            (1..=order).map(|m| phi.iter().map(|&p| Complex64::from_polar(1.0, m as f64 * p)).collect()).collect();
        let g = self.modulate(&self.blur(f.values()), &phasors)?;
        ScalarField::new(self.data_grid().clone(), g)
    }

    pub fn forward(&self, state: &JointState) -> Result<ScalarField> {
        let phi = self.phase_field(&state.phase)?;
        self.forward_gridded(&state.object, &phi)
    }

    fn derivative_lin(&self, lin: &Linearization, hf: &[f64], hphi: &[f64]) -> Result<Vec<f64>> {
        let hb = self.blur(hf);
        let mut out = self.modulate(&hb, &lin.phasors)?;
        for ((o, h), d) in out.iter_mut().zip(hphi).zip(&lin.dphase) {
            *o += h * d;
        }
        Ok(out)
    }

    /// F′[x](h_f, h_c) = Σ_m e^{imφ}(A_m ⋆ h_f) + h_φ·Σ_m i m e^{imφ}(A_m ⋆ f).
    pub fn derivative(&self, state: &JointState, direction: &JointState) -> Result<ScalarField> {
        self.check_object(&state.object)?;
        self.check_object(&direction.object)?;
        let lin = self.linearization(state.object.values(), self.phase_field(&state.phase)?);
        let hphi = self.phase_field(&direction.phase)?;
        let out = self.derivative_lin(&lin, direction.object.values(), &hphi)?;
        ScalarField::new(self.data_grid().clone(), out)
    }

    /// Object part crop(Σ_m correlate(A_m, e^{−imφ} v)) with the Hermitian
    /// correlation, and phase moments
    /// b_k = ⟨ψ_k, D·v⟩ for v = g·w.
    fn adjoint_lin(&self, lin: &Linearization, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let fft = self.conv.fft();
        let mut acc: Vec<Complex64> = {
            let mut s: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
            fft.forward(&mut s);
            s.iter().zip(&self.spectra[0]).map(|(a, k)| k.conj() * a).collect()
        };
        for (m, e) in lin.phasors.iter().enumerate() {
            let mut s: Vec<Complex64> = e.iter().zip(v).map(|(ei, &x)| ei.conj() * x).collect();
            fft.forward(&mut s);
            for (a, (si, k)) in acc.iter_mut().zip(s.iter().zip(&self.spectra[m + 1])) {
                *a += 2.0 * k.conj() * si;
            }
        }
        fft.inverse(&mut acc);
        let object: Vec<f64> = self.conv.crop(&acc).iter().map(|z| z.re).collect();
        let dv: Vec<f64> = lin.dphase.iter().zip(v).map(|(d, x)| d * x).collect();
        (object, self.samples.project(&dv))
    }

    /// Adjoint in the natural metrics: Y = L²(Ω′, w dx), X = L²(Ω) ⊕ (coefficients, G).
    pub fn adjoint(&self, state: &JointState, g: &ScalarField) -> Result<JointState> {
        self.check_object(&state.object)?;
        g.grid().check_same(self.data_grid(), "data")?;
        let lin = self.linearization(state.object.values(), self.phase_field(&state.phase)?);
        let v: Vec<f64> = g.values().iter().zip(self.weight.values()).map(|(a, w)| a * w).collect();
        let (object, b) = self.adjoint_lin(&lin, &v);
        Ok(JointState {
            object: ScalarField::new(self.object_grid().clone(), object)?,
            phase: PhaseCoeffs(self.basis.riesz(&b)),
        })
    }

    /// ⟨a, b⟩_Y = ∫ a b w dx.
    pub fn data_inner(&self, a: &ScalarField, b: &ScalarField) -> Result<f64> {
        crate::grid::inner_weighted(a, b, &self.weight)
    }

    /// ⟨a, b⟩_X = ∫ a_f b_f dx + a_cᵀ G b_c.
    pub fn state_inner(&self, a: &JointState, b: &JointState) -> Result<f64> {
        let obj = a.object.dot(&b.object)?;
        let g = self.basis.gram();
        let n = self.basis.len();
        let mut ph = 0.0;
        for i in 0..n {
            for j in 0..n {
                ph += a.phase.0[i] * g[(i, j)] * b.phase.0[j];
            }
        }
        Ok(obj + ph)
    }
}

/// Scaling between physical quantities and solver coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverScaling {
    /// Object unit: u = f·√dV / object.
    pub object: f64,
    /// Phase unit: ĉ = R c / phase.
    pub phase: f64,
}

impl Default for SolverScaling {
    fn default() -> Self {
        Self { object: 1.0, phase: 1.0 }
    }
}

impl SolverScaling {
    /// Units that give the object and phase blocks of F′ at `reference`
    /// unit operator norm (power iteration, `iters` steps).
    pub fn balanced(op: &FourPiOperator, reference: &JointState, iters: usize, seed: u64) -> Result<Self> {
        let unit = FourPiProblem::new(op.clone(), Self::default())?;
        let x = unit.encode(reference)?;
        let lin = unit.linearize(&x)?;
        let nf = unit.object_len();
        let n = unit.domain_dim();
        let object = linalg::operator_norm(&Block { map: &*lin, range: 0..nf, dim: n }, iters, 1e-3, seed).0;
        let phase = linalg::operator_norm(&Block { map: &*lin, range: nf..n, dim: n }, iters, 1e-3, seed + 1).0;
        if !(object > 0.0 && phase > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "reference state gives a degenerate derivative (object block {object:e}, phase block {phase:e})"
            )));
        }
        Ok(Self { object: 1.0 / object, phase: 1.0 / phase })
    }
}

/// Restriction of a map to a contiguous block of its domain.
struct Block<'a> {
    map: &'a dyn LinearMap,
    range: core::ops::Range<usize>,
    dim: usize,
}

impl LinearMap for Block<'_> {
    fn domain_dim(&self) -> usize {
        self.range.len()
    }
    fn range_dim(&self) -> usize {
        self.map.range_dim()
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        let mut full = vec![0.0; self.dim];
        full[self.range.clone()].copy_from_slice(x);
        self.map.apply(&full, out);
    }
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        let mut full = vec![0.0; self.dim];
        self.map.apply_adjoint(y, &mut full);
        out.copy_from_slice(&full[self.range.clone()]);
    }
}

/// The 4Pi operator in whitened solver coordinates, with x = (u, ĉ) and
/// data ŷ = g·√(w dV). The object block is nonnegativity constrained.
#[derive(Debug, Clone)]
pub struct FourPiProblem {
    op: FourPiOperator,
    scaling: SolverScaling,
    mask: Vec<bool>,
    data_factor: Vec<f64>,
}

impl FourPiProblem {
    pub fn new(op: FourPiOperator, scaling: SolverScaling) -> Result<Self> {
        if !(scaling.object > 0.0 && scaling.phase > 0.0) {
            return Err(Error::InvalidParameter("solver scaling must be positive".into()));
        }
        let nf = op.object_grid().len();
        let mut mask = vec![true; nf + op.basis().len()];
        mask[nf..].iter_mut().for_each(|m| *m = false);
        let dv = op.data_grid().voxel_volume();
        let data_factor = op.weight().values().iter().map(|w| libm::sqrt(w * dv)).collect();
        Ok(Self { op, scaling, mask, data_factor })
    }

    pub fn operator(&self) -> &FourPiOperator {
        &self.op
    }

    pub fn scaling(&self) -> SolverScaling {
        self.scaling
    }

    pub fn object_len(&self) -> usize {
        self.op.object_grid().len()
    }

    /// Physical state → solver vector.
    pub fn encode(&self, state: &JointState) -> Result<Vec<f64>> {
        self.op.check_object(&state.object)?;
        self.op.check_phase(&state.phase)?;
        let s = libm::sqrt(self.op.object_grid().voxel_volume()) / self.scaling.object;
        let mut x: Vec<f64> = state.object.values().iter().map(|v| v * s).collect();
        x.extend(self.op.basis().whiten(&state.phase.0).iter().map(|v| v / self.scaling.phase));
        Ok(x)
    }

    /// Solver vector → physical state.
    pub fn decode(&self, x: &[f64]) -> Result<JointState> {
        if x.len() != self.mask.len() {
            return Err(Error::Shape(format!("state of length {} (expected {})", x.len(), self.mask.len())));
        }
        let nf = self.object_len();
        let s = self.scaling.object / libm::sqrt(self.op.object_grid().voxel_volume());
        let object = ScalarField::new(self.op.object_grid().clone(), x[..nf].iter().map(|v| v * s).collect())?;
        let hat: Vec<f64> = x[nf..].iter().map(|v| v * self.scaling.phase).collect();
        Ok(JointState { object, phase: PhaseCoeffs(self.op.basis().unwhiten(&hat)) })
    }

    /// Physical data → whitened data vector.
    pub fn whiten_data(&self, g: &ScalarField) -> Result<Vec<f64>> {
        g.grid().check_same(self.op.data_grid(), "data")?;
        Ok(g.values().iter().zip(&self.data_factor).map(|(a, b)| a * b).collect())
    }
}

struct FourPiDerivative<'a> {
    problem: &'a FourPiProblem,
    lin: Linearization,
}

impl FourPiDerivative<'_> {
    fn split(&self, h: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let p = self.problem;
        let nf = p.object_len();
        let s = p.scaling.object / libm::sqrt(p.op.object_grid().voxel_volume());
        let hf = h[..nf].iter().map(|v| v * s).collect();
        let hat: Vec<f64> = h[nf..].iter().map(|v| v * p.scaling.phase).collect();
        let hphi = p.op.samples().synthesize(&p.op.basis().unwhiten(&hat));
        (hf, hphi)
    }
}

impl LinearMap for FourPiDerivative<'_> {
    fn domain_dim(&self) -> usize {
        self.problem.mask.len()
    }
    fn range_dim(&self) -> usize {
        self.problem.data_factor.len()
    }
    fn apply(&self, h: &[f64], out: &mut [f64]) {
        let (hf, hphi) = self.split(h);
        let y = self.problem.op.derivative_lin(&self.lin, &hf, &hphi).unwrap_or_else(|_| vec![f64::NAN; out.len()]);
        for ((o, v), d) in out.iter_mut().zip(&y).zip(&self.problem.data_factor) {
            *o = v * d;
        }
    }
    fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        let p = self.problem;
        // g̃ = ŷ/√(w dV), so g̃·w = ŷ·√(w/dV)
        let dv = p.op.data_grid().voxel_volume();
        let v: Vec<f64> = y.iter().zip(&p.data_factor).map(|(a, d)| a * d / dv).collect();
        let (object, b) = p.op.adjoint_lin(&self.lin, &v);
        let nf = p.object_len();
        let s = p.scaling.object * libm::sqrt(p.op.object_grid().voxel_volume());
        for (o, a) in out[..nf].iter_mut().zip(&object) {
            *o = a * s;
        }
        for (o, a) in out[nf..].iter_mut().zip(p.op.basis().whiten_dual(&b)) {
            *o = a * p.scaling.phase;
        }
    }
}

impl ForwardOperator for FourPiProblem {
    fn domain_dim(&self) -> usize {
        self.mask.len()
    }
    fn range_dim(&self) -> usize {
        self.data_factor.len()
    }
    fn constrained(&self) -> &[bool] {
        &self.mask
    }
    fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        let g = self.op.forward(&self.decode(x)?)?;
        self.whiten_data(&g)
    }
    fn linearize<'a>(&'a self, x: &[f64]) -> Result<Box<dyn LinearMap + 'a>> {
        let state = self.decode(x)?;
        let phi = self.op.phase_field(&state.phase)?;
        let lin = self.op.linearization(state.object.values(), phi);
        Ok(Box::new(FourPiDerivative { problem: self, lin }))
    }
}

/// Object and phase errors against a ground truth with a gridded phase.
pub struct FourPiTruth<'a> {
    pub problem: &'a FourPiProblem,
    pub object: &'a ScalarField,
    /// φ† on the data grid Ω′; errors are measured on Ω.
    pub phase: &'a [f64],
}

impl TruthMetric for FourPiTruth<'_> {
    fn errors(&self, x: &[f64]) -> IterateErrors {
        let Ok(state) = self.problem.decode(x) else {
            return IterateErrors { total: f64::NAN, object: None, phase: None };
        };
        let op = &self.problem.op;
        let dv = op.object_grid().voxel_volume();
        let obj = linalg::dist(state.object.values(), self.object.values()) * libm::sqrt(dv);
        let phi = op.samples().synthesize(&state.phase.0);
        let diff: Vec<f64> = phi.iter().zip(self.phase).map(|(a, b)| a - b).collect();
        let ph = linalg::norm(&op.convolver().crop(&diff)) * libm::sqrt(dv);
        let s = self.problem.scaling;
        let total = libm::sqrt((obj / s.object) * (obj / s.object) + (ph / s.phase) * (ph / s.phase));
        IterateErrors { total, object: Some(obj), phase: Some(ph) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chebyshev::build_phase_basis;

    fn small_setup(exponent: u32) -> (DomainBox, KernelExpansion, PhaseBasis) {
        let domain = DomainBox::from_voxels(&[8, 8], &[4, 4], &[40.0, 40.0]).unwrap();
        let spec = CosinePsfSpec { widths: vec![60.0, 90.0], wavenumber: 0.012, exponent };
        let k = build_cosine_expansion(&spec, &domain).unwrap();
        let b = build_phase_basis(&[2, 2], &domain).unwrap();
        (domain, k, b)
    }

    #[test]
    fn expansion_reproduces_cosine_power() {
        for n in [2u32, 4] {
            let (domain, k, _) = small_setup(n);
            let spec = CosinePsfSpec { widths: vec![60.0, 90.0], wavenumber: 0.012, exponent: n };
            let grid = domain.extended_grid().unwrap();
            for &phi in &[0.0, 0.7, PI / 2.0, PI, 4.0] {
                let p = k.psf(phi);
                let mut idx = [0usize; 2];
                for (i, &v) in p.values().iter().enumerate() {
                    grid.unravel(i, &mut idx);
                    let z = [grid.wrapped_offset(0, idx[0]), grid.wrapped_offset(1, idx[1])];
                    let inside = z[0].abs() <= 160.0 && z[1].abs() <= 160.0;
                    let direct = if inside { spec.evaluate(&z, phi) } else { 0.0 };
                    assert!((v - direct).abs() <= 1e-12 * spec.confocal(&[0.0, 0.0]));
                }
            }
        }
    }

    #[test]
    fn cosine_coefficients() {
        let (_, k, _) = small_setup(4);
        assert_eq!(k.order(), 2);
        let h0 = k.nonnegative()[0].values()[0].re;
        let a1 = k.nonnegative()[1].values()[0];
        let a2 = k.nonnegative()[2].values()[0];
        // at z = 0: A_0 = 3h/8, A_1 = h/4, A_2 = h/16
        assert!((a1.re - h0 * 2.0 / 3.0).abs() < 1e-15 * h0);
        assert!((a2.re - h0 / 6.0).abs() < 1e-15 * h0);
        let (_, k2, _) = small_setup(2);
        assert_eq!(k2.order(), 1);
        let p = k2.psf(0.0);
        let spec = CosinePsfSpec { widths: vec![60.0, 90.0], wavenumber: 0.012, exponent: 2 };
        assert!((p.values()[0] - spec.confocal(&[0.0, 0.0])).abs() < 1e-15);
        assert!(k2.psf(PI).values()[0].abs() < 1e-15 * p.values()[0]);
    }

    #[test]
    fn unsupported_exponent_is_rejected() {
        let domain = DomainBox::from_voxels(&[4], &[2], &[1.0]).unwrap();
        let spec = CosinePsfSpec { widths: vec![1.0], wavenumber: 1.0, exponent: 3 };
        assert_eq!(build_cosine_expansion(&spec, &domain).unwrap_err(), Error::UnsupportedExponent(3));
    }

    #[test]
    fn broken_symmetry_is_rejected() {
        let (_, k, _) = small_setup(2);
        let mut all = vec![k.component(-1).unwrap(), k.component(0).unwrap(), k.component(1).unwrap()];
        let scale = all[1].max_abs();
        all[2].values_mut()[3] += Complex64::new(1e-3 * scale, 0.0);
        let err = KernelExpansion::from_components(all, KernelSource::File).unwrap_err();
        assert!(matches!(err, Error::SymmetryViolation { m: 1, .. }));
    }

    #[test]
    fn derivative_is_linear_in_object() {
        let (domain, k, b) = small_setup(2);
        let grid = domain.object_grid().unwrap();
        let op =
            FourPiOperator::new(k, b.clone(), &grid, WeightField::uniform(domain.extended_grid().unwrap())).unwrap();
        let f = ScalarField::from_fn(grid.clone(), |x| 1.0 + 0.01 * x[0]);
        let h = ScalarField::from_fn(grid.clone(), |x| libm::sin(0.02 * x[1]));
        let phase = PhaseCoeffs((0..b.len()).map(|k| 0.1 * k as f64).collect());
        let x = JointState { object: f, phase: phase.clone() };
        let d = op.derivative(&x, &JointState { object: h.clone(), phase: PhaseCoeffs::zeros(b.len()) }).unwrap();
        let fw = op.forward(&JointState { object: h, phase }).unwrap();
        assert!(linalg::dist(d.values(), fw.values()) <= 1e-13 * linalg::norm(fw.values()));
    }

    #[test]
    fn zero_object_kills_phase_direction() {
        let (domain, k, b) = small_setup(4);
        let grid = domain.object_grid().unwrap();
        let op =
            FourPiOperator::new(k, b.clone(), &grid, WeightField::uniform(domain.extended_grid().unwrap())).unwrap();
        let x = JointState { object: ScalarField::zeros(grid.clone()), phase: PhaseCoeffs::constant(b.len(), 0.4) };
        let dir = JointState { object: ScalarField::zeros(grid), phase: PhaseCoeffs(vec![1.0; b.len()]) };
        assert!(op.derivative(&x, &dir).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_data_gives_zero_adjoint() {
        let (domain, k, b) = small_setup(2);
        let grid = domain.object_grid().unwrap();
        let ext = domain.extended_grid().unwrap();
        let op = FourPiOperator::new(k, b.clone(), &grid, WeightField::uniform(ext.clone())).unwrap();
        let x = JointState { object: ScalarField::constant(grid, 2.0), phase: PhaseCoeffs::constant(b.len(), 1.0) };
        let a = op.adjoint(&x, &ScalarField::zeros(ext)).unwrap();
        assert!(a.object.values().iter().all(|&v| v == 0.0));
        assert!(a.phase.0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn confocal_expansion_has_no_phase_adjoint() {
        let (domain, k, b) = small_setup(2);
        let a0 = KernelExpansion::from_nonnegative(vec![k.nonnegative()[0].clone()], KernelSource::File).unwrap();
        assert_eq!(a0.order(), 0);
        let grid = domain.object_grid().unwrap();
        let ext = domain.extended_grid().unwrap();
        let op = FourPiOperator::new(a0, b.clone(), &grid, WeightField::uniform(ext.clone())).unwrap();
        let x = JointState { object: ScalarField::constant(grid, 1.0), phase: PhaseCoeffs::constant(b.len(), 0.3) };
        let g = ScalarField::from_fn(ext, |z| 1.0 + 1e-3 * z[0]);
        let a = op.adjoint(&x, &g).unwrap();
        assert!(a.phase.0.iter().all(|&v| v == 0.0));
        assert!(a.object.max() > 0.0);
    }

    #[test]
    fn psf_rolls_origin_to_center() {
        let (_, k, _) = small_setup(2);
        let p = synthesize_psf(&k, 0.0);
        let g = p.grid().clone();
        let center = g.ravel(&[g.dims()[0] / 2, g.dims()[1] / 2]);
        assert_eq!(p.values()[center], p.max());
    }

    #[test]
    fn optics_defaults_give_sub_micron_widths() {
        let s = CosinePsfSpec::from_optics(2, &Optics::default(), 2);
        assert!(s.widths[0] > 50.0 && s.widths[0] < 100.0);
        assert!(s.widths[1] > 150.0 && s.widths[1] < 400.0);
        // fringe period π/c near λ_ex/(2n)
        assert!((PI / s.wavenumber - 635.0 / 2.92).abs() < 1e-9);
    }
}
