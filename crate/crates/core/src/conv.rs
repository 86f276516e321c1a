//! FFT convolution and correlation on the periodic cell Ω′.
//!
//! Kernels live on Ω′ in wrap-around layout (index 0 is the zero offset).
//! Objects live on Ω and are zero padded into the center of Ω′, so the
//! circular convolution reproduces the aperiodic integral whenever the
//! kernel support fits inside the padding margin.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::FftNd;
use crate::grid::{crop_from, pad_into, ComplexField, Grid, ScalarField};

/// Plan for transforms between Ω and Ω′.
#[derive(Debug, Clone)]
pub struct Convolver {
    object: Grid,
    extended: Grid,
    pad: Vec<usize>,
    fft: FftNd,
}

impl Convolver {
    pub fn new(object: &Grid, extended: &Grid) -> Result<Self> {
        if object.ndim() != extended.ndim() {
            return Err(Error::Shape("object and kernel grids differ in rank".into()));
        }
        if !object.spacing().iter().zip(extended.spacing()).all(|(a, b)| (a - b).abs() <= 1e-12 * a) {
            return Err(Error::Shape("object and kernel grids differ in spacing".into()));
        }
        let mut pad = Vec::with_capacity(object.ndim());
        for (&n, &m) in object.dims().iter().zip(extended.dims()) {
            if m < n || (m - n) % 2 != 0 {
                return Err(Error::Shape(format!(
                    "extended grid {:?} cannot center object grid {:?}",
                    extended.dims(),
                    object.dims()
                )));
            }
            pad.push((m - n) / 2);
        }
        Ok(Self { object: object.clone(), extended: extended.clone(), pad, fft: FftNd::new(extended.dims()) })
    }

    pub fn object_grid(&self) -> &Grid {
        &self.object
    }

    pub fn extended_grid(&self) -> &Grid {
        &self.extended
    }

    pub fn padding(&self) -> &[usize] {
        &self.pad
    }

    pub fn fft(&self) -> &FftNd {
        &self.fft
    }

    /// Spectrum of a kernel, including the voxel-volume quadrature weight.
    pub fn kernel_spectrum(&self, kernel: &ComplexField) -> Result<Vec<Complex64>> {
        kernel.grid().check_same(&self.extended, "kernel")?;
        let mut spec = kernel.values().to_vec();
        self.fft.forward(&mut spec);
        let dv = self.extended.voxel_volume();
        for v in spec.iter_mut() {
            *v *= dv;
        }
        Ok(spec)
    }

    pub fn pad_real(&self, f: &[f64]) -> Vec<Complex64> {
        let src: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let mut out = vec![Complex64::new(0.0, 0.0); self.extended.len()];
        pad_into(self.object.dims(), &self.pad, self.extended.dims(), &src, &mut out);
        out
    }

    pub fn crop<T: Copy + Default>(&self, big: &[T]) -> Vec<T> {
        let mut out = vec![T::default(); self.object.len()];
        crop_from(self.object.dims(), &self.pad, self.extended.dims(), big, &mut out);
        out
    }

    /// FFT of the zero-padded object.
    pub fn object_spectrum(&self, f: &[f64]) -> Vec<Complex64> {
        let mut buf = self.pad_real(f);
        self.fft.forward(&mut buf);
        buf
    }

    /// Inverse FFT of `kernel_spec · spec`.
    pub fn apply_spectrum(&self, kernel_spec: &[Complex64], spec: &[Complex64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = kernel_spec.iter().zip(spec).map(|(k, s)| k * s).collect();
        self.fft.inverse(&mut buf);
        buf
    }

    /// Inverse FFT of `conj(kernel_spec) · spec`.
    pub fn apply_spectrum_adjoint(&self, kernel_spec: &[Complex64], spec: &[Complex64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = kernel_spec.iter().zip(spec).map(|(k, s)| k.conj() * s).collect();
        self.fft.inverse(&mut buf);
        buf
    }
}

/// Infers the Ω′ geometry from the two grids and builds a one-off plan.
fn plan_for(kernel: &Grid, f: &Grid) -> Result<Convolver> {
    Convolver::new(f, kernel)
}

/// Circular convolution on Ω′ of the zero-padded `f` with `kernel`:
/// (A ⋆ f)(x) = Σ_y A(x − y) f(y) dV.
pub fn convolve(kernel: &ComplexField, f: &ScalarField) -> Result<ComplexField> {
    let plan = plan_for(kernel.grid(), f.grid())?;
    let ks = plan.kernel_spectrum(kernel)?;
    let fs = plan.object_spectrum(f.values());
    ComplexField::new(kernel.grid().clone(), plan.apply_spectrum(&ks, &fs))
}

/// Hermitian adjoint of convolution on Ω′: c(y) = Σ_x conj(A(x − y)) g(x) dV.
///
/// Together with [`crop`] this is the exact adjoint of [`convolve`] under the
/// L² pairing.
pub fn correlate(kernel: &ComplexField, g: &ComplexField) -> Result<ComplexField> {
    kernel.grid().check_same(g.grid(), "correlate")?;
    let plan = Convolver::new(g.grid(), kernel.grid())?;
    let ks = plan.kernel_spectrum(kernel)?;
    let mut gs = g.values().to_vec();
    plan.fft().forward(&mut gs);
    ComplexField::new(kernel.grid().clone(), plan.apply_spectrum_adjoint(&ks, &gs))
}

/// Restriction of an Ω′ field to the centered object grid.
pub fn crop(field: &ComplexField, object: &Grid) -> Result<ComplexField> {
    let plan = Convolver::new(object, field.grid())?;
    ComplexField::new(object.clone(), plan.crop(field.values()))
}
