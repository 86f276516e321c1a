//! Regular cell-centered grids and the fields sampled on them.
//!
//! Values are stored row-major with the last axis contiguous; the last axis
//! is the optical axis. Integrals are midpoint sums weighted by the voxel
//! volume.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Shape and spacing of a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dims: Vec<usize>,
    spacing: Vec<f64>,
}

impl Grid {
    pub fn new(dims: &[usize], spacing: &[f64]) -> Result<Self> {
        if dims.is_empty() || dims.len() != spacing.len() {
            return Err(Error::Shape(format!(
                "dims {:?} and spacing {:?} must be non-empty and of equal rank",
                dims, spacing
            )));
        }
        if dims.contains(&0) {
            return Err(Error::Shape(format!("zero-length axis in {:?}", dims)));
        }
        if spacing.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::InvalidParameter(format!("spacing must be positive, got {:?}", spacing)));
        }
        Ok(Self { dims: dims.to_vec(), spacing: spacing.to_vec() })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Physical extent along each axis.
    pub fn extent(&self) -> Vec<f64> {
        self.dims.iter().zip(&self.spacing).map(|(&n, &h)| n as f64 * h).collect()
    }

    /// Multi-index of a flat offset.
    pub fn unravel(&self, mut flat: usize, out: &mut [usize]) {
        for axis in (0..self.ndim()).rev() {
            out[axis] = flat % self.dims[axis];
            flat /= self.dims[axis];
        }
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.dims).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    /// Coordinate of voxel centers along `axis` for a grid centered at the origin.
    pub fn center_coord(&self, axis: usize, i: usize) -> f64 {
        let n = self.dims[axis] as f64;
        (i as f64 + 0.5 - 0.5 * n) * self.spacing[axis]
    }

    /// Signed lattice offset for periodic (wrap-around) indexing: index `i`
    /// represents the displacement `i·h` for `i < n/2` and `(i-n)·h` otherwise.
    pub fn wrapped_offset(&self, axis: usize, i: usize) -> f64 {
        let n = self.dims[axis];
        let s = if 2 * i < n { i as f64 } else { i as f64 - n as f64 };
        s * self.spacing[axis]
    }

    pub fn same_as(&self, other: &Grid) -> bool {
        self.dims == other.dims
            && self.spacing.iter().zip(&other.spacing).all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs())
    }

    pub fn check_same(&self, other: &Grid, what: &str) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: grid {:?}/{:?} vs {:?}/{:?}",
                self.dims, self.spacing, other.dims, other.spacing
            )))
        }
    }
}

/// Object box Ω and kernel box; the extended box Ω′ has halfwidths R + r.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBox {
    object_halfwidths: Vec<f64>,
    kernel_halfwidths: Vec<f64>,
    voxel_spacing: Vec<f64>,
}

fn whole_voxels(length: f64, h: f64, what: &str) -> Result<usize> {
    let n = length / h;
    let r = libm::round(n);
    if (n - r).abs() > 1e-9 * n.max(1.0) {
        return Err(Error::InvalidParameter(format!("{what} {length} is not a whole number of voxels of size {h}")));
    }
    Ok(r as usize)
}

impl DomainBox {
    pub fn new(object_halfwidths: &[f64], kernel_halfwidths: &[f64], voxel_spacing: &[f64]) -> Result<Self> {
        let d = object_halfwidths.len();
        if d == 0 || kernel_halfwidths.len() != d || voxel_spacing.len() != d {
            return Err(Error::Shape("domain box axes disagree in rank".into()));
        }
        let all_positive = |v: &[f64]| v.iter().all(|&x| x > 0.0 && x.is_finite());
        if !all_positive(object_halfwidths) || !all_positive(kernel_halfwidths) || !all_positive(voxel_spacing) {
            return Err(Error::InvalidParameter("halfwidths and spacings must be strictly positive".into()));
        }
        let b = Self {
            object_halfwidths: object_halfwidths.to_vec(),
            kernel_halfwidths: kernel_halfwidths.to_vec(),
            voxel_spacing: voxel_spacing.to_vec(),
        };
        b.object_grid()?;
        b.padding()?;
        Ok(b)
    }

    /// Box with `object_voxels` voxels in Ω and `pad_voxels` of kernel margin per side.
    pub fn from_voxels(object_voxels: &[usize], pad_voxels: &[usize], voxel_spacing: &[f64]) -> Result<Self> {
        let halves = |v: &[usize], scale: f64| -> Vec<f64> {
            v.iter().zip(voxel_spacing).map(|(&n, &h)| n as f64 * h * scale).collect()
        };
        Self::new(&halves(object_voxels, 0.5), &halves(pad_voxels, 1.0), voxel_spacing)
    }

    pub fn object_halfwidths(&self) -> &[f64] {
        &self.object_halfwidths
    }

    pub fn kernel_halfwidths(&self) -> &[f64] {
        &self.kernel_halfwidths
    }

    pub fn voxel_spacing(&self) -> &[f64] {
        &self.voxel_spacing
    }

    pub fn ndim(&self) -> usize {
        self.voxel_spacing.len()
    }

    pub fn extended_halfwidths(&self) -> Vec<f64> {
        self.object_halfwidths.iter().zip(&self.kernel_halfwidths).map(|(a, b)| a + b).collect()
    }

    /// Grid on Ω.
    pub fn object_grid(&self) -> Result<Grid> {
        let dims = self
            .object_halfwidths
            .iter()
            .zip(&self.voxel_spacing)
            .map(|(&r, &h)| whole_voxels(2.0 * r, h, "object width"))
            .collect::<Result<Vec<_>>>()?;
        Grid::new(&dims, &self.voxel_spacing)
    }

    /// Kernel margin in voxels per side.
    pub fn padding(&self) -> Result<Vec<usize>> {
        self.kernel_halfwidths
            .iter()
            .zip(&self.voxel_spacing)
            .map(|(&r, &h)| whole_voxels(r, h, "kernel halfwidth"))
            .collect()
    }

    /// Grid on the extended box Ω′.
    pub fn extended_grid(&self) -> Result<Grid> {
        let obj = self.object_grid()?;
        let pad = self.padding()?;
        let dims: Vec<usize> = obj.dims().iter().zip(&pad).map(|(n, p)| n + 2 * p).collect();
        Grid::new(&dims, &self.voxel_spacing)
    }
}

/// Real samples on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!("{} values for grid of {} voxels", values.len(), grid.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ScalarField"));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        let n = grid.len();
        Self { grid, values: vec![0.0; n] }
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        let n = grid.len();
        Self { grid, values: vec![value; n] }
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let mut idx = vec![0usize; grid.ndim()];
        let mut x = vec![0.0; grid.ndim()];
        let values = (0..grid.len())
            .map(|k| {
                grid.unravel(k, &mut idx);
                for (a, xa) in x.iter_mut().enumerate() {
                    *xa = grid.center_coord(a, idx[a]);
                }
                f(&x)
            })
            .collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Unweighted L² inner product.
    pub fn dot(&self, other: &ScalarField) -> Result<f64> {
        self.grid.check_same(&other.grid, "dot")?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>() * self.grid.voxel_volume())
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.values.iter().map(|a| a * a).sum::<f64>() * self.grid.voxel_volume())
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.voxel_volume()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Complex samples on a grid (kernels and spectral intermediates).
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    grid: Grid,
    values: Vec<Complex64>,
}

impl ComplexField {
    pub fn new(grid: Grid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!("{} values for grid of {} voxels", values.len(), grid.len())));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite("ComplexField"));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        let n = grid.len();
        Self { grid, values: vec![Complex64::new(0.0, 0.0); n] }
    }

    pub fn from_real(field: &ScalarField) -> Self {
        Self { grid: field.grid.clone(), values: field.values.iter().map(|&v| Complex64::new(v, 0.0)).collect() }
    }

    /// Samples `f` at the wrap-around lattice offsets of the periodic cell.
    pub fn from_periodic_fn(grid: Grid, mut f: impl FnMut(&[f64]) -> Complex64) -> Self {
        let mut idx = vec![0usize; grid.ndim()];
        let mut z = vec![0.0; grid.ndim()];
        let values = (0..grid.len())
            .map(|k| {
                grid.unravel(k, &mut idx);
                for (a, za) in z.iter_mut().enumerate() {
                    *za = grid.wrapped_offset(a, idx[a]);
                }
                f(&z)
            })
            .collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn conj(&self) -> Self {
        Self { grid: self.grid.clone(), values: self.values.iter().map(|v| v.conj()).collect() }
    }

    pub fn re(&self) -> ScalarField {
        ScalarField { grid: self.grid.clone(), values: self.values.iter().map(|v| v.re).collect() }
    }

    pub fn im(&self) -> ScalarField {
        ScalarField { grid: self.grid.clone(), values: self.values.iter().map(|v| v.im).collect() }
    }

    /// Sesquilinear L² inner product Σ a·conj(b)·dV.
    pub fn dot(&self, other: &ComplexField) -> Result<Complex64> {
        self.grid.check_same(&other.grid, "dot")?;
        let s: Complex64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b.conj()).sum();
        Ok(s * self.grid.voxel_volume())
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.values.iter().map(|a| a.norm_sqr()).sum::<f64>() * self.grid.voxel_volume())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Data-space weight w = 1/(2·max(g_δ, c)).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightField {
    field: ScalarField,
    floor: f64,
}

impl WeightField {
    pub fn field(&self) -> &ScalarField {
        &self.field
    }

    pub fn values(&self) -> &[f64] {
        self.field.values()
    }

    pub fn grid(&self) -> &Grid {
        self.field.grid()
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// Unit weight, turning the data space into plain L².
    pub fn uniform(grid: Grid) -> Self {
        Self { field: ScalarField::constant(grid, 1.0), floor: 0.5 }
    }
}

pub fn weight_from_data(g_delta: &ScalarField, floor: f64) -> Result<WeightField> {
    if !(floor > 0.0 && floor.is_finite()) {
        return Err(Error::InvalidParameter(format!("weight floor must be positive, got {floor}")));
    }
    let values = g_delta.values().iter().map(|&g| 0.5 / g.max(floor)).collect();
    Ok(WeightField { field: ScalarField::new(g_delta.grid().clone(), values)?, floor })
}

/// ∫ a·b·w dx as a voxel-volume-weighted sum.
pub fn inner_weighted(a: &ScalarField, b: &ScalarField, w: &WeightField) -> Result<f64> {
    a.grid().check_same(b.grid(), "inner_weighted")?;
    a.grid().check_same(w.grid(), "inner_weighted weight")?;
    let s: f64 = a.values().iter().zip(b.values()).zip(w.values()).map(|((x, y), z)| x * y * z).sum();
    Ok(s * a.grid().voxel_volume())
}

/// Zero padding from Ω into Ω′ (placed with `pad` voxels of margin per side).
pub fn pad_into<T: Copy + Default>(src_dims: &[usize], pad: &[usize], dst_dims: &[usize], src: &[T], dst: &mut [T]) {
    for v in dst.iter_mut() {
        *v = T::default();
    }
    for_each_inner(src_dims, pad, dst_dims, |s, d| dst[d] = src[s]);
}

/// Restriction from Ω′ to Ω, the adjoint of [`pad_into`].
pub fn crop_from<T: Copy>(src_dims: &[usize], pad: &[usize], dst_dims: &[usize], big: &[T], out: &mut [T]) {
    for_each_inner(src_dims, pad, dst_dims, |s, d| out[s] = big[d]);
}

fn for_each_inner(inner: &[usize], pad: &[usize], outer: &[usize], mut f: impl FnMut(usize, usize)) {
    let n: usize = inner.iter().product();
    let mut idx = vec![0usize; inner.len()];
    for s in 0..n {
        let mut rem = s;
        for a in (0..inner.len()).rev() {
            idx[a] = rem % inner[a];
            rem /= inner[a];
        }
        let d = idx.iter().zip(pad).zip(outer).fold(0, |acc, ((&i, &p), &m)| acc * m + i + p);
        f(s, d);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(d: &[usize]) -> Grid {
        Grid::new(d, &vec![1.0; d.len()]).unwrap()
    }

    #[test]
    fn constant_unit_volume() {
        // 4x4 voxels of volume 1/16 cover a unit square
        let g = Grid::new(&[4, 4], &[0.25, 0.25]).unwrap();
        let one = ScalarField::constant(g.clone(), 1.0);
        let w = WeightField::uniform(g);
        assert!((inner_weighted(&one, &one, &w).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn weight_cancels_one_factor() {
        let g = grid(&[5, 3]);
        let data = ScalarField::from_fn(g, |x| 3.0 + x[0] * x[0] + x[1]);
        let w = weight_from_data(&data, 1e-9).unwrap();
        let half_total = 0.5 * data.total();
        assert!((inner_weighted(&data, &data, &w).unwrap() - half_total).abs() < 1e-12 * half_total);
    }

    #[test]
    fn weight_formula_and_floor() {
        let g = grid(&[3]);
        let data = ScalarField::new(g, vec![8.0, 0.0, 1.0]).unwrap();
        let w = weight_from_data(&data, 1.0).unwrap();
        assert_eq!(w.values(), &[1.0 / 16.0, 0.5, 0.5]);
        assert!(weight_from_data(&data, 0.0).is_err());
        assert!(weight_from_data(&data, -1.0).is_err());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let a = ScalarField::zeros(grid(&[3, 3]));
        let b = ScalarField::zeros(grid(&[3, 4]));
        let w = WeightField::uniform(grid(&[3, 3]));
        assert!(matches!(inner_weighted(&a, &b, &w), Err(Error::Shape(_))));
    }

    #[test]
    fn domain_box_grids() {
        let b = DomainBox::from_voxels(&[8, 6], &[2, 3], &[10.0, 20.0]).unwrap();
        assert_eq!(b.object_grid().unwrap().dims(), &[8, 6]);
        assert_eq!(b.extended_grid().unwrap().dims(), &[12, 12]);
        assert_eq!(b.extended_halfwidths(), vec![60.0, 120.0]);
        assert!(DomainBox::new(&[1.0], &[0.0], &[1.0]).is_err());
        assert!(DomainBox::new(&[1.25], &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn crop_is_adjoint_of_pad() {
        let inner = [3usize, 4];
        let pad = [1usize, 2];
        let outer = [5usize, 8];
        let a: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
        let b: Vec<f64> = (0..40).map(|i| (i as f64 * 1.3).cos()).collect();
        let mut pa = vec![0.0; 40];
        pad_into(&inner, &pad, &outer, &a, &mut pa);
        let mut cb = vec![0.0; 12];
        crop_from(&inner, &pad, &outer, &b, &mut cb);
        let lhs: f64 = pa.iter().zip(&b).map(|(x, y)| x * y).sum();
        let rhs: f64 = a.iter().zip(&cb).map(|(x, y)| x * y).sum();
        assert!((lhs - rhs).abs() < 1e-14);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(ScalarField::new(grid(&[2]), vec![1.0, f64::NAN]).is_err());
    }
}
