//! Grey-scale PGM export with a plain-text colorbar sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use fourpi_core::grid::ScalarField;

use crate::error::{io, Error, Result};

/// A 2-D slice: `rows × cols` values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    /// Pixel size (row axis, column axis) in nm.
    pub pixel_nm: (f64, f64),
}

/// The plane through the grid centre spanned by `axes` (first, last axis
/// for the default axial view). 2-D fields are returned whole.
pub fn central_plane(field: &ScalarField, axes: (usize, usize)) -> Result<Slice> {
    let g = field.grid();
    let (a, b) = axes;
    if a >= g.ndim() || b >= g.ndim() || a == b {
        return Err(Error::Config(format!("axes {axes:?} invalid for a {}-D field", g.ndim())));
    }
    let dims = g.dims();
    let mut idx: Vec<usize> = dims.iter().map(|n| n / 2).collect();
    let mut values = Vec::with_capacity(dims[a] * dims[b]);
    for i in 0..dims[a] {
        for j in 0..dims[b] {
            idx[a] = i;
            idx[b] = j;
            values.push(field.values()[g.ravel(&idx)]);
        }
    }
    Ok(Slice { rows: dims[a], cols: dims[b], values, pixel_nm: (g.spacing()[a], g.spacing()[b]) })
}

pub fn axial_plane(field: &ScalarField) -> Result<Slice> {
    let nd = field.grid().ndim();
    central_plane(field, (0, nd - 1))
}

/// Writes `<stem>.pgm` (8-bit, linear between min and max) and
/// `<stem>.colorbar.txt`. Returns the image path.
pub fn write_pgm(stem: &Path, slice: &Slice, scale_bar_nm: Option<f64>) -> Result<PathBuf> {
    let (lo, hi) = slice.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let span = hi - lo;
    let mut bytes = format!("P5\n{} {}\n255\n", slice.cols, slice.rows).into_bytes();
    bytes.extend(slice.values.iter().map(|&v| if span > 0.0 { (255.0 * (v - lo) / span).round() as u8 } else { 0 }));
    let path = stem.with_extension("pgm");
    io(&path, fs::write(&path, bytes))?;
    let mut bar = format!(
        "min {lo:e}\nmax {hi:e}\npixel_nm {:e} {:e}\nmapping linear 0..255\n",
        slice.pixel_nm.0, slice.pixel_nm.1
    );
    if let Some(s) = scale_bar_nm {
        bar.push_str(&format!("scale_bar_nm {s:e}\n"));
    }
    let side = stem.with_extension("colorbar.txt");
    io(&side, fs::write(&side, bar))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use fourpi_core::grid::Grid;

    #[test]
    fn axial_plane_of_3d_field() {
        let g = Grid::new(&[2, 3, 4], &[1.0, 2.0, 3.0]).unwrap();
        let f = ScalarField::from_fn(g.clone(), |x| x[0] + 10.0 * x[2]);
        let s = axial_plane(&f).unwrap();
        assert_eq!((s.rows, s.cols), (2, 4));
        assert_eq!(s.pixel_nm, (1.0, 3.0));
        assert_eq!(s.values[1], f.values()[g.ravel(&[0, 1, 1])]);
    }
}
