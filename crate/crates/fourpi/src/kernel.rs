//! Kernel expansions on disk: one kernel_real/kernel_imag field pair per m
//! plus a manifest listing M and the order in which the pairs appear.

use std::fs;
use std::path::{Path, PathBuf};

use fourpi_core::fourpi::{KernelExpansion, KernelSource};
use fourpi_core::grid::{ComplexField, ScalarField};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{io, Error, Result};
use crate::field::{read_field_of, read_json, write_field, write_json, FieldKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelEntry {
    pub m: i32,
    /// Sidecar paths relative to the manifest.
    pub real: String,
    pub imag: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelManifest {
    pub order: usize,
    pub m_ordering: Vec<i32>,
    pub components: Vec<KernelEntry>,
}

/// Writes A_{−M}, …, A_M into `dir` and returns the manifest path.
pub fn save_expansion(dir: &Path, kernel: &KernelExpansion) -> Result<PathBuf> {
    io(dir, fs::create_dir_all(dir))?;
    let order = kernel.order() as i32;
    let mut components = Vec::new();
    for m in -order..=order {
        let a = kernel.component(m).expect("m within order");
        let tag = if m < 0 { format!("m{}", -m) } else { format!("p{m}") };
        let re = write_field(&dir.join(format!("kernel_{tag}_re")), &a.re(), FieldKind::KernelReal)?;
        let im = write_field(&dir.join(format!("kernel_{tag}_im")), &a.im(), FieldKind::KernelImag)?;
        components.push(KernelEntry { m, real: file_name(&re), imag: file_name(&im) });
    }
    let manifest = KernelManifest { order: kernel.order(), m_ordering: (-order..=order).collect(), components };
    let path = dir.join("kernel.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

fn file_name(p: &Path) -> String {
    p.file_name().unwrap().to_string_lossy().into_owned()
}

/// Loads an expansion written by [`save_expansion`] or by an external tool
/// following the same manifest. Conjugate symmetry and nonnegativity of the
/// synthesized psf are checked on construction.
pub fn load_expansion(manifest_path: &Path) -> Result<KernelExpansion> {
    let manifest: KernelManifest = read_json(manifest_path)?;
    let bad = |reason: String| Error::Format { path: manifest_path.into(), reason };
    let order = manifest.order as i32;
    let mut want: Vec<i32> = (-order..=order).collect();
    let mut have = manifest.m_ordering.clone();
    have.sort_unstable();
    want.sort_unstable();
    if have != want || manifest.components.len() != want.len() {
        return Err(bad(format!("m_ordering {:?} does not cover -{order}..={order}", manifest.m_ordering)));
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut slots: Vec<Option<ComplexField>> = vec![None; want.len()];
    for (entry, &m) in manifest.components.iter().zip(&manifest.m_ordering) {
        if entry.m != m {
            return Err(bad(format!("component m={} listed at ordering slot m={m}", entry.m)));
        }
        let re = read_field_of(&base.join(&entry.real), FieldKind::KernelReal)?;
        let im = read_field_of(&base.join(&entry.imag), FieldKind::KernelImag)?;
        slots[(m + order) as usize] = Some(combine(&re, &im)?);
    }
    let all: Vec<ComplexField> = slots.into_iter().map(|s| s.unwrap()).collect();
    Ok(KernelExpansion::from_components(all, KernelSource::File)?)
}

fn combine(re: &ScalarField, im: &ScalarField) -> Result<ComplexField> {
    re.grid().check_same(im.grid(), "kernel imaginary part")?;
    let values = re.values().iter().zip(im.values()).map(|(&a, &b)| Complex64::new(a, b)).collect();
    Ok(ComplexField::new(re.grid().clone(), values)?)
}
