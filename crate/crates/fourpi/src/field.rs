//! Field files: a raw little-endian f64 payload `<stem>.f64` next to a JSON
//! sidecar `<stem>.json` describing the grid.

use std::fs;
use std::path::{Path, PathBuf};

use fourpi_core::grid::{Grid, ScalarField};
use serde::{Deserialize, Serialize};

use crate::error::{io, Error, Result};

pub const AXIS_ORDER: &str = "row-major, last axis fastest";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Object,
    Data,
    Weight,
    KernelReal,
    KernelImag,
    Phase,
    Vector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub kind: FieldKind,
    pub dims: Vec<usize>,
    pub spacing_nm: Vec<f64>,
    pub axis_order: String,
    pub dtype: String,
    /// Payload file name, relative to the sidecar.
    pub payload: String,
}

fn stem_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("f64"), stem.with_extension("json"))
}

pub fn encode_payload(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_payload(bytes: &[u8], path: &Path) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::Format {
            path: path.into(),
            reason: format!("{} bytes is not a multiple of 8", bytes.len()),
        });
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

/// Writes `<stem>.f64` and `<stem>.json`; returns the sidecar path.
pub fn write_field(stem: &Path, field: &ScalarField, kind: FieldKind) -> Result<PathBuf> {
    let (data_path, meta_path) = stem_paths(stem);
    let header = FieldHeader {
        kind,
        dims: field.grid().dims().to_vec(),
        spacing_nm: field.grid().spacing().to_vec(),
        axis_order: AXIS_ORDER.into(),
        dtype: "f64le".into(),
        payload: data_path.file_name().unwrap().to_string_lossy().into_owned(),
    };
    io(&data_path, fs::write(&data_path, encode_payload(field.values())))?;
    write_json(&meta_path, &header)?;
    Ok(meta_path)
}

/// Reads a field from its sidecar (or from the stem / payload path).
pub fn read_field(path: &Path) -> Result<(ScalarField, FieldKind)> {
    let meta_path = path.with_extension("json");
    let header: FieldHeader = read_json(&meta_path)?;
    if header.dtype != "f64le" || header.axis_order != AXIS_ORDER {
        return Err(Error::Format { path: meta_path, reason: "unsupported dtype or axis order".into() });
    }
    let data_path = meta_path.with_file_name(&header.payload);
    let bytes = io(&data_path, fs::read(&data_path))?;
    let values = decode_payload(&bytes, &data_path)?;
    let grid = Grid::new(&header.dims, &header.spacing_nm)?;
    if values.len() != grid.len() {
        return Err(Error::Format {
            path: data_path,
            reason: format!("{} values for dims {:?}", values.len(), header.dims),
        });
    }
    Ok((ScalarField::new(grid, values)?, header.kind))
}

/// Reads a field and insists on its kind.
pub fn read_field_of(path: &Path, kind: FieldKind) -> Result<ScalarField> {
    let (f, k) = read_field(path)?;
    if k != kind {
        return Err(Error::Format { path: path.into(), reason: format!("expected kind {kind:?}, found {k:?}") });
    }
    Ok(f)
}

/// A plain vector as a 1-D field with unit spacing.
pub fn write_vector(stem: &Path, values: &[f64]) -> Result<PathBuf> {
    let grid = Grid::new(&[values.len()], &[1.0])?;
    write_field(stem, &ScalarField::new(grid, values.to_vec())?, FieldKind::Vector)
}

pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    Ok(read_field_of(path, FieldKind::Vector)?.into_values())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json { path: path.into(), source })?;
    text.push('\n');
    io(path, fs::write(path, text))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = io(path, fs::read_to_string(path))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path: path.into(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payload_is_little_endian() {
        let b = encode_payload(&[1.0]);
        assert_eq!(b, 1.0f64.to_le_bytes());
        assert!(decode_payload(&b[..7], Path::new("x")).is_err());
    }
}
