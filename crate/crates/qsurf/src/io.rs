//! Field persistence: a JSON header next to a raw file of row-major
//! little-endian `f64` values with the same stem and extension `f64`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use qsurf_core::{Grid, ScalarField};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldHeader {
    pub dim: usize,
    pub origin: Vec<f64>,
    pub h: f64,
    pub cells_per_axis: Vec<usize>,
    pub value_count: usize,
    pub byte_order: String,
    pub scalar: String,
}

impl FieldHeader {
    pub fn of(grid: &Grid) -> Self {
        FieldHeader {
            dim: grid.dim(),
            origin: grid.origin().to_vec(),
            h: grid.h(),
            cells_per_axis: grid.cells_per_axis().to_vec(),
            value_count: grid.len(),
            byte_order: "little".into(),
            scalar: "float64".into(),
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        Ok(Grid::new(self.dim, &self.origin, self.h, &self.cells_per_axis)?)
    }
}

pub fn raw_path(header: &Path) -> PathBuf {
    header.with_extension("f64")
}

/// Writes `dir/name.json` and `dir/name.f64`; returns the header path.
pub fn write_field(dir: &Path, name: &str, field: &ScalarField) -> Result<PathBuf> {
    let header = dir.join(format!("{name}.json"));
    let mut bytes = Vec::with_capacity(8 * field.values().len());
    for v in field.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(raw_path(&header), bytes).with_context(|| format!("writing {}", raw_path(&header).display()))?;
    let text = serde_json::to_string_pretty(&FieldHeader::of(field.grid()))?;
    fs::write(&header, text + "\n").with_context(|| format!("writing {}", header.display()))?;
    Ok(header)
}

pub fn read_header(path: &Path) -> Result<FieldHeader> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let header: FieldHeader =
        serde_json::from_str(&text).with_context(|| format!("parsing field header {}", path.display()))?;
    if header.byte_order != "little" || header.scalar != "float64" {
        bail!("{}: unsupported encoding {} {}", path.display(), header.byte_order, header.scalar);
    }
    Ok(header)
}

pub fn read_field(path: &Path) -> Result<ScalarField> {
    let header = read_header(path)?;
    let grid = header.grid()?;
    ensure!(
        header.value_count == grid.len(),
        "{}: value_count {} does not match the grid ({} nodes)",
        path.display(),
        header.value_count,
        grid.len()
    );
    let raw = raw_path(path);
    let bytes = fs::read(&raw).with_context(|| format!("reading {}", raw.display()))?;
    ensure!(
        bytes.len() == 8 * header.value_count,
        "{}: expected {} bytes, found {}",
        raw.display(),
        8 * header.value_count,
        bytes.len()
    );
    let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
    Ok(ScalarField::new(grid, values)?)
}
