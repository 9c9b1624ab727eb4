//! Field files: raw little-endian `f64` values (row-major, `y` outer) next
//! to a JSON sidecar `<file>.json` holding the grid description.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid_field::{GridSpec, ScalarField2D};

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn encode(field: &ScalarField2D) -> Vec<u8> {
    field.values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode(spec: GridSpec, bytes: &[u8]) -> Result<ScalarField2D> {
    if bytes.len() != spec.len() * 8 {
        return Err(Error::ShapeMismatch {
            expected: spec.len(),
            got: bytes.len() / 8,
        });
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ScalarField2D::new(spec, values)
}

pub fn write_field(path: &Path, field: &ScalarField2D) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode(field)).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(&field.spec).expect("grid spec serializes");
    fs::write(&side, json).map_err(|e| Error::io(&side, e))
}

pub fn read_field(path: &Path) -> Result<ScalarField2D> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let spec: GridSpec = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: side.clone(),
        msg: e.to_string(),
    })?;
    spec.validate()?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(spec, &bytes).map_err(|e| Error::Format {
        path: path.to_owned(),
        msg: e.to_string(),
    })
}

/// Binary PGM preview, solid (`>= 0.5`) drawn black, rows top to bottom
/// in decreasing `y`.
pub fn write_pgm(path: &Path, field: &ScalarField2D) -> Result<()> {
    let s = field.spec;
    let mut buf = format!("P5\n{} {}\n255\n", s.nx, s.ny).into_bytes();
    for iy in (0..s.ny).rev() {
        for ix in 0..s.nx {
            buf.push(if field.get(ix, iy) >= 0.5 { 0 } else { 255 });
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}
