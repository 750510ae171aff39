//! Dataset and artifact persistence.
//!
//! Two matrix formats:
//! * CSV with a strict `f0,f1,...` header, one record per row, shortest
//!   round-trip float formatting (so save -> load is bit-exact).
//! * `f32bin`: magic `DMIA`, little-endian u32 version (= 1), u32 rows,
//!   u32 cols, then row-major little-endian f32 values, widened to f64 on
//!   load.
//!
//! Kernels and reports persist as versioned JSON; loaders reject unknown
//! versions.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::dataset::{Dataset, Provenance};
use crate::error::{Error, Result};
use crate::kernel::DeepKernel;
use crate::numeric::Matrix;

pub const F32BIN_MAGIC: &[u8; 4] = b"DMIA";
pub const F32BIN_VERSION: u32 = 1;
pub const KERNEL_SCHEMA_VERSION: u32 = 1;

/// On-disk matrix format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    F32Bin,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::F32Bin => "bin",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "csv" => Ok(Format::Csv),
            "f32bin" | "bin" => Ok(Format::F32Bin),
            other => Err(Error::InvalidArgument(format!(
                "unknown format {other:?}; expected csv or f32bin"
            ))),
        }
    }
}

pub fn matrix_to_csv_string(m: &Matrix) -> String {
    let header: Vec<String> = (0..m.cols()).map(|j| format!("f{j}")).collect();
    let mut out = header.join(",");
    out.push('\n');
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn matrix_from_csv_str(text: &str) -> Result<Matrix> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::MalformedHeader("empty file".into()))?;
    let fields: Vec<&str> = header.split(',').collect();
    for (j, f) in fields.iter().enumerate() {
        if *f != format!("f{j}") {
            return Err(Error::MalformedHeader(format!(
                "expected column {j} to be named f{j}, found {f:?}"
            )));
        }
    }
    let cols = fields.len();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in lines {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != cols {
            return Err(Error::RaggedRow {
                line: lineno + 1,
                expected: cols,
                got: parts.len(),
            });
        }
        let mut row = Vec::with_capacity(cols);
        for p in parts {
            let v: f64 = p.trim().parse().map_err(|_| Error::BadFloat {
                line: lineno + 1,
                value: p.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::BadFloat {
                    line: lineno + 1,
                    value: p.to_string(),
                });
            }
            row.push(v);
        }
        rows.push(row);
    }
    Matrix::from_rows(&rows)
}

pub fn matrix_to_f32bin(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * m.rows() * m.cols());
    out.extend_from_slice(F32BIN_MAGIC);
    out.extend_from_slice(&F32BIN_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for &v in m.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn matrix_from_f32bin(bytes: &[u8]) -> Result<Matrix> {
    if bytes.len() < 16 {
        return Err(Error::Truncated {
            expected: 16,
            got: bytes.len(),
        });
    }
    if &bytes[0..4] != F32BIN_MAGIC {
        return Err(Error::MagicMismatch);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != F32BIN_VERSION {
        return Err(Error::UnsupportedVersion {
            got: version,
            supported: F32BIN_VERSION,
        });
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let expected = 16 + 4 * rows * cols;
    if bytes.len() != expected {
        return Err(Error::Truncated {
            expected,
            got: bytes.len(),
        });
    }
    let mut data = Vec::with_capacity(rows * cols);
    for (i, chunk) in bytes[16..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        if !v.is_finite() {
            return Err(Error::NonFiniteData {
                row: i / cols.max(1),
                col: i % cols.max(1),
            });
        }
        data.push(v);
    }
    Matrix::from_vec(rows, cols, data)
}

pub fn save_matrix(path: &Path, m: &Matrix, format: Format) -> Result<()> {
    match format {
        Format::Csv => {
            fs::write(path, matrix_to_csv_string(m))?;
        }
        Format::F32Bin => {
            let mut f = fs::File::create(path)?;
            f.write_all(&matrix_to_f32bin(m))?;
        }
    }
    Ok(())
}

pub fn load_matrix(path: &Path, format: Format) -> Result<Matrix> {
    match format {
        Format::Csv => matrix_from_csv_str(&fs::read_to_string(path)?),
        Format::F32Bin => {
            let mut bytes = Vec::new();
            fs::File::open(path)?.read_to_end(&mut bytes)?;
            matrix_from_f32bin(&bytes)
        }
    }
}

pub fn save_dataset(path: &Path, d: &Dataset, format: Format) -> Result<()> {
    save_matrix(path, &d.matrix, format)
}

/// Load a dataset; the provenance tag comes from the caller's context (the
/// formats store raw feature values only).
pub fn load_dataset(path: &Path, format: Format, provenance: Provenance) -> Result<Dataset> {
    Ok(Dataset::new(load_matrix(path, format)?, provenance))
}

/// Versioned JSON envelope for the trained kernel (feature net, epsilon, and
/// both bandwidths ride together).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelFile {
    pub schema_version: u32,
    pub kernel: DeepKernel,
}

pub fn save_kernel(path: &Path, kernel: &DeepKernel) -> Result<()> {
    let file = KernelFile {
        schema_version: KERNEL_SCHEMA_VERSION,
        kernel: kernel.clone(),
    };
    write_json(path, &file)
}

pub fn load_kernel(path: &Path) -> Result<DeepKernel> {
    let file: KernelFile = read_json(path)?;
    if file.schema_version != KERNEL_SCHEMA_VERSION {
        return Err(Error::UnsupportedVersion {
            got: file.schema_version,
            supported: KERNEL_SCHEMA_VERSION,
        });
    }
    Ok(file.kernel)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}
