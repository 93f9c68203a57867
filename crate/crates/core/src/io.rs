//! Matrix files for reproducible fixtures.
//!
//! Layout, shared by the text and binary flavors:
//!
//! ```text
//! GRAFF v1 <n> <k> form={stiefel|projection|dense}
//! <rows> <cols>
//! <payload>
//! ```
//!
//! The payload is either `rows` lines of `cols` decimal floats (text) or
//! exactly `8 * rows * cols` bytes of little-endian f64 in row-major order
//! (binary); the loader tells them apart by that byte count. Text values
//! are written with 17 significant digits, so both flavors round-trip f64
//! exactly. `stiefel` files must be (n+1) x (k+1) and load as validated
//! canonical points, `projection` files (n+1) x (n+1); `dense` carries any
//! matrix (gradients, objective data) with n, k recording the Graff(k,n)
//! context.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::coords::{ProjectionPoint, StiefelPoint};
use crate::error::{GraffError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixForm {
    Stiefel,
    Projection,
    Dense,
}

impl fmt::Display for MatrixForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatrixForm::Stiefel => "stiefel",
            MatrixForm::Projection => "projection",
            MatrixForm::Dense => "dense",
        })
    }
}

impl FromStr for MatrixForm {
    type Err = GraffError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stiefel" => Ok(MatrixForm::Stiefel),
            "projection" => Ok(MatrixForm::Projection),
            "dense" => Ok(MatrixForm::Dense),
            other => Err(GraffError::Parse(format!("unknown form `{other}`"))),
        }
    }
}

/// A loaded matrix file: the declared Graff(k,n) context plus the payload.
#[derive(Debug, Clone)]
pub struct GraffFile {
    pub form: MatrixForm,
    pub n: usize,
    pub k: usize,
    pub matrix: DMatrix<f64>,
}

fn check_shape(form: MatrixForm, n: usize, k: usize, rows: usize, cols: usize) -> Result<()> {
    if k >= n {
        return Err(GraffError::Parse(format!(
            "header declares k={k}, n={n}, but k < n is required"
        )));
    }
    let ok = match form {
        MatrixForm::Stiefel => rows == n + 1 && cols == k + 1,
        MatrixForm::Projection => rows == n + 1 && cols == n + 1,
        MatrixForm::Dense => rows > 0 && cols > 0,
    };
    if ok {
        Ok(())
    } else {
        Err(GraffError::Parse(format!(
            "form={form} with n={n}, k={k} does not admit a {rows}x{cols} matrix"
        )))
    }
}

fn header(form: MatrixForm, n: usize, k: usize, rows: usize, cols: usize) -> String {
    format!("GRAFF v1 {n} {k} form={form}\n{rows} {cols}\n")
}

/// Writes the text flavor.
pub fn save_matrix_text(
    path: &Path,
    form: MatrixForm,
    n: usize,
    k: usize,
    m: &DMatrix<f64>,
) -> Result<()> {
    let (rows, cols) = m.shape();
    check_shape(form, n, k, rows, cols)?;
    let mut out = header(form, n, k, rows, cols);
    for i in 0..rows {
        let line: Vec<String> = (0..cols).map(|j| format!("{:.17e}", m[(i, j)])).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes the binary flavor (row-major little-endian f64 payload).
pub fn save_matrix_binary(
    path: &Path,
    form: MatrixForm,
    n: usize,
    k: usize,
    m: &DMatrix<f64>,
) -> Result<()> {
    let (rows, cols) = m.shape();
    check_shape(form, n, k, rows, cols)?;
    let mut out = header(form, n, k, rows, cols).into_bytes();
    out.reserve(8 * rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

fn split_line(bytes: &[u8]) -> Result<(&str, &[u8])> {
    let pos = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| GraffError::Parse("missing newline in header".into()))?;
    let line = std::str::from_utf8(&bytes[..pos])
        .map_err(|_| GraffError::Parse("header is not utf-8".into()))?;
    Ok((line.trim_end_matches('\r'), &bytes[pos + 1..]))
}

fn parse_usize(tok: &str, what: &str) -> Result<usize> {
    tok.parse()
        .map_err(|_| GraffError::Parse(format!("bad {what}: `{tok}`")))
}

/// Loads either flavor of matrix file.
pub fn load_matrix(path: &Path) -> Result<GraffFile> {
    let bytes = fs::read(path)?;
    let (head, rest) = split_line(&bytes)?;
    let toks: Vec<&str> = head.split_whitespace().collect();
    if toks.len() != 5 || toks[0] != "GRAFF" || toks[1] != "v1" {
        return Err(GraffError::Parse(format!("bad header line `{head}`")));
    }
    let n = parse_usize(toks[2], "n")?;
    let k = parse_usize(toks[3], "k")?;
    let form: MatrixForm = toks[4]
        .strip_prefix("form=")
        .ok_or_else(|| GraffError::Parse(format!("bad form token `{}`", toks[4])))?
        .parse()?;
    let (dims, payload) = split_line(rest)?;
    let dtoks: Vec<&str> = dims.split_whitespace().collect();
    if dtoks.len() != 2 {
        return Err(GraffError::Parse(format!("bad dimension line `{dims}`")));
    }
    let rows = parse_usize(dtoks[0], "rows")?;
    let cols = parse_usize(dtoks[1], "cols")?;
    check_shape(form, n, k, rows, cols)?;
    let count = rows * cols;

    let matrix = if payload.len() == 8 * count {
        let mut m = DMatrix::zeros(rows, cols);
        for idx in 0..count {
            let mut buf = [0u8; 8];
            buf.copy_from_slice(&payload[8 * idx..8 * idx + 8]);
            m[(idx / cols, idx % cols)] = f64::from_le_bytes(buf);
        }
        m
    } else {
        let text = std::str::from_utf8(payload)
            .map_err(|_| GraffError::Parse("text payload is not utf-8".into()))?;
        let values: Vec<f64> = text
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| GraffError::Parse(format!("bad float `{tok}`")))
            })
            .collect::<Result<_>>()?;
        if values.len() != count {
            return Err(GraffError::Parse(format!(
                "expected {count} values, found {}",
                values.len()
            )));
        }
        DMatrix::from_row_slice(rows, cols, &values)
    };
    Ok(GraffFile { form, n, k, matrix })
}

/// Loads and validates a canonical Stiefel point.
pub fn load_stiefel(path: &Path) -> Result<StiefelPoint> {
    let f = load_matrix(path)?;
    if f.form != MatrixForm::Stiefel {
        return Err(GraffError::Parse(format!(
            "expected form=stiefel, found form={}",
            f.form
        )));
    }
    StiefelPoint::try_new(f.matrix)
}

/// Loads and validates a projection point.
pub fn load_projection(path: &Path) -> Result<ProjectionPoint> {
    let f = load_matrix(path)?;
    if f.form != MatrixForm::Projection {
        return Err(GraffError::Parse(format!(
            "expected form=projection, found form={}",
            f.form
        )));
    }
    let p = ProjectionPoint::try_new(f.matrix)?;
    if p.k() != f.k {
        return Err(GraffError::Parse(format!(
            "header declares k={}, matrix has rank {}",
            f.k,
            p.k() + 1
        )));
    }
    Ok(p)
}
