//! Small dense helpers on top of nalgebra, plus the text formats shared by
//! every CSV the crate writes.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;

use crate::{Error, Result};

/// Frobenius inner product `⟨A, B⟩ = tr(AᵀB)`.
pub fn frobenius_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Operator 2-norm (largest singular value).
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().max()
}

/// Formats with 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

pub fn parse_f64(field: &str, line: usize) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|e| Error::Parse {
        line,
        message: format!("{field:?}: {e}"),
    })
}

/// Writes one matrix row per line.
pub fn write_matrix<W: Write>(out: &mut W, a: &DMatrix<f64>) -> std::io::Result<()> {
    for i in 0..a.nrows() {
        let row: Vec<String> = (0..a.ncols()).map(|j| fmt_f64(a[(i, j)])).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_matrix<R: BufRead>(input: R) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| parse_f64(f, idx + 1))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::DimensionMismatch {
                    expected: first.len(),
                    found: row.len(),
                });
            }
        }
        rows.push(row);
    }
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}
