//! Matrix export for inspection: headerless row-major CSV and plain (P2) PGM
//! min-max scaled to 0..=255.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub fn matrix_to_csv(m: &Matrix) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Non-finite entries map to 0; a constant matrix maps to all zeros.
pub fn matrix_to_pgm(m: &Matrix) -> String {
    let finite: Vec<f64> = m.as_slice().iter().copied().filter(|v| v.is_finite()).collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let mut out = format!("P2\n{} {}\n255\n", m.cols(), m.rows());
    for i in 0..m.rows() {
        let row: Vec<String> = m
            .row(i)
            .iter()
            .map(|&v| {
                let level = if !v.is_finite() || range.is_nan() || range <= 0.0 {
                    0
                } else {
                    ((v - lo) / range * 255.0).round() as u8
                };
                level.to_string()
            })
            .collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

/// Writes `<stem>.csv` and `<stem>.pgm` into `dir`.
pub fn export_matrix(dir: &Path, stem: &str, m: &Matrix) -> Result<()> {
    let csv = dir.join(format!("{stem}.csv"));
    fs::write(&csv, matrix_to_csv(m)).map_err(|e| Error::io(&csv, e))?;
    let pgm = dir.join(format!("{stem}.pgm"));
    fs::write(&pgm, matrix_to_pgm(m)).map_err(|e| Error::io(&pgm, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_scaling() {
        let m = Matrix::from_rows(&[[0.0, 1.0], [0.5, f64::NEG_INFINITY]]).unwrap();
        assert_eq!(matrix_to_pgm(&m), "P2\n2 2\n255\n0 255\n128 0\n");
        assert_eq!(matrix_to_csv(&m), "0,1\n0.5,-inf\n");
        assert!(matrix_to_pgm(&Matrix::filled(1, 2, 3.0)).ends_with("0 0\n"));
    }
}
