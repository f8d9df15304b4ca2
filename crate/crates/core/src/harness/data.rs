use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::table::format_float;
use crate::error::{Error, Result};
use crate::synthetic;

/// Numeric table read from CSV: features and one target column.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvData {
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub features: DMatrix<f64>,
    pub target: DVector<f64>,
}

fn parse_err(line: u64, message: String) -> Error {
    Error::Parse { line, message }
}

/// Reads a headed CSV. `target` names the label column; the last column is
/// used when it is `None`. Lines starting with `#` are skipped.
pub fn read_csv<R: Read>(reader: R, target: Option<&str>) -> Result<CsvData> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(e.position().map_or(1, |p| p.line()), e.to_string()))?
        .clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(parse_err(1, "missing header row".into()));
    }
    let target_idx = match target {
        Some(name) => headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(1, format!("missing target column '{name}'")))?,
        None => headers.len() - 1,
    };
    if headers.len() < 2 {
        return Err(parse_err(1, "need at least one feature column besides the target".into()));
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                parse_err(line, format!("column '{}': cannot parse '{field}' as a number", &headers[j]))
            })?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("column '{}': value {field} is not finite", &headers[j])));
            }
            if j == target_idx {
                labels.push(v);
            } else {
                data.push(v);
            }
        }
    }
    let n = labels.len();
    if n < 2 {
        return Err(parse_err(0, format!("need at least two data rows, found {n}")));
    }
    let d = headers.len() - 1;
    Ok(CsvData {
        feature_names: headers
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != target_idx)
            .map(|(_, h)| h.to_string())
            .collect(),
        target_name: headers[target_idx].to_string(),
        features: DMatrix::from_row_slice(n, d, &data),
        target: DVector::from_vec(labels),
    })
}

pub fn load_csv(path: &Path, target: Option<&str>) -> Result<CsvData> {
    read_csv(File::open(path)?, target)
}

/// Writes `x0..x{d-1},y` rows with Gaussian features and
/// `y = x^T w + noise_sd * xi`, `w_j = 1 + j/d`.
pub fn write_synthetic_csv<W: Write>(mut out: W, n: usize, d: usize, noise_sd: f64, seed: u64) -> Result<()> {
    let x = synthetic::gaussian_design(n, d, seed)?;
    let w = DVector::from_fn(d, |j, _| 1.0 + j as f64 / d as f64);
    let y = synthetic::linear_labels(&x, &w, noise_sd, seed.wrapping_add(1))?;
    let header: Vec<String> = (0..d).map(|j| format!("x{j}")).chain(["y".to_string()]).collect();
    writeln!(out, "{}", header.join(","))?;
    for i in 0..n {
        let row: Vec<String> = x
            .row(i)
            .iter()
            .chain(std::iter::once(&y[i]))
            .map(|&v| format_float(v))
            .collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
