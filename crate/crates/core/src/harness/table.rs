use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Version string baked in at build time, or `unknown`.
pub fn git_describe() -> &'static str {
    option_env!("MRPTD_GIT_DESCRIBE").unwrap_or("unknown")
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Cell {
    pub fn text(s: impl Into<String>) -> Self {
        Cell::Text(s.into())
    }

    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Cell::Int(i) => Some(i as f64),
            Cell::Float(f) => Some(f),
            Cell::Text(_) => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Cell::Text(s) => Some(s),
            _ => None,
        }
    }

    fn render(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Float(f) => format_float(*f),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Text(if v { "true" } else { "false" }.into())
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.into())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// Seventeen significant digits, so every value round-trips exactly.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.16e}")
    }
}

/// Rectangular table with a metadata header.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    columns: Vec<String>,
    rows: Vec<Vec<Cell>>,
    /// Serialized into the `#` header line; must be deterministic.
    pub meta: BTreeMap<String, serde_json::Value>,
    /// Reported to the user but kept out of the serialized table.
    pub wall_time_secs: Option<f64>,
}

impl ResultTable {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
            meta: BTreeMap::new(),
            wall_time_secs: None,
        }
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, row: Vec<Cell>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::InvalidInput(format!(
                "row has {} cells, table has {} columns",
                row.len(),
                self.columns.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn cell(&self, row: usize, column: &str) -> Option<&Cell> {
        self.rows.get(row)?.get(self.column_index(column)?)
    }

    pub fn float(&self, row: usize, column: &str) -> Option<f64> {
        self.cell(row, column)?.as_f64()
    }

    pub fn text(&self, row: usize, column: &str) -> Option<&str> {
        self.cell(row, column)?.as_str()
    }

    /// Rows whose text cells match every `(column, value)` pair.
    pub fn find<'a>(&'a self, filters: &'a [(&'a str, &'a str)]) -> impl Iterator<Item = usize> + 'a {
        (0..self.rows.len()).filter(move |&r| filters.iter().all(|(c, v)| self.text(r, c) == Some(*v)))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header = serde_json::to_string(&self.meta).map_err(|e| Error::Config(e.to_string()))?;
        writeln!(out, "# {header}")?;
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(&self.columns).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render)).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Io(std::io::Error::other(e)))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(format_float(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(format_float(1.0), "1.0000000000000000e0");
    }

    #[test]
    fn rows_must_be_rectangular() {
        let mut t = ResultTable::new(["a", "b"]);
        assert!(t.push(vec![Cell::Int(1)]).is_err());
        assert!(t.push(vec![Cell::Int(1), Cell::Float(2.0)]).is_ok());
    }

    #[test]
    fn csv_layout() {
        let mut t = ResultTable::new(["name", "value"]);
        t.meta.insert("seed".into(), 7.into());
        t.push(vec!["a,b".into(), 0.5.into()]).unwrap();
        let s = t.to_csv_string().unwrap();
        assert_eq!(s, "# {\"seed\":7}\nname,value\n\"a,b\",5.0000000000000000e-1\n");
        assert!(!s.contains('\r'));
    }

    #[test]
    fn lookup_helpers() {
        let mut t = ResultTable::new(["kind", "x"]);
        t.push(vec!["u".into(), 1.5.into()]).unwrap();
        t.push(vec!["v".into(), 2.5.into()]).unwrap();
        let r: Vec<_> = t.find(&[("kind", "v")]).collect();
        assert_eq!(r, vec![1]);
        assert_eq!(t.float(1, "x"), Some(2.5));
        assert_eq!(t.float(1, "missing"), None);
    }
}
