//! CSV output with a header row and round-trippable floats.

use std::path::Path;

use crate::error::{Error, Result};

/// Formats like C's `%.17g`: 17 significant digits, trailing zeros trimmed.
pub fn format_f64(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{v:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..17).contains(&exp) {
        let m = trim_fraction(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let fixed = format!("{:.*}", (16 - exp) as usize, v);
        trim_fraction(&fixed).to_string()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// A CSV file whose rows are written as they arrive.
pub struct CsvOut {
    inner: csv::Writer<std::fs::File>,
    columns: usize,
}

impl CsvOut {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut inner = csv::Writer::from_path(path).map_err(csv_err)?;
        inner.write_record(header).map_err(csv_err)?;
        Ok(CsvOut {
            inner,
            columns: header.len(),
        })
    }

    pub fn row<S: AsRef<str>>(&mut self, fields: &[S]) -> Result<()> {
        if fields.len() != self.columns {
            return Err(Error::shape("csv row", self.columns, fields.len()));
        }
        self.inner
            .write_record(fields.iter().map(|f| f.as_ref()))
            .map_err(csv_err)
    }

    pub fn floats(&mut self, values: &[f64]) -> Result<()> {
        let f: Vec<String> = values.iter().map(|v| format_f64(*v)).collect();
        self.row(&f)
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush().map_err(Error::from)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}
