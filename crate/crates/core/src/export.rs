//! CSV and JSON artifacts. Numbers are written as `{:.16e}` (17 significant
//! digits) so that fits on reloaded data lose nothing.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use serde::Serialize;

use crate::abc2::ABCDecomposition;
use crate::baker::AutocorrSeries;
use crate::quad::SigmaAutocorrelation;
use crate::{Error, Result};

pub fn number(x: f64) -> String {
    format!("{x:.16e}")
}

/// A header row plus numeric rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|&x| number(x))).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::InvalidInput(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?)?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(|h| h.trim().to_string()).collect();
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let row = rec
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::InvalidInput(format!("row {}: {e}", i + 2)))?;
            rows.push(row);
        }
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    /// First column as abscissa and the first `re_*`/`im_*` pair as values.
    pub fn complex_series(&self) -> Result<(Vec<f64>, Vec<Complex64>)> {
        let t = self.rows.iter().map(|r| r[0]).collect();
        let re = self.header.iter().position(|h| h.starts_with("re_"));
        let Some(re) = re else {
            return Err(Error::InvalidInput(format!("no re_* column in header {:?}", self.header)));
        };
        let want = format!("im_{}", &self.header[re][3..]);
        let Some(im) = self.header.iter().position(|h| *h == want) else {
            return Err(Error::InvalidInput(format!("missing column {want}")));
        };
        Ok((t, self.rows.iter().map(|r| Complex64::new(r[re], r[im])).collect()))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidInput(format!("csv: {e}"))
}

/// `t, re_<name>, im_<name>, abs_<name>`.
pub fn complex_table(ts: &[f64], values: &[Complex64], name: &str) -> Table {
    let header = ["t".to_string(), format!("re_{name}"), format!("im_{name}"), format!("abs_{name}")];
    let mut t = Table { header: header.to_vec(), rows: Vec::with_capacity(ts.len()) };
    for (&x, z) in ts.iter().zip(values) {
        t.push(vec![x, z.re, z.im, z.norm()]);
    }
    t
}

/// `t, re_C, im_C`.
pub fn abc_table(abc: &ABCDecomposition) -> Table {
    let mut t = Table::new(&["t", "re_C", "im_C"]);
    for (&x, c) in abc.t_grid.iter().zip(&abc.c) {
        t.push(vec![x, c.re, c.im]);
    }
    t
}

/// `sigma, re_F, im_F, err`.
pub fn sigma_table(f: &SigmaAutocorrelation) -> Table {
    let mut t = Table::new(&["sigma", "re_F", "im_F", "err"]);
    for ((&s, v), &e) in f.sigma_grid.iter().zip(&f.values).zip(&f.errors) {
        t.push(vec![s, v.re, v.im, e]);
    }
    t
}

/// `t, re_F, im_F, abs_F`.
pub fn autocorr_table(series: &AutocorrSeries) -> Table {
    let ts: Vec<f64> = series.t_values.iter().map(|&t| t as f64).collect();
    complex_table(&ts, &series.f, "F")
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(to_json(value)?.as_bytes())?;
    Ok(())
}
