//! Table persistence: a JSON header and a CSV body of density values.
//!
//! The header holds the pole, the time layout, the scaled space grid, `alpha`,
//! `lambda` and the solver report. The body has one row per stored time with
//! the scaled density `(s - tau)^((d+1)/2) Phi` at every space node, space
//! index row-major with the last axis fastest.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::layout::{TimeLayout, ZGrid};
use super::table::{ParametrixTable, SolveReport};
use super::{ParametrixConfig, Pole};
use crate::coefficients::CoefficientField;
use crate::error::{Error, Result};
use crate::linalg::coords;

#[derive(Serialize, Deserialize)]
struct Header {
    dim: usize,
    tau: f64,
    xi: Vec<f64>,
    alpha: f64,
    lambda: f64,
    layout: TimeLayout,
    zgrid: ZGrid,
    config: ParametrixConfig,
    report: SolveReport,
    rows: usize,
    columns: usize,
}

fn paths(dir: &Path, stem: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{stem}.json")), dir.join(format!("{stem}.csv")))
}

impl ParametrixTable {
    /// Writes `<stem>.json` and `<stem>.csv` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        let d = self.dim();
        let nz = self.zgrid.len();
        let header = Header {
            dim: d,
            tau: self.pole.tau,
            xi: coords(&self.pole.xi, d),
            alpha: self.field.alpha(),
            lambda: self.field.lambda(),
            layout: self.layout.clone(),
            zgrid: self.zgrid,
            config: self.cfg.clone(),
            report: self.report.clone(),
            rows: self.layout.len(),
            columns: nz,
        };
        let (hp, bp) = paths(dir, stem);
        fs::write(&hp, serde_json::to_string_pretty(&header).map_err(|e| Error::Format(e.to_string()))?)?;
        let mut out = BufWriter::new(fs::File::create(&bp)?);
        for row in self.psi.chunks(nz) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a table written by [`ParametrixTable::write`]. The field must be
    /// the one the table was built from; its `alpha` and `lambda` are checked.
    pub fn read(dir: &Path, stem: &str, field: Arc<dyn CoefficientField>) -> Result<Self> {
        let (hp, bp) = paths(dir, stem);
        let mut header: Header =
            serde_json::from_str(&fs::read_to_string(&hp)?).map_err(|e| Error::Format(e.to_string()))?;
        if header.dim != field.dim() || header.alpha != field.alpha() || header.lambda != field.lambda() {
            return Err(Error::Format("table header does not match the supplied field".into()));
        }
        header.layout.restore_weights();
        let mut psi = Vec::with_capacity(header.rows * header.columns);
        for (i, line) in BufReader::new(fs::File::open(&bp)?).lines().enumerate() {
            let line = line?;
            let before = psi.len();
            for tok in line.split(',') {
                psi.push(tok.trim().parse::<f64>().map_err(|e| Error::Format(format!("row {i}: {e}")))?);
            }
            if psi.len() - before != header.columns {
                return Err(Error::Format(format!("row {i} has {} values, expected {}", psi.len() - before, header.columns)));
            }
        }
        if psi.len() != header.rows * header.columns {
            return Err(Error::Format("table body has the wrong number of rows".into()));
        }
        Ok(Self {
            field,
            pole: Pole::new(header.tau, crate::linalg::point(&header.xi)),
            cfg: header.config,
            layout: header.layout,
            zgrid: header.zgrid,
            psi,
            report: header.report,
        })
    }
}
