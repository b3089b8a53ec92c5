//! Output files of a run. Everything written here is a function of the
//! scenario and its seed: no timings, no hash maps, fixed float formatting.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::scenario::Kind;

#[derive(Debug, thiserror::Error)]
#[error("cannot write {path}: {source}")]
pub struct WriteError {
    pub path: PathBuf,
    pub source: std::io::Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Comparison {
    #[serde(rename = "<=")]
    AtMost,
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = ">")]
    Above,
}

/// One named verification with the measured value and its threshold.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub comparison: Comparison,
    pub threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Check {
    pub fn new(name: &str, value: f64, comparison: Comparison, threshold: f64) -> Self {
        let passed = match comparison {
            Comparison::AtMost => value <= threshold,
            Comparison::AtLeast => value >= threshold,
            Comparison::Above => value > threshold,
        };
        Self { name: name.into(), passed, value, comparison, threshold, detail: None }
    }

    /// A check that could not be evaluated.
    pub fn failed(name: &str, comparison: Comparison, threshold: f64, detail: String) -> Self {
        Self { name: name.into(), passed: false, value: f64::NAN, comparison, threshold, detail: Some(detail) }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }
}

/// Constants of a two-sided Gaussian comparison.
#[derive(Debug, Clone, Serialize)]
pub struct FitRecord {
    pub pole: Vec<f64>,
    pub scale: f64,
    pub exponent: f64,
    pub upper_argmax: (f64, Vec<f64>),
    pub lower_argmax: (f64, Vec<f64>),
}

/// Results of one Brownian path.
#[derive(Debug, Clone, Serialize)]
pub struct PathRecord {
    pub seed: u64,
    pub path: u64,
    /// Tied comparison per pole: `mu2^-1 Gamma^{1/mu1} <= kernel <= mu2 Gamma^{mu1}`.
    pub mu1: Vec<f64>,
    pub mu2: Vec<f64>,
    pub upper_argmax: Vec<(f64, Vec<f64>)>,
    pub lower_argmax: Vec<(f64, Vec<f64>)>,
    pub min_det: f64,
    pub det_deviation: f64,
    pub coercivity_margin: f64,
    pub lambda: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub closed_form_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual_slope: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Equal-width bins over the finite values; a single bin when they coincide.
    pub fn of(values: &[f64], bins: usize) -> Self {
        let v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return Self { edges: Vec::new(), counts: Vec::new() };
        }
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi <= lo {
            return Self { edges: vec![lo, hi], counts: vec![v.len()] };
        }
        let w = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| if i == bins { hi } else { lo + w * i as f64 }).collect();
        let mut counts = vec![0; bins];
        for x in v {
            counts[(((x - lo) / w) as usize).min(bins - 1)] += 1;
        }
        Self { edges, counts }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Histograms {
    pub mu1: Option<Histogram>,
    pub mu2: Option<Histogram>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualRecord {
    pub paths: usize,
    pub dts: Vec<f64>,
    pub rms_defects: Vec<f64>,
    pub slope: f64,
}

/// Fitted constants, each produced by one of the checks.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Constants {
    /// `C1^-1 Gamma^{C2} <= Gamma <= C1 Gamma^lambda`, per pole.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub sandwich: Vec<FitRecord>,
    /// `|Gamma - Z| <= C dt^(alpha/2) Gamma^lambda`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_fit: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_lambda: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub name: String,
    pub kind: Kind,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub constants: Constants,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub paths: Vec<PathRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub histograms: Option<Histograms>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual: Option<ResidualRecord>,
    /// Files written next to this summary, relative to the output directory.
    pub files: Vec<String>,
}

impl Summary {
    pub fn new(name: &str, kind: Kind, seed: u64) -> Self {
        Self {
            name: name.into(),
            kind,
            seed,
            checks: Vec::new(),
            constants: Constants::default(),
            paths: Vec::new(),
            histograms: None,
            residual: None,
            files: Vec::new(),
        }
    }

    pub fn first_failure(&self) -> Option<&Check> {
        self.checks.iter().find(|c| !c.passed)
    }

    pub fn text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario {} ({:?}, seed {})", self.name, self.kind, self.seed);
        for c in &self.checks {
            let op = match c.comparison {
                Comparison::AtMost => "<=",
                Comparison::AtLeast => ">=",
                Comparison::Above => ">",
            };
            let _ = write!(s, "{} {:<24} {:.6e} {op} {:.6e}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.threshold);
            if let Some(d) = &c.detail {
                let _ = write!(s, "  ({d})");
            }
            s.push('\n');
        }
        for f in &self.constants.sandwich {
            let _ = writeln!(s, "sandwich pole {:?}: C1 = {:.6e}, C2 = {:.6e}", f.pole, f.scale, f.exponent);
        }
        if let Some(c) = self.constants.c_fit {
            let _ = writeln!(s, "correction constant C = {c:.6e}");
        }
        if !self.paths.is_empty() {
            let mu1: Vec<f64> = self.paths.iter().flat_map(|p| p.mu1.iter().copied()).collect();
            let mu2: Vec<f64> = self.paths.iter().flat_map(|p| p.mu2.iter().copied()).collect();
            let _ = writeln!(s, "{} paths; mu1 in [{:.4}, {:.4}], mu2 in [{:.4}, {:.4}]", self.paths.len(), min(&mu1), max(&mu1), min(&mu2), max(&mu2));
        }
        if let Some(r) = &self.residual {
            let _ = writeln!(s, "residual rms defects {:?} on steps {:?}, slope {:.4}", r.rms_defects, r.dts, r.slope);
        }
        let _ = writeln!(s, "{} of {} checks passed", self.checks.iter().filter(|c| c.passed).count(), self.checks.len());
        s
    }
}

fn min(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Collects files under one output directory.
pub struct Writer {
    root: PathBuf,
    written: Vec<String>,
}

impl Writer {
    pub fn new(root: &Path) -> Result<Self, WriteError> {
        std::fs::create_dir_all(root).map_err(|source| WriteError { path: root.into(), source })?;
        Ok(Self { root: root.into(), written: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, rel: &str, contents: &[u8]) -> Result<(), WriteError> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|source| WriteError { path: dir.into(), source })?;
        }
        std::fs::write(&path, contents).map_err(|source| WriteError { path, source })?;
        self.written.push(rel.into());
        Ok(())
    }

    pub fn json(&mut self, rel: &str, value: &impl Serialize) -> Result<(), WriteError> {
        let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
        s.push('\n');
        self.write(rel, s.as_bytes())
    }

    /// Writes `summary.json` and `summary.txt`; the file list excludes both.
    pub fn finish(mut self, summary: &mut Summary) -> Result<(), WriteError> {
        summary.files = std::mem::take(&mut self.written);
        summary.files.sort();
        let text = summary.text();
        self.json("summary.json", summary)?;
        self.write("summary.txt", text.as_bytes())
    }
}

/// Kernel slice rows `t, x.., xi.., value`.
pub struct KernelCsv {
    dim: usize,
    body: String,
}

impl KernelCsv {
    pub fn new(dim: usize) -> Self {
        let mut body = String::from("t");
        if dim == 1 {
            body.push_str(",x,xi");
        } else {
            for i in 0..dim {
                let _ = write!(body, ",x_{i}");
            }
            for i in 0..dim {
                let _ = write!(body, ",xi_{i}");
            }
        }
        body.push_str(",value\n");
        Self { dim, body }
    }

    pub fn row(&mut self, t: f64, x: &[f64], xi: &[f64], value: f64) {
        let _ = write!(self.body, "{t}");
        for v in x.iter().chain(xi).take(2 * self.dim) {
            let _ = write!(self.body, ",{v}");
        }
        let _ = writeln!(self.body, ",{value:e}");
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.body.into_bytes()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_counts_every_value() {
        let h = Histogram::of(&[1.0, 1.5, 2.0, 2.0, 3.0, f64::NAN], 4);
        assert_eq!(h.counts.iter().sum::<usize>(), 5);
        assert_eq!(h.edges.len(), 5);
        assert_eq!(*h.counts.last().unwrap(), 1);
    }

    #[test]
    fn constant_values_share_one_bin() {
        let h = Histogram::of(&[2.0; 3], 10);
        assert_eq!(h.counts, vec![3]);
    }

    #[test]
    fn check_comparisons() {
        assert!(Check::new("a", 1.0, Comparison::AtMost, 1.0).passed);
        assert!(!Check::new("a", 1.0, Comparison::Above, 1.0).passed);
        assert!(!Check::new("a", f64::NAN, Comparison::AtLeast, 0.0).passed);
    }

    #[test]
    fn two_dimensional_csv_header() {
        let mut c = KernelCsv::new(2);
        c.row(0.5, &[1.0, 2.0], &[0.0, 0.0], 0.25);
        let s = String::from_utf8(c.into_bytes()).unwrap();
        assert_eq!(s, "t,x_0,x_1,xi_0,xi_1,value\n0.5,1,2,0,0,2.5e-1\n");
    }
}
