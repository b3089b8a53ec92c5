use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::layout::{TimeLayout, WindowRule, ZGrid};
use super::{ParametrixConfig, Pole};
use crate::coefficients::CoefficientField;
use crate::error::{Error, Result};
use crate::gauss_kernel::Gaussian;
use crate::linalg::{contract, Point, SymMatrix};
use crate::quadrature::singular_rule;

/// Outcome of the fixed-point iteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// Sup-norm of the last successive difference.
    pub defect: f64,
    pub hz_sup: f64,
    /// `HZ` vanished identically and the density is zero.
    pub trivial: bool,
    pub operator_entries: usize,
}

/// Density `Phi` of one pole on its space-time table, together with the field
/// it was built from.
#[derive(Clone)]
pub struct ParametrixTable {
    pub(crate) field: Arc<dyn CoefficientField>,
    pub(crate) pole: Pole,
    pub(crate) cfg: ParametrixConfig,
    pub(crate) layout: TimeLayout,
    pub(crate) zgrid: ZGrid,
    /// `(s - tau)^((d+1)/2) Phi`, time-major.
    pub(crate) psi: Vec<f64>,
    pub(crate) report: SolveReport,
}

impl std::fmt::Debug for ParametrixTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParametrixTable")
            .field("pole", &self.pole)
            .field("times", &self.layout.len())
            .field("space_nodes", &self.zgrid.len())
            .field("report", &self.report)
            .finish()
    }
}

/// Value and derivatives of `Gamma` at one point.
#[derive(Debug, Clone, Copy)]
pub struct GammaJet {
    pub value: f64,
    pub gradient: Point,
    pub hessian: SymMatrix,
    /// `d_t Gamma`, computed by differentiating the representation in `t`.
    pub time_derivative: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceKind {
    /// Values only; the time integrand is bounded at `s = t`.
    Value,
    /// Values and derivatives; the quadrature is graded at `s = t` as well.
    Jet,
}

impl ParametrixTable {
    pub(crate) fn from_density(
        field: Arc<dyn CoefficientField>,
        pole: Pole,
        cfg: &ParametrixConfig,
        layout: TimeLayout,
        zgrid: ZGrid,
        phi: &[f64],
        report: SolveReport,
    ) -> Result<Self> {
        let nz = zgrid.len();
        let power = 0.5 * (field.dim() as f64 + 1.0);
        let psi: Vec<f64> = phi
            .iter()
            .enumerate()
            .map(|(r, v)| v * (layout.times[r / nz] - pole.tau).powf(power))
            .collect();
        if psi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("density table contains non-finite values".into()));
        }
        Ok(Self { field, pole, cfg: cfg.clone(), layout, zgrid, psi, report })
    }

    pub fn pole(&self) -> Pole {
        self.pole
    }

    pub fn report(&self) -> &SolveReport {
        &self.report
    }

    pub fn config(&self) -> &ParametrixConfig {
        &self.cfg
    }

    pub fn field(&self) -> &Arc<dyn CoefficientField> {
        &self.field
    }

    pub fn horizon(&self) -> f64 {
        self.layout.horizon()
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    pub fn is_trivial(&self) -> bool {
        self.report.trivial
    }

    /// Times of the stored density.
    pub fn times(&self) -> &[f64] {
        &self.layout.times
    }

    /// Stored density nodes as `(s, y, z, Phi(s, y))` with `z` the scaled offset.
    pub fn density_nodes(&self) -> impl Iterator<Item = (f64, Point, Point, f64)> + '_ {
        let nz = self.zgrid.len();
        let power = 0.5 * (self.dim() as f64 + 1.0);
        self.psi.iter().enumerate().map(move |(r, v)| {
            let s = self.layout.times[r / nz];
            let z = self.zgrid.node(r % nz);
            let dt = s - self.pole.tau;
            (s, self.pole.xi + z * dt.sqrt(), z, v / dt.powf(power))
        })
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(t > self.pole.tau) {
            return Err(Error::Domain(format!("t={t} must exceed the pole time {}", self.pole.tau)));
        }
        if t > self.horizon() * (1.0 + 1e-12) + 1e-12 {
            return Err(Error::Domain(format!("t={t} exceeds the table horizon {}", self.horizon())));
        }
        Ok(())
    }

    fn psi_slice(&self, s: f64, out: &mut [f64], tcoef: &mut Vec<f64>) {
        let nz = self.zgrid.len();
        let (_, first) = self.layout.coefficients(s, tcoef);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (k, c) in tcoef.iter().enumerate() {
            let src = &self.psi[(first + k) * nz..(first + k + 1) * nz];
            for (o, v) in out.iter_mut().zip(src) {
                *o += c * v;
            }
        }
    }

    /// Interpolated density `Phi(s, y)`; zero outside the stored space window.
    pub fn phi(&self, s: f64, y: &Point) -> Result<f64> {
        self.check_time(s)?;
        if self.is_trivial() {
            return Ok(0.0);
        }
        let mut slice = vec![0.0; self.zgrid.len()];
        let mut tcoef = Vec::new();
        self.psi_slice(s, &mut slice, &mut tcoef);
        let dt = s - self.pole.tau;
        let z = (y - self.pole.xi) / dt.sqrt();
        let mut acc = 0.0;
        self.zgrid.for_each_weight(&z, |idx, l| acc += l * slice[idx]);
        Ok(acc / dt.powf(0.5 * (self.dim() as f64 + 1.0)))
    }

    /// Quadrature data for evaluations at time `t`.
    pub fn slice(&self, t: f64, kind: SliceKind) -> Result<TimeSlice<'_>> {
        self.check_time(t)?;
        let t = t.min(self.horizon());
        let nz = self.zgrid.len();
        let mut slice = TimeSlice {
            table: self,
            t,
            kind,
            nodes: Vec::new(),
            weights: Vec::new(),
            scales: Vec::new(),
            psi: Vec::new(),
            phi_at_t: None,
        };
        if self.is_trivial() {
            return Ok(slice);
        }
        let tau = self.pole.tau;
        let left = 1.0 - 0.5 * self.field.alpha();
        let right = match kind {
            SliceKind::Value => 0.0,
            SliceKind::Jet => left,
        };
        let rule = singular_rule(tau, t, left, right, &self.field.breakpoints(), self.cfg.quad_nodes);
        let power = 0.5 * (self.dim() as f64 + 1.0);
        slice.psi = vec![0.0; rule.len() * nz];
        let mut tcoef = Vec::new();
        for (q, &s) in rule.nodes.iter().enumerate() {
            self.psi_slice(s, &mut slice.psi[q * nz..(q + 1) * nz], &mut tcoef);
            slice.scales.push((s - tau).powf(-power));
        }
        if kind == SliceKind::Jet {
            let mut at_t = vec![0.0; nz];
            self.psi_slice(t, &mut at_t, &mut tcoef);
            slice.phi_at_t = Some(at_t);
        }
        slice.nodes = rule.nodes;
        slice.weights = rule.weights;
        Ok(slice)
    }

    pub fn gamma(&self, t: f64, x: &Point) -> Result<f64> {
        self.slice(t, SliceKind::Value)?.value(x)
    }

    pub fn gamma_jet(&self, t: f64, x: &Point) -> Result<GammaJet> {
        self.slice(t, SliceKind::Jet)?.jet(x)
    }

    /// `Gamma - Z` at `(t, x)`.
    pub fn correction(&self, t: f64, x: &Point) -> Result<f64> {
        self.slice(t, SliceKind::Value)?.correction(x)
    }

    pub(crate) fn window_rule(&self) -> WindowRule {
        WindowRule {
            dim: self.dim(),
            lambda: self.field.lambda(),
            sigmas: self.cfg.window_sigmas,
            points_per_sigma: self.cfg.points_per_sigma,
            z_max: self.zgrid.z_max,
        }
    }
}

/// Density slices at the time-quadrature nodes for one evaluation time.
pub struct TimeSlice<'a> {
    table: &'a ParametrixTable,
    t: f64,
    kind: SliceKind,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    scales: Vec<f64>,
    psi: Vec<f64>,
    phi_at_t: Option<Vec<f64>>,
}

impl TimeSlice<'_> {
    pub fn time(&self) -> f64 {
        self.t
    }

    fn parametrix(&self) -> Result<Gaussian> {
        let tb = self.table;
        let cov = tb.field.integrated_diffusion(&tb.pole.xi, tb.pole.tau, self.t);
        Gaussian::new(&cov, tb.dim())
    }

    fn density(&self, q: usize, s: f64, y: &Point) -> f64 {
        let tb = self.table;
        let nz = tb.zgrid.len();
        let z = (y - tb.pole.xi) / (s - tb.pole.tau).sqrt();
        let row = &self.psi[q * nz..(q + 1) * nz];
        let mut acc = 0.0;
        tb.zgrid.for_each_weight(&z, |idx, l| acc += l * row[idx]);
        acc * self.scales[q]
    }

    /// `int int Z(t, x; s, y) Phi(s, y) dy ds`.
    pub fn correction(&self, x: &Point) -> Result<f64> {
        let tb = self.table;
        let wr = tb.window_rule();
        let d = tb.dim();
        let mut total = 0.0;
        for (q, (&s, &w)) in self.nodes.iter().zip(&self.weights).enumerate() {
            let Some(win) = wr.window(&tb.pole.xi, tb.pole.tau, x, s, self.t) else { continue };
            let mut acc = 0.0;
            let mut err = None;
            win.for_each(|y, h| {
                let phi = self.density(q, s, y);
                if phi == 0.0 || err.is_some() {
                    return;
                }
                let cov = tb.field.integrated_diffusion(y, s, self.t);
                match Gaussian::new(&cov, d) {
                    Ok(g) => acc += h * g.value(&(x - y)) * phi,
                    Err(e) => err = Some(e),
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
            total += w * acc;
        }
        Ok(total)
    }

    pub fn value(&self, x: &Point) -> Result<f64> {
        let z = self.parametrix()?.value(&(x - self.table.pole.xi));
        Ok(z + self.correction(x)?)
    }

    pub fn jet(&self, x: &Point) -> Result<GammaJet> {
        if self.kind != SliceKind::Jet && !self.table.is_trivial() {
            return Err(Error::Usage("derivatives need a slice built with SliceKind::Jet".into()));
        }
        let tb = self.table;
        let d = tb.dim();
        let xi = tb.pole.xi;
        let zj = self.parametrix()?.jet(&(x - xi));
        let a_xi = tb.field.diffusion(self.t, &xi);
        let mut out = GammaJet {
            value: zj.value,
            gradient: zj.gradient,
            hessian: zj.hessian,
            time_derivative: 0.5 * contract(&a_xi, &zj.hessian, d),
        };
        if tb.is_trivial() {
            return Ok(out);
        }
        let wr = tb.window_rule();
        for (q, (&s, &w)) in self.nodes.iter().zip(&self.weights).enumerate() {
            let Some(win) = wr.window(&xi, tb.pole.tau, x, s, self.t) else { continue };
            let mut err = None;
            let mut acc = GammaJet {
                value: 0.0,
                gradient: Point::zeros(),
                hessian: SymMatrix::zeros(),
                time_derivative: 0.0,
            };
            win.for_each(|y, h| {
                let phi = self.density(q, s, y);
                if phi == 0.0 || err.is_some() {
                    return;
                }
                let cov = tb.field.integrated_diffusion(y, s, self.t);
                match Gaussian::new(&cov, d) {
                    Ok(g) => {
                        let j = g.jet(&(x - y));
                        let c = h * phi;
                        acc.value += c * j.value;
                        acc.gradient += j.gradient * c;
                        acc.hessian += j.hessian * c;
                        let a_y = tb.field.diffusion(self.t, y);
                        acc.time_derivative += c * 0.5 * contract(&a_y, &j.hessian, d);
                    }
                    Err(e) => err = Some(e),
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
            out.value += w * acc.value;
            out.gradient += acc.gradient * w;
            out.hessian += acc.hessian * w;
            out.time_derivative += w * acc.time_derivative;
        }
        let nz = tb.zgrid.len();
        let at_t = self.phi_at_t.as_ref().expect("jet slices carry the density at t");
        let dt = self.t - tb.pole.tau;
        let z = (x - xi) / dt.sqrt();
        let mut phi = 0.0;
        tb.zgrid.for_each_weight(&z, |idx, l| phi += l * at_t[idx]);
        debug_assert_eq!(at_t.len(), nz);
        out.time_derivative += phi / dt.powf(0.5 * (d as f64 + 1.0));
        Ok(out)
    }
}
