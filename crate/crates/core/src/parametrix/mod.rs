//! Parametrix construction of the fundamental solution.
//!
//! For a pole `(tau, xi)` the fundamental solution is
//! `Gamma = Z + int_tau^t int Z(t, x; s, y) Phi(s, y) dy ds`, where `Z` is the
//! frozen-coefficient parametrix and the density `Phi` solves the Volterra
//! equation `Phi = HZ + int_tau^t int HZ(t, x; s, y) Phi(s, y) dy ds` with
//! `HZ = (L - d_t) Z` applied in the target variables.

mod bank;
mod io;
mod layout;
mod potential;
mod series;
mod table;

pub use bank::PoleBank;
pub use layout::{Panel, TimeLayout, Window, WindowRule, ZGrid};
pub use potential::{volume_potential, VolumePotential};
pub use series::{
    fit_correction_constant, fit_density_constant, fit_envelope, fit_kernel_constant, series_term_bound, series_terms,
    SeriesTerm,
};
pub use table::{GammaJet, ParametrixTable, SliceKind, SolveReport, TimeSlice};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coefficients::{CoefficientField, Coefficients};
use crate::error::{Error, Result};
use crate::gauss_kernel::Gaussian;
use crate::linalg::{contract, Point};
use crate::quadrature::singular_rule;

/// Pole `(tau, xi)` of a fundamental solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pole {
    pub tau: f64,
    pub xi: Point,
}

impl Pole {
    pub fn new(tau: f64, xi: Point) -> Self {
        Self { tau, xi }
    }
}

/// Resolution of the density table and of the space-time quadratures.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ParametrixConfig {
    /// Tables cover `(tau, horizon]`.
    pub horizon: f64,
    /// Gauss-Legendre nodes per time panel of the stored density.
    pub time_nodes: usize,
    /// Half-width of the scaled space grid; `None` uses `max(8, 6 sqrt(lambda))`.
    pub z_max: Option<f64>,
    pub z_step: f64,
    /// Number of points of the local Lagrange interpolation in space.
    pub interp_order: usize,
    /// Gauss nodes per graded half of the time quadrature.
    pub quad_nodes: usize,
    /// Half-width of the spatial integration window in kernel standard deviations.
    pub window_sigmas: f64,
    pub points_per_sigma: f64,
    /// Sup-norm tolerance on successive fixed-point iterates.
    pub tol: f64,
    pub max_iter: usize,
    /// Upper bound on stored operator entries per pole.
    pub max_entries: usize,
}

impl Default for ParametrixConfig {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            time_nodes: 10,
            z_max: None,
            z_step: 0.25,
            interp_order: 8,
            quad_nodes: 10,
            window_sigmas: 7.0,
            points_per_sigma: 1.5,
            tol: 1e-6,
            max_iter: 60,
            max_entries: 60_000_000,
        }
    }
}

impl ParametrixConfig {
    pub fn with_horizon(horizon: f64) -> Self {
        Self { horizon, ..Self::default() }
    }

    /// Coarser resolution for two- and three-dimensional problems, where the
    /// operator size grows with the square or cube of the space resolution.
    pub fn coarse(horizon: f64) -> Self {
        Self {
            horizon,
            time_nodes: 5,
            z_step: 0.6,
            interp_order: 4,
            quad_nodes: 5,
            window_sigmas: 6.0,
            points_per_sigma: 1.0,
            ..Self::default()
        }
    }

    pub fn z_max_for(&self, lambda: f64) -> f64 {
        self.z_max.unwrap_or_else(|| (6.0 * lambda.sqrt()).max(8.0))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon.is_finite()) || self.time_nodes < 2 || self.quad_nodes < 2 {
            return Err(Error::Configuration("time resolution too small".into()));
        }
        if !(self.z_step > 0.0) || self.interp_order < 2 || self.interp_order > 12 {
            return Err(Error::Configuration("invalid space resolution".into()));
        }
        if !(self.tol > 0.0) || self.window_sigmas <= 0.0 || self.points_per_sigma <= 0.0 {
            return Err(Error::Configuration("tolerances and window sizes must be positive".into()));
        }
        Ok(())
    }
}

/// `(L - d_t) Z(., .; s, y)` evaluated at `(t, x)`, given the coefficients at `(t, x)`.
pub fn hz_kernel(field: &dyn CoefficientField, t: f64, x: &Point, at_x: &Coefficients, s: f64, y: &Point) -> Result<f64> {
    let d = field.dim();
    let cov = field.integrated_diffusion(y, s, t);
    let g = Gaussian::new(&cov, d)?;
    let jet = g.jet(&(x - y));
    let da = at_x.diffusion - field.diffusion(t, y);
    Ok(0.5 * contract(&da, &jet.hessian, d)
        + at_x.drift.dot(&jet.gradient)
        + at_x.potential * jet.value)
}

/// `H Z (t, x; tau, xi)`.
pub fn apply_h_to_z(field: &dyn CoefficientField, t: f64, x: &Point, tau: f64, xi: &Point) -> Result<f64> {
    if !(t > tau) {
        return Err(Error::Domain(format!("HZ needs t > tau, got t={t}, tau={tau}")));
    }
    hz_kernel(field, t, x, &field.coefficients(t, x), tau, xi)
}

/// Discretized Volterra equation for one pole.
pub struct VolterraSystem {
    field: Arc<dyn CoefficientField>,
    pole: Pole,
    cfg: ParametrixConfig,
    layout: TimeLayout,
    zgrid: ZGrid,
    /// `HZ` at the nodes, time-major.
    hz: Vec<f64>,
    /// Per target time: slice specifications `(first node, time weights)` per quadrature node.
    slices: Vec<Vec<(usize, Vec<f64>, f64)>>,
    row_ptr: Vec<usize>,
    entry_q: Vec<u16>,
    entry_z: Vec<u32>,
    entry_c: Vec<f64>,
}

impl VolterraSystem {
    /// Samples `HZ` on the table nodes and, unless it vanishes identically,
    /// stores the discretized integral operator.
    pub fn assemble(field: Arc<dyn CoefficientField>, pole: Pole, cfg: &ParametrixConfig) -> Result<Self> {
        cfg.validate()?;
        let d = field.dim();
        if !(cfg.horizon > pole.tau) {
            return Err(Error::Domain(format!(
                "horizon {} must exceed the pole time {}",
                cfg.horizon, pole.tau
            )));
        }
        let lambda = field.lambda();
        let alpha = field.alpha();
        if !(lambda > 1.0) || !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Domain(format!("need lambda > 1 and alpha in (0, 1], got {lambda}, {alpha}")));
        }
        let breakpoints = field.breakpoints();
        let layout = TimeLayout::new(pole.tau, cfg.horizon, &breakpoints, cfg.time_nodes);
        let zgrid = ZGrid::new(d, cfg.z_max_for(lambda), cfg.z_step, cfg.interp_order);
        let nz = zgrid.len();
        let nt = layout.len();

        let mut hz = vec![0.0; nt * nz];
        for j in 0..nt {
            let t = layout.times[j];
            let scale = (t - pole.tau).sqrt();
            for i in 0..nz {
                let x = pole.xi + zgrid.node(i) * scale;
                hz[j * nz + i] = apply_h_to_z(field.as_ref(), t, &x, pole.tau, &pole.xi)?;
            }
        }
        if let Some(bad) = hz.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("HZ is not finite at node {bad}")));
        }

        let mut sys = Self {
            field,
            pole,
            cfg: cfg.clone(),
            layout,
            zgrid,
            hz,
            slices: Vec::new(),
            row_ptr: vec![0],
            entry_q: Vec::new(),
            entry_z: Vec::new(),
            entry_c: Vec::new(),
        };
        if !sys.is_trivial() {
            sys.assemble_operator()?;
        }
        Ok(sys)
    }

    /// True when `HZ` vanishes on every node, so that `Phi = 0`.
    pub fn is_trivial(&self) -> bool {
        self.hz.iter().all(|v| *v == 0.0)
    }

    fn window_rule(&self) -> WindowRule {
        WindowRule {
            dim: self.field.dim(),
            lambda: self.field.lambda(),
            sigmas: self.cfg.window_sigmas,
            points_per_sigma: self.cfg.points_per_sigma,
            z_max: self.zgrid.z_max,
        }
    }

    fn assemble_operator(&mut self) -> Result<()> {
        let field = self.field.clone();
        let d = field.dim();
        let tau = self.pole.tau;
        let xi = self.pole.xi;
        let gamma = 1.0 - 0.5 * field.alpha();
        let breakpoints = field.breakpoints();
        let nz = self.zgrid.len();
        let wr = self.window_rule();
        let power = 0.5 * (d as f64 + 1.0);
        let mut scratch = vec![0.0; nz];
        let mut touched: Vec<usize> = Vec::new();
        let mut tcoef = Vec::new();

        for j in 0..self.layout.len() {
            let t = self.layout.times[j];
            let rule = singular_rule(tau, t, gamma, gamma, &breakpoints, self.cfg.quad_nodes);
            let mut specs = Vec::with_capacity(rule.len());
            for &s in &rule.nodes {
                let (_, first) = self.layout.coefficients(s, &mut tcoef);
                specs.push((first, tcoef.clone(), (s - tau).powf(-power)));
            }
            let scale = (t - tau).sqrt();
            for i in 0..nz {
                let x = xi + self.zgrid.node(i) * scale;
                let at_x = field.coefficients(t, &x);
                for (q, (&s, &w)) in rule.nodes.iter().zip(&rule.weights).enumerate() {
                    let Some(win) = wr.window(&xi, tau, &x, s, t) else { continue };
                    let sq = (s - tau).sqrt();
                    let factor = w * specs[q].2;
                    let mut err = None;
                    win.for_each(|y, h| {
                        if err.is_some() {
                            return;
                        }
                        let k = match hz_kernel(field.as_ref(), t, &x, &at_x, s, y) {
                            Ok(k) => k,
                            Err(e) => {
                                err = Some(e);
                                return;
                            }
                        };
                        let c = factor * h * k;
                        let z = (y - xi) / sq;
                        self.zgrid.for_each_weight(&z, |idx, l| {
                            if scratch[idx] == 0.0 {
                                touched.push(idx);
                            }
                            scratch[idx] += c * l;
                        });
                    });
                    if let Some(e) = err {
                        return Err(e);
                    }
                    touched.sort_unstable();
                    for &idx in &touched {
                        let c = scratch[idx];
                        if c != 0.0 {
                            self.entry_q.push(q as u16);
                            self.entry_z.push(idx as u32);
                            self.entry_c.push(c);
                        }
                        scratch[idx] = 0.0;
                    }
                    touched.clear();
                }
                self.row_ptr.push(self.entry_c.len());
                if self.entry_c.len() > self.cfg.max_entries {
                    return Err(Error::Configuration(format!(
                        "operator storage exceeds {} entries; coarsen the grid",
                        self.cfg.max_entries
                    )));
                }
            }
            self.slices.push(specs);
        }
        Ok(())
    }

    pub fn pole(&self) -> Pole {
        self.pole
    }

    pub fn node_count(&self) -> usize {
        self.hz.len()
    }

    /// Space-time location of node `r`.
    pub fn node(&self, r: usize) -> (f64, Point) {
        let nz = self.zgrid.len();
        let (j, i) = (r / nz, r % nz);
        let t = self.layout.times[j];
        (t, self.pole.xi + self.zgrid.node(i) * (t - self.pole.tau).sqrt())
    }

    /// Scaled-space coordinate of node `r`.
    pub fn scaled_node(&self, r: usize) -> Point {
        self.zgrid.node(r % self.zgrid.len())
    }

    pub fn hz(&self) -> &[f64] {
        &self.hz
    }

    /// `int int HZ(t, x; s, y) f(s, y) dy ds` at every node, for `f` given by its node values.
    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        let nz = self.zgrid.len();
        let nt = self.layout.len();
        assert_eq!(values.len(), nt * nz);
        if self.is_trivial() {
            return vec![0.0; nt * nz];
        }
        let tau = self.pole.tau;
        let power = 0.5 * (self.field.dim() as f64 + 1.0);
        // Time-interpolable scaled values.
        let psi: Vec<f64> = values
            .iter()
            .enumerate()
            .map(|(r, v)| v * (self.layout.times[r / nz] - tau).powf(power))
            .collect();
        let mut out = vec![0.0; nt * nz];
        let mut slice = Vec::new();
        for j in 0..nt {
            let specs = &self.slices[j];
            slice.clear();
            slice.resize(specs.len() * nz, 0.0);
            for (q, (first, coef, _)) in specs.iter().enumerate() {
                let row = &mut slice[q * nz..(q + 1) * nz];
                for (k, c) in coef.iter().enumerate() {
                    let src = &psi[(first + k) * nz..(first + k + 1) * nz];
                    for (o, v) in row.iter_mut().zip(src) {
                        *o += c * v;
                    }
                }
            }
            for i in 0..nz {
                let r = j * nz + i;
                let mut acc = 0.0;
                for e in self.row_ptr[r]..self.row_ptr[r + 1] {
                    acc += self.entry_c[e] * slice[self.entry_q[e] as usize * nz + self.entry_z[e] as usize];
                }
                out[r] = acc;
            }
        }
        out
    }

    /// Fixed-point iteration `Phi <- HZ + K Phi`.
    pub fn solve(self) -> Result<ParametrixTable> {
        let n = self.hz.len();
        let mut phi = self.hz.clone();
        let mut report = SolveReport {
            iterations: 0,
            defect: 0.0,
            hz_sup: self.hz.iter().fold(0.0f64, |a, v| a.max(v.abs())),
            trivial: self.is_trivial(),
            operator_entries: self.entry_c.len(),
        };
        if !report.trivial {
            let mut converged = false;
            for it in 1..=self.cfg.max_iter {
                let k = self.apply(&phi);
                let mut defect = 0.0f64;
                for r in 0..n {
                    let next = self.hz[r] + k[r];
                    defect = defect.max((next - phi[r]).abs());
                    phi[r] = next;
                }
                report.iterations = it;
                report.defect = defect;
                if !defect.is_finite() {
                    break;
                }
                if defect <= self.cfg.tol {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::Convergence {
                    what: "Volterra fixed point",
                    iterations: report.iterations,
                    defect: report.defect,
                });
            }
        }
        ParametrixTable::from_density(self.field, self.pole, &self.cfg, self.layout, self.zgrid, &phi, report)
    }
}

/// Builds the density table for one pole.
pub fn phi_solve(field: Arc<dyn CoefficientField>, pole: Pole, cfg: &ParametrixConfig) -> Result<ParametrixTable> {
    VolterraSystem::assemble(field, pole, cfg)?.solve()
}

/// `Gamma(t, x; tau, xi)` from a solved table.
pub fn gamma_assemble(table: &ParametrixTable, t: f64, x: &Point) -> Result<f64> {
    table.gamma(t, x)
}

/// Value, gradient, Hessian and time derivative of `Gamma` at `(t, x)`.
pub fn gamma_derivatives(table: &ParametrixTable, t: f64, x: &Point) -> Result<GammaJet> {
    table.gamma_jet(t, x)
}
