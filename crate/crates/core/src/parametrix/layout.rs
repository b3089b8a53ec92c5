//! Discretization of the Volterra density around a pole.
//!
//! The density is stored as `psi(s, z) = (s - tau)^((d+1)/2) Phi(s, xi + sqrt(s - tau) z)`
//! on a uniform grid in the scaled variable `z` and at Gauss-Legendre nodes in
//! time. The first time panel uses `v = sqrt(s - tau)` as interpolation
//! variable, later panels (after coefficient breakpoints) use `s` itself.

use serde::{Deserialize, Serialize};

use crate::linalg::Point;
use crate::quadrature::{barycentric_weights, gauss_legendre, lagrange_coefficients, UniformStencil};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Panel {
    pub lo: f64,
    pub hi: f64,
    /// Interpolate in `sqrt(s - tau)` instead of `s`.
    pub sqrt_variable: bool,
    /// Index of the first node of this panel in the global node list.
    pub first: usize,
    /// Interpolation variable at the nodes.
    pub nodes: Vec<f64>,
    #[serde(skip)]
    pub bary: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimeLayout {
    pub tau: f64,
    pub panels: Vec<Panel>,
    pub times: Vec<f64>,
}

impl TimeLayout {
    pub fn new(tau: f64, horizon: f64, breakpoints: &[f64], nodes_per_panel: usize) -> Self {
        let mut cuts = vec![tau];
        for &b in breakpoints {
            if b > tau + 1e-12 && b < horizon - 1e-12 {
                cuts.push(b);
            }
        }
        cuts.push(horizon);
        cuts.sort_by(|a, b| a.total_cmp(b));
        let (x, _) = gauss_legendre(nodes_per_panel);
        let mut panels = Vec::new();
        let mut times = Vec::new();
        for p in 0..cuts.len() - 1 {
            let (lo, hi) = (cuts[p], cuts[p + 1]);
            let sqrt_variable = p == 0;
            let (a, b) = if sqrt_variable { (0.0, (hi - tau).sqrt()) } else { (lo, hi) };
            let nodes: Vec<f64> = x.iter().map(|xi| a + 0.5 * (b - a) * (xi + 1.0)).collect();
            let first = times.len();
            for u in &nodes {
                times.push(if sqrt_variable { tau + u * u } else { *u });
            }
            let bary = barycentric_weights(&nodes);
            panels.push(Panel { lo, hi, sqrt_variable, first, nodes, bary });
        }
        Self { tau, panels, times }
    }

    pub fn restore_weights(&mut self) {
        for p in &mut self.panels {
            p.bary = barycentric_weights(&p.nodes);
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn horizon(&self) -> f64 {
        self.panels.last().map_or(self.tau, |p| p.hi)
    }

    /// Panel holding `s`, its first node index and the interpolation weights.
    pub fn coefficients(&self, s: f64, out: &mut Vec<f64>) -> (usize, usize) {
        let p = self
            .panels
            .iter()
            .position(|p| s < p.hi)
            .unwrap_or(self.panels.len() - 1);
        let panel = &self.panels[p];
        let u = if panel.sqrt_variable { (s - self.tau).max(0.0).sqrt() } else { s };
        out.resize(panel.nodes.len(), 0.0);
        lagrange_coefficients(&panel.nodes, &panel.bary, u, out);
        (p, panel.first)
    }
}

/// Uniform grid `[-z_max, z_max]^d` in the scaled space variable.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ZGrid {
    pub dim: usize,
    pub z_max: f64,
    pub n: usize,
    pub order: usize,
}

impl ZGrid {
    pub fn new(dim: usize, z_max: f64, step: f64, order: usize) -> Self {
        let n = (2.0 * z_max / step).round() as usize + 1;
        Self { dim, z_max, n: n.max(order), order }
    }

    pub fn step(&self) -> f64 {
        2.0 * self.z_max / (self.n - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn node(&self, idx: usize) -> Point {
        let mut z = Point::zeros();
        let mut rem = idx;
        let h = self.step();
        for i in (0..self.dim).rev() {
            z[i] = -self.z_max + h * (rem % self.n) as f64;
            rem /= self.n;
        }
        z
    }

    fn stencil(&self) -> UniformStencil {
        UniformStencil::new(-self.z_max, self.step(), self.n, self.order)
    }

    /// Tensor interpolation stencil at `z`: calls `f(flat_index, weight)` for
    /// each contributing node. Returns false when `z` is outside the grid.
    pub fn for_each_weight(&self, z: &Point, mut f: impl FnMut(usize, f64)) -> bool {
        let st = self.stencil();
        let p = self.order;
        let mut w = [[0.0; 12]; 3];
        let mut start = [0usize; 3];
        for i in 0..self.dim {
            match st.locate(z[i], &mut w[i][..p]) {
                Some(s) => start[i] = s,
                None => return false,
            }
        }
        match self.dim {
            1 => {
                for a in 0..p {
                    f(start[0] + a, w[0][a]);
                }
            }
            2 => {
                for a in 0..p {
                    for b in 0..p {
                        f((start[0] + a) * self.n + start[1] + b, w[0][a] * w[1][b]);
                    }
                }
            }
            _ => {
                for a in 0..p {
                    for b in 0..p {
                        for c in 0..p {
                            let idx = ((start[0] + a) * self.n + start[1] + b) * self.n + start[2] + c;
                            f(idx, w[0][a] * w[1][b] * w[2][c]);
                        }
                    }
                }
            }
        }
        true
    }
}

/// Tensor trapezoid window of integration nodes.
#[derive(Debug, Clone, Copy)]
pub struct Window {
    pub dim: usize,
    pub lo: Point,
    pub step: Point,
    pub n: [usize; 3],
}

impl Window {
    pub fn len(&self) -> usize {
        (0..self.dim).map(|i| self.n[i]).product()
    }

    /// Calls `f(node, weight)` for every node.
    pub fn for_each(&self, mut f: impl FnMut(&Point, f64)) {
        let d = self.dim;
        let weight = |i: usize, k: usize| {
            if k == 0 || k + 1 == self.n[i] {
                0.5 * self.step[i]
            } else {
                self.step[i]
            }
        };
        let mut y = Point::zeros();
        match d {
            1 => {
                for a in 0..self.n[0] {
                    y[0] = self.lo[0] + self.step[0] * a as f64;
                    f(&y, weight(0, a));
                }
            }
            2 => {
                for a in 0..self.n[0] {
                    y[0] = self.lo[0] + self.step[0] * a as f64;
                    let wa = weight(0, a);
                    for b in 0..self.n[1] {
                        y[1] = self.lo[1] + self.step[1] * b as f64;
                        f(&y, wa * weight(1, b));
                    }
                }
            }
            _ => {
                for a in 0..self.n[0] {
                    y[0] = self.lo[0] + self.step[0] * a as f64;
                    let wa = weight(0, a);
                    for b in 0..self.n[1] {
                        y[1] = self.lo[1] + self.step[1] * b as f64;
                        let wb = wa * weight(1, b);
                        for c in 0..self.n[2] {
                            y[2] = self.lo[2] + self.step[2] * c as f64;
                            f(&y, wb * weight(2, c));
                        }
                    }
                }
            }
        }
    }
}

/// Integration window for `int K(t, x; s, y) Phi(s, y) dy` where `K` is a
/// Gaussian-type kernel centered at `x` and `Phi(s, .)` lives around `xi`.
///
/// The product of the two Gaussian envelopes is concentrated between `xi` and
/// `x`, at a position and scale determined by the variance ratio; the window
/// covers the extreme positions allowed by the ellipticity constant.
#[derive(Debug, Clone, Copy)]
pub struct WindowRule {
    pub dim: usize,
    pub lambda: f64,
    pub sigmas: f64,
    pub points_per_sigma: f64,
    pub z_max: f64,
}

impl WindowRule {
    pub fn window(&self, xi: &Point, tau: f64, x: &Point, s: f64, t: f64) -> Option<Window> {
        let l = self.lambda;
        let v1 = s - tau;
        let v2 = t - s;
        if !(v1 > 0.0 && v2 > 0.0) {
            return None;
        }
        let sd_lo = (v1 * v2 / (l * (v1 + v2))).sqrt();
        let sd_hi = l * sd_lo;
        let th_lo = (v1 / l) / (v1 / l + l * v2);
        let th_hi = (l * v1) / (l * v1 + v2 / l);
        let support = self.z_max * v1.sqrt();
        // Drift moves the density center by at most lambda (s - tau); the product
        // inherits that shift with weight 1 - theta.
        let shift = (1.0 - th_lo) * l * v1;
        let h_target = sd_lo / self.points_per_sigma;
        let mut w = Window { dim: self.dim, lo: Point::zeros(), step: Point::zeros(), n: [1; 3] };
        for i in 0..self.dim {
            let a = xi[i] + th_lo * (x[i] - xi[i]);
            let b = xi[i] + th_hi * (x[i] - xi[i]);
            let mut lo = a.min(b) - self.sigmas * sd_hi - shift;
            let mut hi = a.max(b) + self.sigmas * sd_hi + shift;
            lo = lo.max(xi[i] - support);
            hi = hi.min(xi[i] + support);
            if !(hi > lo) {
                return None;
            }
            let n = ((hi - lo) / h_target).ceil() as usize + 1;
            let n = n.max(3);
            w.lo[i] = lo;
            w.step[i] = (hi - lo) / (n - 1) as f64;
            w.n[i] = n;
        }
        Some(w)
    }
}
