//! Crank-Nicolson reference solver for one space dimension.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::CauchyProblem;
use crate::error::{Error, Result};
use crate::linalg::point;

/// Space interval, node count and largest time step of the reference solver.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct OracleGrid {
    pub x_lo: f64,
    pub x_hi: f64,
    pub nodes: usize,
    pub max_dt: f64,
}

impl OracleGrid {
    /// The same interval with the space step and time step halved.
    pub fn refined(&self) -> Self {
        Self { nodes: 2 * self.nodes - 1, max_dt: 0.5 * self.max_dt, ..*self }
    }

    pub fn step(&self) -> f64 {
        (self.x_hi - self.x_lo) / (self.nodes - 1) as f64
    }
}

/// Reference solution on `times x nodes`.
#[derive(Debug, Clone, Serialize)]
pub struct OracleSolution {
    pub xs: Vec<f64>,
    pub times: Vec<f64>,
    /// `values[i][j]` is `u(times[i], xs[j])`.
    pub values: Vec<Vec<f64>>,
}

impl OracleSolution {
    /// Linear interpolation in space at output time index `i`.
    pub fn value_at(&self, i: usize, x: f64) -> Option<f64> {
        let n = self.xs.len();
        let h = self.xs[1] - self.xs[0];
        let u = (x - self.xs[0]) / h;
        if u < 0.0 || u > (n - 1) as f64 {
            return None;
        }
        let k = (u.floor() as usize).min(n - 2);
        let r = u - k as f64;
        Some((1.0 - r) * self.values[i][k] + r * self.values[i][k + 1])
    }

    /// Writes rows `t,x,u`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "t,x,u")?;
        for (t, row) in self.times.iter().zip(&self.values) {
            for (x, u) in self.xs.iter().zip(row) {
                writeln!(out, "{t},{x},{u:e}")?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Solves the one-dimensional problem with Crank-Nicolson on a uniform grid,
/// holding the boundary values at the initial datum, with coefficients taken
/// at the midpoint of each step and steps aligned with the coefficient breakpoints.
pub fn fd_oracle_solve(problem: &CauchyProblem, grid: &OracleGrid, times: &[f64]) -> Result<OracleSolution> {
    let field = problem.field.as_ref();
    if field.dim() != 1 {
        return Err(Error::Domain("the finite-difference reference is one-dimensional".into()));
    }
    if grid.nodes < 3 || !(grid.x_hi > grid.x_lo) || !(grid.max_dt > 0.0) {
        return Err(Error::Configuration("reference grid needs >= 3 nodes, x_hi > x_lo and dt > 0".into()));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) || times.first().is_some_and(|t| !(*t > problem.tau)) {
        return Err(Error::Domain("output times must increase and exceed tau".into()));
    }
    let n = grid.nodes;
    let h = grid.step();
    let xs: Vec<f64> = (0..n).map(|i| grid.x_lo + h * i as f64).collect();
    let mut u: Vec<f64> = xs.iter().map(|x| (problem.datum)(&point(&[*x]))).collect();
    let (left, right) = (u[0], u[n - 1]);

    let end = times.last().copied().unwrap_or(problem.tau);
    let mut stops: Vec<f64> = times.to_vec();
    stops.extend(field.breakpoints().into_iter().filter(|b| *b > problem.tau && *b < end));
    stops.sort_by(|a, b| a.total_cmp(b));
    stops.dedup_by(|a, b| (*a - *b).abs() < 1e-14);

    let m = n - 2;
    let (mut lo, mut di, mut up, mut rhs) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    let mut values = Vec::with_capacity(times.len());
    let mut now = problem.tau;
    for stop in stops {
        let steps = ((stop - now) / grid.max_dt - 1e-9).ceil().max(1.0) as usize;
        let k = (stop - now) / steps as f64;
        for _ in 0..steps {
            let tm = now + 0.5 * k;
            for i in 1..n - 1 {
                let x = point(&[xs[i]]);
                let c = field.coefficients(tm, &x);
                let a = c.diffusion[(0, 0)];
                let b = c.drift[0];
                let al = 0.5 * a / (h * h) - 0.5 * b / h;
                let be = -a / (h * h) + c.potential;
                let ga = 0.5 * a / (h * h) + 0.5 * b / h;
                let r = i - 1;
                lo[r] = -0.5 * k * al;
                di[r] = 1.0 - 0.5 * k * be;
                up[r] = -0.5 * k * ga;
                rhs[r] = u[i] + 0.5 * k * (al * u[i - 1] + be * u[i] + ga * u[i + 1]) + k * field.source(tm, &x);
                if i == 1 {
                    rhs[r] += 0.5 * k * al * left;
                }
                if i == n - 2 {
                    rhs[r] += 0.5 * k * ga * right;
                }
            }
            thomas(&lo, &di, &up, &mut rhs);
            u[1..n - 1].copy_from_slice(&rhs);
            now += k;
        }
        now = stop;
        if times.iter().any(|t| (t - stop).abs() < 1e-14) {
            values.push(u.clone());
        }
    }
    Ok(OracleSolution { xs, times: times.to_vec(), values })
}

/// Solves the tridiagonal system in place; `rhs` becomes the solution.
fn thomas(lo: &[f64], di: &[f64], up: &[f64], rhs: &mut [f64]) {
    let m = di.len();
    let mut c = vec![0.0; m];
    let mut beta = di[0];
    rhs[0] /= beta;
    for i in 1..m {
        c[i - 1] = up[i - 1] / beta;
        beta = di[i] - lo[i] * c[i - 1];
        rhs[i] = (rhs[i] - lo[i] * rhs[i - 1]) / beta;
    }
    for i in (0..m - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

/// Observed convergence order `log2(|u_h - u_{h/2}| / |u_{h/2} - u_{h/4}|)` in
/// the sup norm over the coarse nodes at time `t`.
pub fn richardson_order(problem: &CauchyProblem, grid: &OracleGrid, t: f64) -> Result<f64> {
    let g2 = grid.refined();
    let g4 = g2.refined();
    let u1 = fd_oracle_solve(problem, grid, &[t])?;
    let u2 = fd_oracle_solve(problem, &g2, &[t])?;
    let u4 = fd_oracle_solve(problem, &g4, &[t])?;
    let mut d12 = 0.0f64;
    let mut d24 = 0.0f64;
    for j in 0..grid.nodes {
        d12 = d12.max((u1.values[0][j] - u2.values[0][2 * j]).abs());
        d24 = d24.max((u2.values[0][2 * j] - u4.values[0][4 * j]).abs());
    }
    Ok((d12 / d24).log2())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::SeparableField;
    use std::sync::Arc;

    fn heat_problem() -> CauchyProblem {
        let field = Arc::new(SeparableField::isotropic(1, 1.0, 1.5));
        CauchyProblem::new(field, 0.0, 1.0, |x| (-x[0] * x[0] / 0.5).exp() / (0.5 * std::f64::consts::PI).sqrt())
    }

    #[test]
    fn heat_equation_matches_closed_form() {
        let p = heat_problem();
        let g = OracleGrid { x_lo: -8.0, x_hi: 8.0, nodes: 801, max_dt: 0.005 };
        let sol = fd_oracle_solve(&p, &g, &[0.5, 1.0]).unwrap();
        for (i, t) in [0.5, 1.0].iter().enumerate() {
            let var = 0.25 + t;
            for (j, x) in sol.xs.iter().enumerate() {
                let exact = (-x * x / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
                assert!((sol.values[i][j] - exact).abs() < 5e-5, "t={t} x={x} {} {exact}", sol.values[i][j]);
            }
        }
    }

    #[test]
    fn crank_nicolson_is_second_order() {
        let p = heat_problem();
        let g = OracleGrid { x_lo: -8.0, x_hi: 8.0, nodes: 81, max_dt: 0.05 };
        let order = richardson_order(&p, &g, 1.0).unwrap();
        assert!(order > 1.8, "order {order}");
    }
}
