//! The Cauchy problem `d_t u = L u + f`, `u(tau) = phi`, solved through the
//! fundamental solution, and checks of the solution against the integral form
//! of the equation and against a finite-difference reference.

mod oracle;

pub use oracle::{fd_oracle_solve, richardson_order, OracleGrid, OracleSolution};

use std::sync::Arc;

use serde::Serialize;

use crate::coefficients::CoefficientField;
use crate::error::{Error, Result};
use crate::linalg::{contract, Point, SymMatrix};
use crate::parametrix::{ParametrixConfig, PoleBank};
use crate::quadrature::{singular_rule, Rule, SpaceGrid};

pub type Datum = Arc<dyn Fn(&Point) -> f64 + Send + Sync>;

/// Initial-value problem on `[tau, horizon]` with the source taken from the field.
#[derive(Clone)]
pub struct CauchyProblem {
    pub field: Arc<dyn CoefficientField>,
    pub tau: f64,
    pub horizon: f64,
    pub datum: Datum,
}

impl CauchyProblem {
    pub fn new(field: Arc<dyn CoefficientField>, tau: f64, horizon: f64, datum: impl Fn(&Point) -> f64 + Send + Sync + 'static) -> Self {
        Self { field, tau, horizon, datum: Arc::new(datum) }
    }
}

/// Pole banks at the quadrature times of the source integral for one target time.
#[derive(Debug, Clone)]
pub struct SourceBanks {
    pub target: f64,
    pub rule: Rule,
    pub banks: Vec<PoleBank>,
}

impl SourceBanks {
    /// Builds banks at `nodes` quadrature times in `(tau, t)`.
    pub fn build(problem: &CauchyProblem, t: f64, grid: &SpaceGrid, cfg: &ParametrixConfig, nodes: usize) -> Result<Self> {
        if !(t > problem.tau) {
            return Err(Error::Domain("source integral needs t > tau".into()));
        }
        let rule = singular_rule(problem.tau, t, 0.0, 0.5, &problem.field.breakpoints(), nodes);
        let mut cfg = cfg.clone();
        cfg.horizon = cfg.horizon.max(t);
        let banks = rule
            .nodes
            .iter()
            .map(|&s| PoleBank::build(problem.field.clone(), s, grid.clone(), &cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { target: t, rule, banks })
    }
}

/// `u(t, x) = int Gamma(t, x; tau, xi) phi(xi) dxi + int_tau^t int Gamma(t, x; s, xi) f(s, xi) dxi ds`.
pub fn duhamel_solve(
    problem: &CauchyProblem,
    bank: &PoleBank,
    source: Option<&SourceBanks>,
    t: f64,
    xs: &[Point],
) -> Result<Vec<f64>> {
    if (bank.tau() - problem.tau).abs() > 1e-12 {
        return Err(Error::Usage(format!(
            "pole bank at tau={} does not match the problem start {}",
            bank.tau(),
            problem.tau
        )));
    }
    if !(t > problem.tau) || t > problem.horizon + 1e-12 {
        return Err(Error::Domain(format!("t={t} outside ({}, {}]", problem.tau, problem.horizon)));
    }
    let datum = problem.datum.clone();
    let mut u = bank.integrate(t, xs, move |xi| datum(xi))?;
    if problem.field.has_source() {
        let src = source.ok_or_else(|| {
            Error::Usage("the field has a source term but no source pole banks were supplied".into())
        })?;
        if (src.target - t).abs() > 1e-12 {
            return Err(Error::Usage(format!(
                "source banks were built for t={}, requested t={t}",
                src.target
            )));
        }
        for ((&s, &w), b) in src.rule.nodes.iter().zip(&src.rule.weights).zip(&src.banks) {
            let field = problem.field.clone();
            let part = b.integrate(t, xs, move |xi| field.source(s, xi))?;
            for (ui, pi) in u.iter_mut().zip(part) {
                *ui += w * pi;
            }
        }
    }
    Ok(u)
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualReport {
    /// Largest defect over the evaluation points.
    pub defect: f64,
    pub per_point: Vec<f64>,
    /// Finite-difference step used for the space derivatives.
    pub fd_step: f64,
    pub warnings: Vec<String>,
}

/// Settings for [`integral_residual`].
#[derive(Debug, Clone)]
pub struct ResidualConfig {
    pub fd_step: f64,
    pub time_nodes: usize,
}

impl Default for ResidualConfig {
    fn default() -> Self {
        Self { fd_step: 1e-3, time_nodes: 8 }
    }
}

/// Defect `|u(t, x) - phi(x) - int_tau^t (L_s u_s + f_s)(x) ds|` at each point,
/// with space derivatives of `u` from central differences.
pub fn integral_residual(
    u: impl Fn(f64, &Point) -> Result<f64>,
    problem: &CauchyProblem,
    t: f64,
    xs: &[Point],
    cfg: &ResidualConfig,
) -> Result<ResidualReport> {
    if !(t > problem.tau) {
        return Err(Error::Domain("residual needs t > tau".into()));
    }
    let field = problem.field.as_ref();
    let d = field.dim();
    let h = cfg.fd_step;
    let rule = singular_rule(problem.tau, t, 0.0, 0.0, &field.breakpoints(), cfg.time_nodes);
    let mut warnings = Vec::new();
    let earliest = rule.nodes.iter().cloned().fold(f64::INFINITY, f64::min);
    let scale = ((earliest - problem.tau) / field.lambda()).sqrt();
    if h > 0.1 * scale {
        warnings.push(format!(
            "finite-difference step {h:.2e} is coarse against the kernel scale {scale:.2e} at the earliest node"
        ));
    }
    let e = |p: usize| {
        let mut v = Point::zeros();
        v[p] = h;
        v
    };
    let mut per_point = Vec::with_capacity(xs.len());
    for x in xs {
        let mut integral = 0.0;
        for (&s, &w) in rule.nodes.iter().zip(&rule.weights) {
            let u0 = u(s, x)?;
            let mut grad = Point::zeros();
            let mut hess = SymMatrix::zeros();
            for p in 0..d {
                let up = u(s, &(x + e(p)))?;
                let um = u(s, &(x - e(p)))?;
                grad[p] = (up - um) / (2.0 * h);
                hess[(p, p)] = (up - 2.0 * u0 + um) / (h * h);
                for q in 0..p {
                    let v = (u(s, &(x + e(p) + e(q)))? - u(s, &(x + e(p) - e(q)))?
                        - u(s, &(x - e(p) + e(q)))?
                        + u(s, &(x - e(p) - e(q)))?)
                        / (4.0 * h * h);
                    hess[(p, q)] = v;
                    hess[(q, p)] = v;
                }
            }
            let c = field.coefficients(s, x);
            let lu = 0.5 * contract(&c.diffusion, &hess, d) + c.drift.dot(&grad) + c.potential * u0;
            integral += w * (lu + field.source(s, x));
        }
        per_point.push((u(t, x)? - (problem.datum)(x) - integral).abs());
    }
    let defect = per_point.iter().cloned().fold(0.0, f64::max);
    Ok(ResidualReport { defect, per_point, fd_step: h, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::SeparableField;
    use crate::linalg::point;

    fn gaussian(var: f64) -> impl Fn(&Point) -> f64 {
        move |x: &Point| (-x[0] * x[0] / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
    }

    #[test]
    fn exact_heat_solution_has_tiny_residual() {
        let field = Arc::new(SeparableField::isotropic(1, 1.0, 1.5));
        let problem = CauchyProblem::new(field, 0.0, 1.0, gaussian(0.25));
        let u = |t: f64, x: &Point| Ok(gaussian(0.25 + t)(x));
        let xs: Vec<_> = (-4..=4).map(|i| point(&[0.5 * i as f64])).collect();
        let rep = integral_residual(u, &problem, 1.0, &xs, &ResidualConfig::default()).unwrap();
        assert!(rep.defect < 1e-6, "defect {}", rep.defect);
    }

    #[test]
    fn source_without_banks_is_a_usage_error() {
        let field = Arc::new(SeparableField::isotropic(1, 1.0, 1.5).with_source(1.0));
        let problem = CauchyProblem::new(field.clone(), 0.0, 1.0, |_| 0.0);
        let grid = SpaceGrid::cube(1, -1.0, 1.0, 3).unwrap();
        let bank = PoleBank::build(field, 0.0, grid, &ParametrixConfig::default()).unwrap();
        let err = duhamel_solve(&problem, &bank, None, 0.5, &[point(&[0.0])]).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }
}
