//! Change of variables along the stochastic flow.
//!
//! If `u` solves `du = (L u + f) dt + sigma^{ik} d_i u dW^k`, then
//! `u_hat(t, x) = u(t, X_t(x))` solves a deterministic equation whose
//! coefficients are built here from the flow and its derivatives:
//!
//! ```text
//! a   = Y A_hat Y^T,             A = a_spde - sigma sigma^T
//! b^r = Y^{rh} (b_hat^h - (d_i sigma^{hk} sigma^{ik})_hat - 1/2 A_hat^{ij} (Y^T D^2 X^h Y)_{ij})
//! c   = c_hat,  f = f_hat
//! ```
//!
//! with `Y = (DX)^{-1}` and hats denoting composition with the flow.

use std::sync::Arc;

use serde::Serialize;

use crate::coefficients::{CoefficientField, SigmaField};
use crate::error::{Error, Result};
use crate::flow::{FlowState, PointState};
use crate::linalg::{asymmetry, coords, norm, sym_eigenvalues, Point, SymMatrix};
use crate::quadrature::SpaceGrid;

/// `g(t_n, X_{tau, t_n}(x))`; exact at seeds, multilinear in the flow image between them.
pub fn hat_compose(g: impl Fn(f64, &Point) -> f64, state: &FlowState, t: f64, x: &Point) -> Result<f64> {
    let n = state
        .path()
        .knot_index(t)
        .ok_or_else(|| Error::Domain(format!("t={t} is not a knot of the flow mesh")))?;
    let states = state.states_at(n);
    let image = state
        .seeds()
        .interpolate(x, false, |i| states[i].x)
        .ok_or_else(|| Error::Extrapolation(format!("x={:?} lies outside the seed grid", coords(x, state.dim()))))?;
    Ok(g(t, &image))
}

/// `a - sigma sigma^T` of the stochastic equation.
pub fn reduced_diffusion(field: &dyn CoefficientField, sigma: &dyn SigmaField, t: f64, x: &Point) -> SymMatrix {
    let s = sigma.value(t, x);
    field.diffusion(t, x) - s * s.transpose()
}

/// Smallest eigenvalue of `a(t, x)` over the samples.
pub fn coercivity_margin(
    a: impl Fn(f64, &Point) -> SymMatrix,
    dim: usize,
    samples: &[(f64, Point)],
) -> Result<(f64, (f64, Point))> {
    if samples.is_empty() {
        return Err(Error::Domain("no samples supplied".into()));
    }
    let mut best = (f64::INFINITY, samples[0].clone());
    for (t, x) in samples {
        let m = a(*t, x);
        let asym = asymmetry(&m, dim);
        if asym > 1e-12 * (1.0 + m.amax()) {
            return Err(Error::Structural(format!(
                "matrix is not symmetric at t={t}, x={:?} (asymmetry {asym:.3e})",
                coords(x, dim)
            )));
        }
        let ev = sym_eigenvalues(&m, dim)[0];
        if ev < best.0 {
            best = (ev, (*t, *x));
        }
    }
    Ok(best)
}

/// Extremes of the transformed coefficients over the seed grid and flow knots.
#[derive(Debug, Clone, Serialize)]
pub struct TransformReport {
    /// Smallest eigenvalue of `a - sigma sigma^T` along the flow images.
    pub reduced_margin: f64,
    /// Smallest eigenvalue of the transformed diffusion.
    pub margin: f64,
    pub max_eigenvalue: f64,
    pub max_drift: f64,
    pub max_potential: f64,
    /// Smallest squared singular value of `Y` over the stored states.
    pub inverse_gradient_margin: f64,
    pub worst_sample: (f64, Vec<f64>),
}

#[derive(Debug, Clone, Copy)]
struct NodeData {
    diffusion: SymMatrix,
    drift: Point,
    potential: f64,
    source: f64,
}

/// Coefficients of the transformed equation, stored on the seed grid at every
/// flow knot. Linear in time between knots, multilinear in space, and extended
/// by the boundary values outside the seed box.
pub struct TransformedField {
    dim: usize,
    seeds: SpaceGrid,
    tau: f64,
    dt: f64,
    knots: usize,
    /// `[knot][seed]`
    data: Vec<NodeData>,
    /// `int_tau^{t_n} a dt` per knot and seed.
    prefix: Vec<SymMatrix>,
    lambda: f64,
    alpha: f64,
    has_source: bool,
    driftless: bool,
    report: TransformReport,
    path_index: u64,
    seed: u64,
    /// Knots per declared time panel; zero declares none.
    panel_knots: usize,
}

impl std::fmt::Debug for TransformedField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TransformedField")
            .field("tau", &self.tau)
            .field("knots", &self.knots)
            .field("lambda", &self.lambda)
            .field("report", &self.report)
            .finish()
    }
}

/// Transformed coefficients at one state.
fn transform_at(
    field: &dyn CoefficientField,
    sigma: &dyn SigmaField,
    t: f64,
    st: &PointState,
) -> (NodeData, SymMatrix) {
    let d = field.dim();
    let x = st.x;
    let reduced = reduced_diffusion(field, sigma, t, &x);
    let y = st.inv;
    let mut a = y * reduced * y.transpose();
    // Symmetrize away rounding; padding stays zero.
    a = (a + a.transpose()) * 0.5;
    let mut inner = field.drift(t, &x);
    for k in 0..sigma.channels() {
        let j = sigma.jet(t, &x, k);
        inner -= j.jac * j.value;
    }
    for h in 0..d {
        let q = y.transpose() * st.hess[h] * y;
        let mut acc = 0.0;
        for i in 0..d {
            for j in 0..d {
                acc += reduced[(i, j)] * q[(i, j)];
            }
        }
        inner[h] -= 0.5 * acc;
    }
    let mut drift = y * inner;
    for i in d..3 {
        drift[i] = 0.0;
    }
    let node = NodeData { diffusion: a, drift, potential: field.potential(t, &x), source: field.source(t, &x) };
    (node, reduced)
}

/// Builds the transformed field of one path from the simulated flow.
///
/// Fails with a coercivity error when the sampled transformed diffusion is not
/// positive definite, naming the worst sample.
pub fn transform_coefficients(
    field: &dyn CoefficientField,
    sigma: &dyn SigmaField,
    state: &FlowState,
) -> Result<TransformedField> {
    let d = field.dim();
    if sigma.dim() != d || state.dim() != d {
        return Err(Error::Domain("field, sigma and flow dimensions differ".into()));
    }
    let seeds = state.seeds().clone();
    let ns = seeds.len();
    let knots = state.knots();
    let mut data = Vec::with_capacity(knots * ns);
    let mut report = TransformReport {
        reduced_margin: f64::INFINITY,
        margin: f64::INFINITY,
        max_eigenvalue: 0.0,
        max_drift: 0.0,
        max_potential: 0.0,
        inverse_gradient_margin: f64::INFINITY,
        worst_sample: (state.tau(), coords(&seeds.node(0), d)),
    };
    let mut worst_reduced = report.worst_sample.clone();
    for n in 0..knots {
        let t = state.time(n);
        for (i, st) in state.states_at(n).iter().enumerate() {
            let (node, reduced) = transform_at(field, sigma, t, st);
            let rm = sym_eigenvalues(&reduced, d)[0];
            if rm < report.reduced_margin {
                report.reduced_margin = rm;
                worst_reduced = (t, coords(&st.x, d));
            }
            let ev = sym_eigenvalues(&node.diffusion, d);
            if ev[0] < report.margin {
                report.margin = ev[0];
                report.worst_sample = (t, coords(&seeds.node(i), d));
            }
            report.max_eigenvalue = report.max_eigenvalue.max(ev[d - 1]);
            report.max_drift = report.max_drift.max(norm(&node.drift, d));
            report.max_potential = report.max_potential.max(node.potential.abs());
            let yy = st.inv.transpose() * st.inv;
            report.inverse_gradient_margin = report.inverse_gradient_margin.min(sym_eigenvalues(&yy, d)[0]);
            data.push(node);
        }
    }
    if !(report.reduced_margin > 0.0) {
        return Err(Error::Coercivity { margin: report.reduced_margin, t: worst_reduced.0, x: worst_reduced.1 });
    }
    if !(report.margin > 0.0) {
        return Err(Error::Coercivity { margin: report.margin, t: report.worst_sample.0, x: report.worst_sample.1.clone() });
    }
    let mut prefix = Vec::with_capacity(knots * ns);
    prefix.extend(std::iter::repeat_n(SymMatrix::zeros(), ns));
    let dt = state.path().dt();
    for n in 1..knots {
        for i in 0..ns {
            let p = prefix[(n - 1) * ns + i]
                + (data[(n - 1) * ns + i].diffusion + data[n * ns + i].diffusion) * (0.5 * dt);
            prefix.push(p);
        }
    }
    let lambda = report
        .max_eigenvalue
        .max(1.0 / report.margin)
        .max(report.max_drift)
        .max(report.max_potential)
        .max(1.0)
        * 1.02;
    let has_source = field.has_source();
    let driftless = data.iter().all(|n| n.drift == Point::zeros() && n.potential == 0.0);
    Ok(TransformedField {
        dim: d,
        seeds,
        tau: state.tau(),
        dt,
        knots,
        data,
        prefix,
        lambda,
        alpha: field.alpha(),
        has_source,
        driftless,
        report,
        path_index: state.path().path_index(),
        seed: state.path().seed(),
        panel_knots: 0,
    })
}

impl TransformedField {
    /// Declares every `k`-th knot as a time breakpoint, so time quadratures
    /// use panels of `k` path steps. The coefficients are only continuous in
    /// time, and a single polynomial panel over many knots resolves them poorly.
    pub fn with_panel_knots(mut self, k: usize) -> Self {
        self.panel_knots = k;
        self
    }

    pub fn report(&self) -> &TransformReport {
        &self.report
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn seeds(&self) -> &SpaceGrid {
        &self.seeds
    }

    /// `(master seed, path index)` of the driving path.
    pub fn provenance(&self) -> (u64, u64) {
        (self.seed, self.path_index)
    }

    /// Knot below `t` and the fraction of the step covered.
    fn locate(&self, t: f64) -> (usize, f64) {
        let u = ((t - self.tau) / self.dt).clamp(0.0, (self.knots - 1) as f64);
        let n = (u.floor() as usize).min(self.knots.saturating_sub(2));
        (n, u - n as f64)
    }

    fn sample<T>(&self, t: f64, x: &Point, get: impl Fn(&NodeData) -> T) -> T
    where
        T: Copy + std::ops::Add<Output = T> + std::ops::Sub<Output = T> + std::ops::Mul<f64, Output = T>,
    {
        let ns = self.seeds.len();
        if self.knots == 1 {
            return self.seeds.interpolate(x, true, |i| get(&self.data[i])).expect("clamped");
        }
        let (n, w) = self.locate(t);
        let v0 = self.seeds.interpolate(x, true, |i| get(&self.data[n * ns + i])).expect("clamped");
        let v1 = self.seeds.interpolate(x, true, |i| get(&self.data[(n + 1) * ns + i])).expect("clamped");
        v0 + (v1 - v0) * w
    }

    /// `int_tau^t a dt` at seed `i`.
    fn prefix_at(&self, t: f64, i: usize) -> SymMatrix {
        let ns = self.seeds.len();
        if self.knots == 1 {
            return self.data[i].diffusion * (t - self.tau);
        }
        let (n, w) = self.locate(t);
        let a0 = self.data[n * ns + i].diffusion;
        let a1 = self.data[(n + 1) * ns + i].diffusion;
        let h = w * self.dt;
        self.prefix[n * ns + i] + (a0 + (a1 - a0) * (0.5 * w)) * h
    }
}

impl CoefficientField for TransformedField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn diffusion(&self, t: f64, x: &Point) -> SymMatrix {
        self.sample(t, x, |n| n.diffusion)
    }

    fn drift(&self, t: f64, x: &Point) -> Point {
        self.sample(t, x, |n| n.drift)
    }

    fn potential(&self, t: f64, x: &Point) -> f64 {
        self.sample(t, x, |n| n.potential)
    }

    fn source(&self, t: f64, x: &Point) -> f64 {
        self.sample(t, x, |n| n.source)
    }

    fn has_source(&self) -> bool {
        self.has_source
    }

    fn lambda(&self) -> f64 {
        self.lambda
    }

    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn integrated_diffusion(&self, y: &Point, s: f64, t: f64) -> SymMatrix {
        self.seeds
            .interpolate(y, true, |i| self.prefix_at(t, i) - self.prefix_at(s, i))
            .expect("clamped")
    }

    fn is_driftless(&self) -> bool {
        self.driftless
    }

    fn breakpoints(&self) -> Vec<f64> {
        if self.panel_knots == 0 {
            return Vec::new();
        }
        (self.panel_knots..self.knots - 1)
            .step_by(self.panel_knots)
            .map(|n| self.tau + n as f64 * self.dt)
            .collect()
    }
}

/// Shares a transformed field as a plain coefficient field.
pub fn into_field(t: TransformedField) -> Arc<dyn CoefficientField> {
    Arc::new(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{ConstantSigma, SeparableField};
    use crate::flow::{simulate_flow, BrownianPath, Scheme};
    use crate::linalg::{noise_matrix, point, scaled_identity};

    fn constant_setup(s0: f64) -> (SeparableField, Arc<ConstantSigma>, FlowState) {
        let field = SeparableField::isotropic(1, 1.0, 2.0);
        let sigma = Arc::new(ConstantSigma::new(1, 1, noise_matrix(1, 1, &[s0])));
        let path = BrownianPath::generate(9, 1, 0.0, 1.0, 16, 1).unwrap();
        let seeds = SpaceGrid::cube(1, -8.0, 8.0, 33).unwrap();
        let fs = simulate_flow(sigma.clone(), path, seeds, Scheme::EulerMaruyama).unwrap();
        (field, sigma, fs)
    }

    #[test]
    fn constant_noise_reduces_the_diffusion() {
        let (field, sigma, fs) = constant_setup(0.6);
        let tf = transform_coefficients(&field, sigma.as_ref(), &fs).unwrap();
        let x = point(&[0.37]);
        for t in [0.0, 0.33, 1.0] {
            assert_eq!(tf.diffusion(t, &x)[(0, 0)], 1.0 - 0.36);
            assert_eq!(tf.drift(t, &x), Point::zeros());
        }
        assert!(tf.is_driftless());
        let cov = tf.integrated_diffusion(&x, 0.2, 0.9)[(0, 0)];
        assert!((cov - 0.64 * 0.7).abs() < 1e-14);
        assert!((tf.report().margin - 0.64).abs() < 1e-15);
    }

    #[test]
    fn hat_of_identity_is_the_shifted_point() {
        let (_, _, fs) = constant_setup(0.6);
        let w = fs.path().value(16)[0];
        let x = point(&[0.25]);
        let v = hat_compose(|_, y| y[0], &fs, 1.0, &x).unwrap();
        assert!((v - (0.25 - 0.6 * w)).abs() < 1e-14);
        let v0 = hat_compose(|t, y| t + y[0] * y[0], &fs, 0.0, &x).unwrap();
        assert!((v0 - 0.0625).abs() < 1e-15);
        assert!(matches!(hat_compose(|_, y| y[0], &fs, 1.0, &point(&[30.0])), Err(Error::Extrapolation(_))));
    }

    #[test]
    fn full_noise_is_not_coercive() {
        let (field, _, fs) = constant_setup(1.0);
        let sigma = ConstantSigma::new(1, 1, noise_matrix(1, 1, &[1.0]));
        assert!(matches!(transform_coefficients(&field, &sigma, &fs), Err(Error::Coercivity { .. })));
    }

    #[test]
    fn margin_of_reduced_diffusion() {
        let field = SeparableField::isotropic(1, 1.0, 2.0);
        let sigma = ConstantSigma::new(1, 1, noise_matrix(1, 1, &[0.5]));
        let samples = vec![(0.0, point(&[0.0])), (0.5, point(&[1.0]))];
        let (m, _) = coercivity_margin(|t, x| reduced_diffusion(&field, &sigma, t, x), 1, &samples).unwrap();
        assert!((m - 0.75).abs() < 1e-15);
        let (m2, _) = coercivity_margin(|_, _| scaled_identity(2, 0.0), 2, &samples).unwrap();
        assert_eq!(m2, 0.0);
    }
}
