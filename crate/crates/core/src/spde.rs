//! Stochastic fundamental solutions.
//!
//! For a fixed path and pole time `tau`, the flow `X_{tau,t}` turns the SPDE into
//! a deterministic equation (see [`crate::itow`]) whose fundamental solution
//! `Gamma_tau` is built by the parametrix. The stochastic kernel is
//! `Gamma(t, x; tau, xi) = Gamma_tau(t, X_{tau,t}^{-1}(x); tau, xi)`.
//!
//! Every stage sees the path restricted to `[tau, horizon]`, so a kernel built
//! with horizon `t` only depends on the noise up to `t`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::coefficients::{CoefficientField, SigmaField};
use crate::error::{Error, Result};
use crate::flow::{invert_flow, simulate_flow, BrownianPath, FlowState, PointState, Scheme};
use crate::itow::{transform_coefficients, TransformedField};
use crate::linalg::{contract, norm, Point, SymMatrix};
use crate::parametrix::{phi_solve, GammaJet, ParametrixConfig, ParametrixTable, Pole, PoleBank, SliceKind};
use crate::quadrature::{loglog_slope, SpaceGrid};

/// `N(x + sigma w - xi; 0, (a^2 - sigma^2)(t - tau))`, the kernel of
/// `du = a^2/2 u_xx dt + sigma u_x dW` with `w = W_t - W_tau`.
pub fn stochastic_heat_kernel(a_bold: f64, sigma: f64, w: f64, t: f64, x: f64, tau: f64, xi: f64) -> Result<f64> {
    let var = a_bold * a_bold - sigma * sigma;
    if !(var > 0.0) {
        return Err(Error::Domain(format!("coercivity violated: a^2 - sigma^2 = {var}")));
    }
    if !(t > tau) {
        return Err(Error::Domain(format!("need t > tau, got t={t}, tau={tau}")));
    }
    let v = var * (t - tau);
    let r = x + sigma * w - xi;
    Ok((-r * r / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt())
}

/// Data of `du = (L u + f) dt + sigma^{ik} d_i u dW^k` and the resolution of
/// every stage.
#[derive(Clone)]
pub struct SpdeProblem {
    /// Coefficients of `L` and the source `f`.
    pub field: Arc<dyn CoefficientField>,
    pub sigma: Arc<dyn SigmaField>,
    pub scheme: Scheme,
    /// Seeds of the flow; the transformed coefficients live on this grid.
    pub seeds: SpaceGrid,
    pub cfg: ParametrixConfig,
    /// Path steps per time panel of the transformed coefficients; zero uses one panel.
    pub panel_knots: usize,
}

/// Flow and transformed field of one path from one start time.
pub struct SpdeFrame {
    flow: FlowState,
    field: Arc<TransformedField>,
}

impl SpdeFrame {
    /// Simulates the flow on the path restricted to `[tau, horizon]` and transforms the coefficients.
    pub fn build(problem: &SpdeProblem, path: &BrownianPath, tau: f64, horizon: f64) -> Result<Self> {
        let local = path.restrict(tau, horizon).map_err(|e| e.at_stage("flow"))?;
        let flow = simulate_flow(problem.sigma.clone(), local, problem.seeds.clone(), problem.scheme)
            .map_err(|e| e.at_stage("flow"))?;
        let field = transform_coefficients(problem.field.as_ref(), problem.sigma.as_ref(), &flow)
            .map_err(|e| e.at_stage("transform"))?
            .with_panel_knots(problem.panel_knots);
        Ok(Self { flow, field: Arc::new(field) })
    }

    pub fn flow(&self) -> &FlowState {
        &self.flow
    }

    pub fn field(&self) -> &Arc<TransformedField> {
        &self.field
    }

    pub fn tau(&self) -> f64 {
        self.flow.tau()
    }

    pub fn horizon(&self) -> f64 {
        self.flow.path().t_end()
    }

    fn knot(&self, t: f64) -> Result<usize> {
        self.flow
            .path()
            .knot_index(t)
            .ok_or_else(|| Error::Domain(format!("t={t} is not a knot of the path mesh on [{}, {}]", self.tau(), self.horizon())))
    }

    /// `X_{tau,t}^{-1}(x)` and the flow state there.
    pub fn pull_back(&self, t: f64, x: &Point) -> Result<(Point, PointState)> {
        let n = self.knot(t)?;
        invert_flow(&self.flow, n, x).map_err(|e| e.at_stage("inversion"))
    }

    fn config(&self, cfg: &ParametrixConfig) -> ParametrixConfig {
        ParametrixConfig { horizon: self.horizon(), ..cfg.clone() }
    }
}

/// Derivatives in `x` of `g(X^{-1}(x))` from the derivatives of `g` at `y = X^{-1}(x)`.
pub fn push_forward_jet(value: f64, gradient: &Point, hessian: &SymMatrix, st: &PointState, dim: usize) -> (f64, Point, SymMatrix) {
    let y = st.inv;
    let grad = y.transpose() * gradient;
    let mut hess = y.transpose() * hessian * y;
    // d_ik (X^{-1})^j = -Y^{jh} (Y^T D^2 X^h Y)_{ik}
    for h in 0..dim {
        let q = y.transpose() * st.hess[h] * y;
        let mut coeff = 0.0;
        for j in 0..dim {
            coeff += gradient[j] * y[(j, h)];
        }
        hess -= q * coeff;
    }
    (value, grad, hess)
}

/// Kernel value and its first two derivatives in `x`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SpdeJet {
    pub value: f64,
    pub gradient: Point,
    pub hessian: SymMatrix,
}

/// Stochastic kernel of one path and pole.
pub struct SpdeKernel {
    frame: Arc<SpdeFrame>,
    table: ParametrixTable,
}

/// Runs flow, transform and parametrix for one pole. Errors carry the stage name.
pub fn assemble_spde_kernel(problem: &SpdeProblem, path: &BrownianPath, pole: Pole, horizon: f64) -> Result<SpdeKernel> {
    let frame = Arc::new(SpdeFrame::build(problem, path, pole.tau, horizon)?);
    SpdeKernel::from_frame(frame, problem, pole.xi)
}

impl SpdeKernel {
    /// Kernel for pole `(frame.tau, xi)` sharing an existing frame.
    pub fn from_frame(frame: Arc<SpdeFrame>, problem: &SpdeProblem, xi: Point) -> Result<Self> {
        let field: Arc<dyn CoefficientField> = frame.field.clone();
        let table = phi_solve(field, Pole::new(frame.tau(), xi), &frame.config(&problem.cfg))
            .map_err(|e| e.at_stage("parametrix"))?;
        Ok(Self { frame, table })
    }

    pub fn frame(&self) -> &Arc<SpdeFrame> {
        &self.frame
    }

    pub fn table(&self) -> &ParametrixTable {
        &self.table
    }

    pub fn pole(&self) -> Pole {
        self.table.pole()
    }

    /// `Gamma(t, x; tau, xi)` together with `X^{-1}(x)`.
    pub fn eval(&self, t: f64, x: &Point) -> Result<(f64, Point)> {
        let (y, _) = self.frame.pull_back(t, x)?;
        let v = self.table.gamma(t, &y).map_err(|e| e.at_stage("parametrix"))?;
        Ok((v, y))
    }

    pub fn value(&self, t: f64, x: &Point) -> Result<f64> {
        Ok(self.eval(t, x)?.0)
    }

    pub fn jet(&self, t: f64, x: &Point) -> Result<SpdeJet> {
        let (y, st) = self.frame.pull_back(t, x)?;
        let j = self.table.gamma_jet(t, &y).map_err(|e| e.at_stage("parametrix"))?;
        let (value, gradient, hessian) = push_forward_jet(j.value, &j.gradient, &j.hessian, &st, self.table.dim());
        Ok(SpdeJet { value, gradient, hessian })
    }
}

/// Pole quadrature of `int Gamma_tau(t, y; tau, xi) g(xi) dxi` on a frame,
/// checking that the pole grid covers the kernel around `y`.
fn frame_integral(bank: &PoleBank, frame: &SpdeFrame, t: f64, ys: &[Point], g: impl Fn(&Point) -> f64 + Sync) -> Result<Vec<f64>> {
    let grid = bank.grid();
    let sd = (frame.field.lambda() * (t - frame.tau())).sqrt();
    for y in ys {
        for i in 0..grid.dim() {
            if y[i] - 6.0 * sd < grid.lower(i) || y[i] + 6.0 * sd > grid.upper(i) {
                return Err(Error::Usage(format!(
                    "pole grid [{}, {}] does not cover six standard deviations around {}",
                    grid.lower(i),
                    grid.upper(i),
                    y[i]
                )));
            }
        }
    }
    bank.integrate(t, ys, g)
}

/// `u_t(x) = int Gamma(t, x; 0, xi) u0(xi) dxi + int_0^t int Gamma(t, x; s, xi) f_s(xi) dxi ds`
/// on one path. The pole integrals use the nodes of `poles`; the time
/// integral uses the trapezoid rule on the path knots, each knot with its own
/// flow started there.
pub fn spde_solve(
    problem: &SpdeProblem,
    path: &BrownianPath,
    u0: impl Fn(&Point) -> f64 + Sync,
    poles: &SpaceGrid,
    t: f64,
    xs: &[Point],
) -> Result<Vec<f64>> {
    let tau = path.t0();
    let n = path
        .knot_index(t)
        .ok_or_else(|| Error::Domain(format!("t={t} is not a knot of the path mesh")))?;
    if n == 0 {
        return Ok(xs.iter().map(&u0).collect());
    }
    let frame = SpdeFrame::build(problem, path, tau, t)?;
    let bank = PoleBank::build(frame.field.clone(), tau, poles.clone(), &frame.config(&problem.cfg))
        .map_err(|e| e.at_stage("parametrix"))?;
    let ys = xs.iter().map(|x| frame.pull_back(t, x).map(|p| p.0)).collect::<Result<Vec<_>>>()?;
    let mut u = frame_integral(&bank, &frame, t, &ys, &u0)?;
    if !problem.field.has_source() {
        return Ok(u);
    }
    let field = problem.field.clone();
    let dt = path.dt();
    let source_rows = (0..n)
        .into_par_iter()
        .map(|j| -> Result<Vec<f64>> {
            let s = path.time(j);
            let frame = SpdeFrame::build(problem, path, s, t)?;
            let bank = PoleBank::build(frame.field.clone(), s, poles.clone(), &frame.config(&problem.cfg))
                .map_err(|e| e.at_stage("parametrix"))?;
            let ys = xs.iter().map(|x| frame.pull_back(t, x).map(|p| p.0)).collect::<Result<Vec<_>>>()?;
            frame_integral(&bank, &frame, t, &ys, |xi| field.source(s, xi))
        })
        .collect::<Result<Vec<_>>>()?;
    for (j, row) in source_rows.iter().enumerate() {
        let w = if j == 0 { 0.5 * dt } else { dt };
        for (o, v) in u.iter_mut().zip(row) {
            *o += w * v;
        }
    }
    for (o, x) in u.iter_mut().zip(xs) {
        *o += 0.5 * dt * field.source(t, x);
    }
    Ok(u)
}

/// Path-wise solution with spatial derivatives at the knots of its path.
pub trait PathwiseSolution: Sync {
    fn path(&self) -> &BrownianPath;

    /// Value, gradient and Hessian at knot `n`.
    fn jet(&self, n: usize, x: &Point) -> Result<SpdeJet>;
}

/// Solution given by closed-form derivatives.
pub struct FnSolution<F> {
    path: BrownianPath,
    f: F,
}

impl<F> FnSolution<F>
where
    F: Fn(usize, &BrownianPath, &Point) -> SpdeJet + Sync,
{
    pub fn new(path: BrownianPath, f: F) -> Self {
        Self { path, f }
    }
}

impl<F> PathwiseSolution for FnSolution<F>
where
    F: Fn(usize, &BrownianPath, &Point) -> SpdeJet + Sync,
{
    fn path(&self) -> &BrownianPath {
        &self.path
    }

    fn jet(&self, n: usize, x: &Point) -> Result<SpdeJet> {
        Ok((self.f)(n, &self.path, x))
    }
}

/// Solution of the homogeneous problem from a pole bank on one frame started
/// at the first knot of the path.
pub struct KernelSolution {
    path: BrownianPath,
    frame: SpdeFrame,
    bank: PoleBank,
    datum: Arc<dyn Fn(&Point) -> f64 + Send + Sync>,
}

impl KernelSolution {
    pub fn new(
        problem: &SpdeProblem,
        path: BrownianPath,
        datum: Arc<dyn Fn(&Point) -> f64 + Send + Sync>,
        poles: SpaceGrid,
    ) -> Result<Self> {
        if problem.field.has_source() {
            return Err(Error::Usage("kernel solutions with derivatives cover the homogeneous problem only".into()));
        }
        let frame = SpdeFrame::build(problem, &path, path.t0(), path.t_end())?;
        let bank = PoleBank::build(frame.field.clone(), path.t0(), poles, &frame.config(&problem.cfg))
            .map_err(|e| e.at_stage("parametrix"))?;
        Ok(Self { path, frame, bank, datum })
    }

    pub fn frame(&self) -> &SpdeFrame {
        &self.frame
    }

    /// Central differences of the datum, used at the initial knot.
    fn datum_jet(&self, x: &Point) -> SpdeJet {
        let d = self.frame.flow().dim();
        let h = 1e-4 * (1.0 + norm(x, d));
        let u = |p: &Point| (self.datum)(p);
        let e = |i: usize| {
            let mut v = Point::zeros();
            v[i] = h;
            v
        };
        let u0 = u(x);
        let mut gradient = Point::zeros();
        let mut hessian = SymMatrix::zeros();
        for i in 0..d {
            gradient[i] = (u(&(x + e(i))) - u(&(x - e(i)))) / (2.0 * h);
            hessian[(i, i)] = (u(&(x + e(i))) - 2.0 * u0 + u(&(x - e(i)))) / (h * h);
            for j in 0..i {
                let v = (u(&(x + e(i) + e(j))) - u(&(x + e(i) - e(j))) - u(&(x - e(i) + e(j))) + u(&(x - e(i) - e(j))))
                    / (4.0 * h * h);
                hessian[(i, j)] = v;
                hessian[(j, i)] = v;
            }
        }
        SpdeJet { value: u0, gradient, hessian }
    }
}

impl PathwiseSolution for KernelSolution {
    fn path(&self) -> &BrownianPath {
        &self.path
    }

    fn jet(&self, n: usize, x: &Point) -> Result<SpdeJet> {
        if n == 0 {
            return Ok(self.datum_jet(x));
        }
        let t = self.path.time(n);
        let d = self.frame.flow().dim();
        let (y, st) = self.frame.pull_back(t, x)?;
        let grid = self.bank.grid();
        let sd = (self.frame.field.lambda() * (t - self.frame.tau())).sqrt();
        for i in 0..d {
            if y[i] - 6.0 * sd < grid.lower(i) || y[i] + 6.0 * sd > grid.upper(i) {
                return Err(Error::Usage(format!("pole grid does not cover the kernel around {}", y[i])));
            }
        }
        let mut acc = GammaJet { value: 0.0, gradient: Point::zeros(), hessian: SymMatrix::zeros(), time_derivative: 0.0 };
        let cutoff = 2.0 * 45.0 * self.frame.field.lambda() * (t - self.frame.tau());
        for (k, table) in self.bank.tables().iter().enumerate() {
            let xi = grid.node(k);
            if (y - xi).norm_squared() > cutoff {
                continue;
            }
            let w = grid.weight(k) * (self.datum)(&xi);
            if w == 0.0 {
                continue;
            }
            let j = table.slice(t, SliceKind::Jet)?.jet(&y)?;
            acc.value += w * j.value;
            acc.gradient += j.gradient * w;
            acc.hessian += j.hessian * w;
        }
        let (value, gradient, hessian) = push_forward_jet(acc.value, &acc.gradient, &acc.hessian, &st, d);
        Ok(SpdeJet { value, gradient, hessian })
    }
}

/// Defects of the discretized integral identity on a sequence of meshes.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualDecay {
    /// Mesh sizes, coarse to fine.
    pub dts: Vec<f64>,
    /// Sup over the evaluation points of the defect at the final time.
    pub defects: Vec<f64>,
    /// Log-log slope of the defects against the mesh size.
    pub slope: f64,
}

/// Checks `u_T = u_0 + int (L u + f) ds + int sigma^{ik} d_i u dW^k` on the
/// meshes obtained by coarsening the solution's path by each factor. The
/// stochastic integral uses left-point sums; the `ds` integral uses the
/// left-point rule as well.
pub fn spde_residual_check(
    u: &dyn PathwiseSolution,
    field: &dyn CoefficientField,
    sigma: &dyn SigmaField,
    xs: &[Point],
    factors: &[usize],
) -> Result<ResidualDecay> {
    let path = u.path();
    let d = field.dim();
    let steps = path.steps();
    let mut jets = Vec::with_capacity(steps + 1);
    for n in 0..=steps {
        jets.push(xs.iter().map(|x| u.jet(n, x)).collect::<Result<Vec<_>>>()?);
    }
    let mut dts = Vec::new();
    let mut defects = Vec::new();
    for &m in factors {
        let coarse = path.coarsen(m)?;
        let dt = coarse.dt();
        let mut sup = 0.0f64;
        for (i, x) in xs.iter().enumerate() {
            let mut rhs = jets[0][i].value;
            for j in 0..coarse.steps() {
                let s = coarse.time(j);
                let jet = &jets[j * m][i];
                let c = field.coefficients(s, x);
                let lu = 0.5 * contract(&c.diffusion, &jet.hessian, d)
                    + c.drift.dot(&jet.gradient)
                    + c.potential * jet.value
                    + field.source(s, x);
                rhs += lu * dt;
                let sv = sigma.value(s, x);
                for k in 0..sigma.channels() {
                    let g: f64 = (0..d).map(|a| sv[(a, k)] * jet.gradient[a]).sum();
                    rhs += g * coarse.increment(j)[k];
                }
            }
            sup = sup.max((jets[steps][i].value - rhs).abs());
        }
        dts.push(dt);
        defects.push(sup);
    }
    let slope = slope_or_nan(&dts, &defects);
    Ok(ResidualDecay { dts, defects, slope })
}

fn slope_or_nan(dts: &[f64], values: &[f64]) -> f64 {
    if values.iter().all(|v| *v > 0.0) && dts.len() >= 2 {
        loglog_slope(dts, values)
    } else {
        f64::NAN
    }
}

/// Root mean square of the per-path defects on each mesh and its slope.
pub fn rms_decay(reports: &[ResidualDecay]) -> Result<ResidualDecay> {
    let first = reports.first().ok_or_else(|| Error::Usage("no residual reports to aggregate".into()))?;
    let m = first.dts.len();
    if reports.iter().any(|r| r.dts.len() != m) {
        return Err(Error::Usage("residual reports use different meshes".into()));
    }
    let defects: Vec<f64> = (0..m)
        .map(|k| (reports.iter().map(|r| r.defects[k] * r.defects[k]).sum::<f64>() / reports.len() as f64).sqrt())
        .collect();
    let slope = slope_or_nan(&first.dts, &defects);
    Ok(ResidualDecay { dts: first.dts.clone(), defects, slope })
}

/// Closed-form solution of the stochastic heat equation from the datum
/// `N(0, s0^2)`: the density of `N(-sigma w, s0^2 + (a^2 - sigma^2) t)` at `x`.
pub fn stochastic_heat_solution(a_bold: f64, sigma: f64, s0: f64, w: f64, t: f64, x: f64) -> SpdeJet {
    let v = s0 * s0 + (a_bold * a_bold - sigma * sigma) * t;
    let r = x + sigma * w;
    let p = (-r * r / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
    let mut gradient = Point::zeros();
    let mut hessian = SymMatrix::zeros();
    gradient[0] = -r / v * p;
    hessian[(0, 0)] = (r * r / (v * v) - 1.0 / v) * p;
    SpdeJet { value: p, gradient, hessian }
}
