//! Stochastic flow `x_t(x) = x - int_tau^t sigma^k(s, x_s) dW^k_s` with its first
//! and second derivatives in the initial point.
//!
//! The derivatives are those of the discrete map, so the stored Jacobian is the
//! exact Jacobian of the simulated flow and Newton inversion of the simulated
//! flow converges quadratically.

mod brownian;

pub use brownian::BrownianPath;

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coefficients::{ChannelJet, SigmaField};
use crate::error::{Error, Result};
use crate::linalg::{coords, norm, Point, SymMatrix};
use crate::quadrature::SpaceGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    EulerMaruyama,
    /// Milstein correction; available for a single noise channel.
    Milstein,
}

/// Flow value and derivatives at one seed and time.
#[derive(Debug, Clone, Copy)]
pub struct PointState {
    pub x: Point,
    /// `jac[(h, i)] = d x^h / d y^i`
    pub jac: SymMatrix,
    /// `hess[h][(i, j)] = d^2 x^h / d y^i d y^j`
    pub hess: [SymMatrix; 3],
    pub det: f64,
    /// Inverse Jacobian.
    pub inv: SymMatrix,
}

impl PointState {
    pub fn start(y: &Point) -> Self {
        Self {
            x: *y,
            jac: SymMatrix::identity(),
            hess: [SymMatrix::zeros(); 3],
            det: 1.0,
            inv: SymMatrix::identity(),
        }
    }
}

/// Largest `sum_k |D sigma^k| sqrt(dt)` tolerated by the schemes.
pub const MESH_LIMIT: f64 = 0.1;

/// One step of the scheme from `state` over `[t, t + dt]` with increments `dw`.
pub fn step(sigma: &dyn SigmaField, scheme: Scheme, t: f64, dt: f64, dw: &[f64], state: &PointState) -> Result<PointState> {
    let d = sigma.dim();
    let m = sigma.channels();
    let mut fx = state.x;
    let mut df = SymMatrix::identity();
    let mut d2f = [SymMatrix::zeros(); 3];
    let mut grad_size = 0.0;
    match scheme {
        Scheme::EulerMaruyama => {
            for (k, w) in dw.iter().enumerate().take(m) {
                let j = sigma.jet(t, &state.x, k);
                grad_size += j.jac.norm();
                fx -= j.value * *w;
                df -= j.jac * *w;
                for h in 0..d {
                    d2f[h] -= j.hess[h] * *w;
                }
            }
        }
        Scheme::Milstein => {
            if m != 1 {
                return Err(Error::Configuration("the Milstein scheme needs a single noise channel".into()));
            }
            let j = sigma.jet(t, &state.x, 0);
            grad_size = j.jac.norm();
            let w = dw[0];
            let q = 0.5 * (w * w - dt);
            let (g, dg, d2g) = milstein_drift(&j, d);
            fx += -j.value * w + g * q;
            df += -j.jac * w + dg * q;
            for h in 0..d {
                d2f[h] += -j.hess[h] * w + d2g[h] * q;
            }
        }
    }
    if grad_size * dt.sqrt() >= MESH_LIMIT {
        return Err(Error::Configuration(format!(
            "mesh too coarse: |D sigma| sqrt(dt) = {:.3} >= {MESH_LIMIT}",
            grad_size * dt.sqrt()
        )));
    }
    let jac = df * state.jac;
    let mut hess = [SymMatrix::zeros(); 3];
    for h in 0..d {
        let mut acc = state.jac.transpose() * d2f[h] * state.jac;
        for l in 0..d {
            acc += state.hess[l] * df[(h, l)];
        }
        hess[h] = acc;
    }
    let det = jac.determinant();
    if !(det > 0.0) || !det.is_finite() {
        return Err(Error::Degenerate { t: t + dt, det, seed: coords(&state.x, d) });
    }
    let inv = jac.try_inverse().ok_or(Error::Degenerate { t: t + dt, det, seed: coords(&state.x, d) })?;
    Ok(PointState { x: fx, jac, hess, det, inv })
}

/// `G = D sigma sigma` and its first two derivatives.
fn milstein_drift(j: &ChannelJet, d: usize) -> (Point, SymMatrix, [SymMatrix; 3]) {
    let s = j.value;
    let mut g = Point::zeros();
    let mut dg = SymMatrix::zeros();
    let mut d2g = [SymMatrix::zeros(); 3];
    for h in 0..d {
        for p in 0..d {
            g[h] += j.jac[(h, p)] * s[p];
        }
        for i in 0..d {
            let mut acc = 0.0;
            for p in 0..d {
                acc += j.hess[h][(p, i)] * s[p] + j.jac[(h, p)] * j.jac[(p, i)];
            }
            dg[(h, i)] = acc;
            for k in 0..d {
                let mut acc = 0.0;
                for p in 0..d {
                    acc += j.third[h][p][(i, k)] * s[p]
                        + j.hess[h][(p, i)] * j.jac[(p, k)]
                        + j.hess[h][(p, k)] * j.jac[(p, i)]
                        + j.jac[(h, p)] * j.hess[p][(i, k)];
                }
                d2g[h][(i, k)] = acc;
            }
        }
    }
    (g, dg, d2g)
}

/// Simulated flow from the seeds of a grid, started at the first knot of the path.
#[derive(Clone)]
pub struct FlowState {
    sigma: Arc<dyn SigmaField>,
    scheme: Scheme,
    path: BrownianPath,
    seeds: SpaceGrid,
    /// `[knot][seed]`
    states: Vec<PointState>,
}

impl std::fmt::Debug for FlowState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FlowState")
            .field("tau", &self.path.t0())
            .field("steps", &self.path.steps())
            .field("seeds", &self.seeds.len())
            .finish()
    }
}

/// Simulates the flow and its derivatives from every seed over the whole path.
pub fn simulate_flow(sigma: Arc<dyn SigmaField>, path: BrownianPath, seeds: SpaceGrid, scheme: Scheme) -> Result<FlowState> {
    if seeds.dim() != sigma.dim() {
        return Err(Error::Domain("seed grid dimension differs from sigma".into()));
    }
    if path.channels() != sigma.channels() {
        return Err(Error::Domain(format!(
            "path has {} channels, sigma has {}",
            path.channels(),
            sigma.channels()
        )));
    }
    let ns = seeds.len();
    let mut states = Vec::with_capacity((path.steps() + 1) * ns);
    states.extend(seeds.nodes().map(|y| PointState::start(&y)));
    for n in 0..path.steps() {
        let t = path.time(n);
        let dw = path.increment(n);
        for i in 0..ns {
            let next = step(sigma.as_ref(), scheme, t, path.dt(), dw, &states[n * ns + i])?;
            states.push(next);
        }
    }
    Ok(FlowState { sigma, scheme, path, seeds, states })
}

impl FlowState {
    pub fn tau(&self) -> f64 {
        self.path.t0()
    }

    pub fn path(&self) -> &BrownianPath {
        &self.path
    }

    pub fn sigma(&self) -> &Arc<dyn SigmaField> {
        &self.sigma
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn seeds(&self) -> &SpaceGrid {
        &self.seeds
    }

    pub fn dim(&self) -> usize {
        self.seeds.dim()
    }

    pub fn knots(&self) -> usize {
        self.path.steps() + 1
    }

    pub fn time(&self, n: usize) -> f64 {
        self.path.time(n)
    }

    /// States of all seeds at knot `n`.
    pub fn states_at(&self, n: usize) -> &[PointState] {
        let ns = self.seeds.len();
        &self.states[n * ns..(n + 1) * ns]
    }

    /// Re-simulates the flow from an arbitrary starting point up to knot `n`.
    pub fn state_from(&self, y: &Point, n: usize) -> Result<PointState> {
        let mut st = PointState::start(y);
        for k in 0..n {
            st = step(self.sigma.as_ref(), self.scheme, self.path.time(k), self.path.dt(), self.path.increment(k), &st)?;
        }
        Ok(st)
    }

    /// Whole trajectory from `y`, one state per knot.
    pub fn trajectory(&self, y: &Point) -> Result<Vec<PointState>> {
        let mut out = Vec::with_capacity(self.knots());
        let mut st = PointState::start(y);
        out.push(st);
        for k in 0..self.path.steps() {
            st = step(self.sigma.as_ref(), self.scheme, self.path.time(k), self.path.dt(), self.path.increment(k), &st)?;
            out.push(st);
        }
        Ok(out)
    }

    /// Writes one row per seed and knot: `path,t,x..,X..,J..,det`.
    pub fn write_csv(&self, path_id: u64, out: &mut impl Write) -> Result<()> {
        let d = self.dim();
        for n in 0..self.knots() {
            let t = self.time(n);
            for (i, st) in self.states_at(n).iter().enumerate() {
                let y = self.seeds.node(i);
                let mut row = vec![path_id.to_string(), format!("{t}")];
                row.extend((0..d).map(|a| format!("{}", y[a])));
                row.extend((0..d).map(|a| format!("{:e}", st.x[a])));
                for a in 0..d {
                    for b in 0..d {
                        row.push(format!("{:e}", st.jac[(a, b)]));
                    }
                }
                row.push(format!("{:e}", st.det));
                writeln!(out, "{}", row.join(","))?;
            }
        }
        Ok(())
    }

    pub fn csv_header(&self) -> String {
        let d = self.dim();
        let mut cols = vec!["path".to_string(), "t".to_string()];
        cols.extend((0..d).map(|a| format!("x{a}")));
        cols.extend((0..d).map(|a| format!("X{a}")));
        for a in 0..d {
            for b in 0..d {
                cols.push(format!("J{a}{b}"));
            }
        }
        cols.push("det".into());
        cols.join(",")
    }
}

/// Solves `x_t(y) = x` for `y` at knot `n`. The start comes from inverse
/// interpolation on the seed images; Newton steps re-simulate the flow.
pub fn invert_flow(state: &FlowState, n: usize, x: &Point) -> Result<(Point, PointState)> {
    if n >= state.knots() {
        return Err(Error::Domain(format!("knot {n} beyond the simulated path")));
    }
    let d = state.dim();
    let images = state.states_at(n);
    let seeds = state.seeds();
    let mut y = initial_guess(seeds, images, x, d)?;
    let target = 1e-12 * (1.0 + norm(x, d));
    let accept = 1e-8 * (1.0 + norm(x, d));
    let mut best: Option<(f64, Point, PointState)> = None;
    for _ in 0..50 {
        let st = state.state_from(&y, n)?;
        let r = st.x - x;
        let res = norm(&r, d);
        if best.as_ref().is_none_or(|(b, _, _)| res < *b) {
            best = Some((res, y, st));
        }
        if res <= target {
            break;
        }
        let dy = st.inv * r;
        y -= dy;
        if norm(&dy, d) <= 1e-15 * (1.0 + norm(&y, d)) {
            break;
        }
    }
    let (res, y, st) = best.expect("at least one iteration");
    if res > accept {
        return Err(Error::Convergence { what: "flow inversion", iterations: 50, defect: res });
    }
    Ok((y, st))
}

fn initial_guess(seeds: &SpaceGrid, images: &[PointState], x: &Point, d: usize) -> Result<Point> {
    if d == 1 {
        let (first, last) = (images[0].x[0], images[images.len() - 1].x[0]);
        if x[0] < first || x[0] > last {
            return Err(Error::Extrapolation(format!(
                "x = {} lies outside the flow image [{first}, {last}] of the seed grid",
                x[0]
            )));
        }
        let k = images.partition_point(|s| s.x[0] <= x[0]).clamp(1, images.len() - 1);
        let (a, b) = (images[k - 1].x[0], images[k].x[0]);
        let (ya, yb) = (seeds.node(k - 1)[0], seeds.node(k)[0]);
        let r = if b > a { (x[0] - a) / (b - a) } else { 0.0 };
        let mut y = Point::zeros();
        y[0] = ya + r * (yb - ya);
        return Ok(y);
    }
    for a in 0..d {
        let lo = images.iter().map(|s| s.x[a]).fold(f64::INFINITY, f64::min);
        let hi = images.iter().map(|s| s.x[a]).fold(f64::NEG_INFINITY, f64::max);
        if x[a] < lo || x[a] > hi {
            return Err(Error::Extrapolation(format!(
                "coordinate {a} of x = {} lies outside the flow image [{lo}, {hi}]",
                x[a]
            )));
        }
    }
    let (i, st) = images
        .iter()
        .enumerate()
        .min_by(|(_, p), (_, q)| norm(&(p.x - x), d).total_cmp(&norm(&(q.x - x), d)))
        .expect("non-empty seed grid");
    Ok(seeds.node(i) + st.inv * (x - st.x))
}

/// Comparison of the simulated Jacobian determinant with its stochastic exponential.
#[derive(Debug, Clone, Serialize)]
pub struct DeterminantReport {
    pub min_det: f64,
    pub max_det: f64,
    /// Largest `|det / exp(E) - 1|` with the Itô-corrected exponent
    /// `E = -int tr(D sigma^k) dW^k - 1/2 int tr((D sigma^k)^2) dt`.
    pub max_deviation_ito: f64,
    /// Same with the correction term entering with a plus sign.
    pub max_deviation_plus: f64,
    /// Mean of `det / exp(E)` over the seeds for each convention.
    pub mean_ratio_ito: f64,
    pub mean_ratio_plus: f64,
}

/// Checks the final-time determinant of every seed against the exponential formula.
pub fn flow_determinant_check(state: &FlowState) -> Result<DeterminantReport> {
    let d = state.dim();
    let m = state.sigma.channels();
    let path = state.path();
    let ns = state.seeds().len();
    let last = state.knots() - 1;
    let mut rep = DeterminantReport {
        min_det: f64::INFINITY,
        max_det: 0.0,
        max_deviation_ito: 0.0,
        max_deviation_plus: 0.0,
        mean_ratio_ito: 0.0,
        mean_ratio_plus: 0.0,
    };
    for i in 0..ns {
        let mut stoch = 0.0;
        let mut corr = 0.0;
        for n in 0..last {
            let x = state.states_at(n)[i].x;
            let t = path.time(n);
            for k in 0..m {
                let j = state.sigma.jet(t, &x, k);
                let mut tr = 0.0;
                let mut tr2 = 0.0;
                for a in 0..d {
                    tr += j.jac[(a, a)];
                    for b in 0..d {
                        tr2 += j.jac[(a, b)] * j.jac[(b, a)];
                    }
                }
                stoch -= tr * path.increment(n)[k];
                corr += 0.5 * tr2 * path.dt();
            }
        }
        let det = state.states_at(last)[i].det;
        rep.min_det = rep.min_det.min(det);
        rep.max_det = rep.max_det.max(det);
        let ito = det / (stoch - corr).exp();
        let plus = det / (stoch + corr).exp();
        rep.max_deviation_ito = rep.max_deviation_ito.max((ito - 1.0).abs());
        rep.max_deviation_plus = rep.max_deviation_plus.max((plus - 1.0).abs());
        rep.mean_ratio_ito += ito / ns as f64;
        rep.mean_ratio_plus += plus / ns as f64;
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{AffineSigma, ConstantSigma, GaussianBumpSigma};
    use crate::linalg::{noise_matrix, point};

    #[test]
    fn constant_sigma_shifts_by_the_path() {
        let sigma = Arc::new(ConstantSigma::new(1, 1, noise_matrix(1, 1, &[0.6])));
        let path = BrownianPath::generate(3, 0, 0.0, 1.0, 32, 1).unwrap();
        let w = path.value(32)[0];
        let seeds = SpaceGrid::cube(1, -2.0, 2.0, 9).unwrap();
        let fs = simulate_flow(sigma, path, seeds.clone(), Scheme::EulerMaruyama).unwrap();
        for (i, st) in fs.states_at(32).iter().enumerate() {
            assert!((st.x[0] - (seeds.node(i)[0] - 0.6 * w)).abs() < 1e-14);
            assert_eq!(st.jac[(0, 0)], 1.0);
        }
    }

    #[test]
    fn geometric_flow_with_fixed_path() {
        // sigma(x) = x / 2, one step of size 1 with W = 0.2 on a fine mesh.
        let steps = 1000;
        let dw = 0.2 / steps as f64;
        let incs = vec![[dw, 0.0, 0.0, 0.0]; steps];
        let path = BrownianPath::from_increments(0.0, 1.0 / steps as f64, 1, incs).unwrap();
        let sigma = Arc::new(AffineSigma::scalar_linear(0.5));
        let seeds = SpaceGrid::cube(1, 0.5, 1.5, 3).unwrap();
        let fs = simulate_flow(sigma, path, seeds, Scheme::Milstein).unwrap();
        let x = fs.states_at(steps)[1].x[0];
        // Smooth increments carry no quadratic variation, so the -dt/2 Milstein
        // term alone produces the -t/8 drift: x exp(-W/2 - t/8).
        let expect = (-0.1f64 - 0.125).exp();
        assert!((x - expect).abs() < 1e-4, "x {x}");
    }

    #[test]
    fn jacobian_and_hessian_match_finite_differences() {
        let sigma = Arc::new(GaussianBumpSigma::new(2, 1, noise_matrix(2, 1, &[0.4, -0.3]), point(&[0.1, 0.0]), 0.7));
        let path = BrownianPath::generate(11, 0, 0.0, 1.0, 64, 1).unwrap();
        let seeds = SpaceGrid::cube(2, -1.0, 1.0, 3).unwrap();
        for scheme in [Scheme::EulerMaruyama, Scheme::Milstein] {
            let fs = simulate_flow(sigma.clone(), path.clone(), seeds.clone(), scheme).unwrap();
            let y = point(&[0.3, -0.2]);
            let st = fs.state_from(&y, 64).unwrap();
            let h = 1e-5;
            for i in 0..2 {
                let mut e = Point::zeros();
                e[i] = h;
                let p = fs.state_from(&(y + e), 64).unwrap();
                let m = fs.state_from(&(y - e), 64).unwrap();
                for a in 0..2 {
                    assert!(((p.x[a] - m.x[a]) / (2.0 * h) - st.jac[(a, i)]).abs() < 1e-8);
                    for b in 0..2 {
                        let fd = (p.jac[(a, b)] - m.jac[(a, b)]) / (2.0 * h);
                        assert!((fd - st.hess[a][(b, i)]).abs() < 1e-6, "{scheme:?}");
                    }
                }
            }
            assert!((st.inv * st.jac - SymMatrix::identity()).amax() < 1e-12);
        }
    }

    #[test]
    fn inversion_recovers_the_seed() {
        let sigma = Arc::new(GaussianBumpSigma::new(1, 1, noise_matrix(1, 1, &[0.5]), Point::zeros(), 1.0));
        let path = BrownianPath::generate(5, 2, 0.0, 1.0, 64, 1).unwrap();
        let seeds = SpaceGrid::cube(1, -6.0, 6.0, 49).unwrap();
        let fs = simulate_flow(sigma, path, seeds, Scheme::EulerMaruyama).unwrap();
        let y0 = point(&[0.37]);
        let x = fs.state_from(&y0, 40).unwrap().x;
        let (y, st) = invert_flow(&fs, 40, &x).unwrap();
        assert!((y[0] - 0.37).abs() < 1e-10);
        assert!((st.x - x).norm() < 1e-10);
        assert!(matches!(invert_flow(&fs, 40, &point(&[50.0])), Err(Error::Extrapolation(_))));
    }

    #[test]
    fn milstein_rejects_several_channels() {
        let sigma = Arc::new(ConstantSigma::new(1, 2, noise_matrix(1, 2, &[0.1, 0.2])));
        let path = BrownianPath::generate(1, 0, 0.0, 1.0, 4, 2).unwrap();
        let seeds = SpaceGrid::cube(1, -1.0, 1.0, 3).unwrap();
        assert!(matches!(simulate_flow(sigma, path, seeds, Scheme::Milstein), Err(Error::Configuration(_))));
    }
}
