//! Time and space quadrature.
//!
//! Time integrals near a pole carry weakly singular factors `(s - tau)^(-gamma)`.
//! They are handled by a power substitution on the end panels, which turns the
//! singular integrand into a smooth one, followed by Gauss-Legendre on each
//! panel between declared time breakpoints.

mod interp;
mod space;

pub use interp::{barycentric_weights, lagrange_coefficients, UniformStencil};
pub use space::{convolve_gaussian_space, Convolution, SpaceGrid};

use crate::error::{Error, Result};

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "need at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Quadrature nodes `s` and weights `w` approximating an integral over an interval.
#[derive(Debug, Clone, Default)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn apply(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&s, &w)| w * f(s))
            .sum()
    }
}

/// Gauss-Legendre rule on `[a, b]`.
pub fn gauss_rule(a: f64, b: f64, n: usize) -> Rule {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    Rule {
        nodes: x.iter().map(|xi| a + half * (xi + 1.0)).collect(),
        weights: w.iter().map(|wi| half * wi).collect(),
    }
}

/// Rule on `[a, b]` for integrands behaving like `(s-a)^(-left)` near `a` and
/// `(b-s)^(-right)` near `b`, exact for those power singularities times smooth
/// factors in the limit of many nodes. Panels are split at `breakpoints`.
///
/// The weights do not include the singular factors; the caller evaluates the
/// full integrand at the nodes.
pub fn singular_rule(a: f64, b: f64, left: f64, right: f64, breakpoints: &[f64], n: usize) -> Rule {
    let mut cuts = vec![a];
    for &bp in breakpoints {
        let margin = 1e-12 * (b - a).abs().max(1.0);
        if bp > a + margin && bp < b - margin {
            cuts.push(bp);
        }
    }
    cuts.push(b);
    cuts.sort_by(|x, y| x.total_cmp(y));

    let mut rule = Rule::default();
    let panels = cuts.len() - 1;
    for p in 0..panels {
        let (lo, hi) = (cuts[p], cuts[p + 1]);
        let sing_lo = if p == 0 { left } else { 0.0 };
        let sing_hi = if p == panels - 1 { right } else { 0.0 };
        if sing_lo > 0.0 && sing_hi > 0.0 {
            let mid = 0.5 * (lo + hi);
            push_graded(&mut rule, lo, mid, sing_lo, n, false);
            push_graded(&mut rule, mid, hi, sing_hi, n, true);
        } else if sing_hi > 0.0 {
            push_graded(&mut rule, lo, hi, sing_hi, n, true);
        } else {
            push_graded(&mut rule, lo, hi, sing_lo, n, false);
        }
    }
    rule
}

/// Substitution `s = lo + (hi-lo) u^p` with `p = 1/(1-gamma)` (mirrored when
/// `at_hi`), Gauss-Legendre in `u`.
fn push_graded(rule: &mut Rule, lo: f64, hi: f64, gamma: f64, n: usize, at_hi: bool) {
    let (x, w) = gauss_legendre(n);
    let len = hi - lo;
    let p = 1.0 / (1.0 - gamma);
    for (xi, wi) in x.iter().zip(&w) {
        let u = 0.5 * (xi + 1.0);
        let du = 0.5 * wi;
        let off = len * u.powf(p);
        let jac = len * p * u.powf(p - 1.0);
        let s = if at_hi { hi - off } else { lo + off };
        rule.nodes.push(s);
        rule.weights.push(jac * du);
    }
}

/// Settings for adaptive time integration.
#[derive(Debug, Clone)]
pub struct TimeQuadrature {
    /// Points where the integrand may be discontinuous.
    pub breakpoints: Vec<f64>,
    /// Starting number of nodes per panel.
    pub nodes: usize,
    /// Largest number of nodes per panel tried before giving up.
    pub max_nodes: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for TimeQuadrature {
    fn default() -> Self {
        Self {
            breakpoints: Vec::new(),
            nodes: 12,
            max_nodes: 192,
            rel_tol: 1e-7,
            abs_tol: 1e-300,
        }
    }
}

impl TimeQuadrature {
    pub fn with_breakpoints(breakpoints: Vec<f64>) -> Self {
        Self {
            breakpoints,
            ..Self::default()
        }
    }
}

/// Computes `int_tau^t g(s) (s - tau)^(-gamma) ds`, doubling the node count
/// until two successive values agree to the declared tolerance.
pub fn integrate_time(
    mut g: impl FnMut(f64) -> f64,
    tau: f64,
    t: f64,
    gamma: f64,
    opts: &TimeQuadrature,
) -> Result<f64> {
    if !(t > tau) {
        return Err(Error::Domain(format!("empty time interval [{tau}, {t}]")));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Domain(format!("singularity exponent {gamma} not in [0, 1)")));
    }
    let mut eval = |n: usize| {
        singular_rule(tau, t, gamma, 0.0, &opts.breakpoints, n)
            .apply(|s| g(s) * (s - tau).powf(-gamma))
    };
    let mut n = opts.nodes.max(1);
    let mut prev = eval(n);
    loop {
        let next_n = 2 * n;
        let cur = eval(next_n);
        let diff = (cur - prev).abs();
        if diff <= opts.rel_tol * cur.abs() || diff <= opts.abs_tol {
            return Ok(cur);
        }
        if next_n > opts.max_nodes {
            return Err(Error::Convergence {
                what: "time quadrature",
                iterations: next_n,
                defect: diff,
            });
        }
        n = next_n;
        prev = cur;
    }
}

/// Ordered time knots with quadrature weights covering `[start, horizon]`.
#[derive(Debug, Clone)]
pub struct TimeGrid {
    knots: Vec<f64>,
    weights: Vec<f64>,
}

impl TimeGrid {
    /// Validates strictly increasing knots, matching positive weights, and
    /// knots inside `[start, horizon]`.
    pub fn new(knots: Vec<f64>, weights: Vec<f64>, start: f64, horizon: f64) -> Result<Self> {
        if knots.len() != weights.len() || knots.is_empty() {
            return Err(Error::Domain("knots and weights must be non-empty and equal in length".into()));
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("time knots must be strictly increasing".into()));
        }
        if knots[0] < start || *knots.last().unwrap() > horizon {
            return Err(Error::Domain(format!("time knots leave [{start}, {horizon}]")));
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Domain("time weights must be positive".into()));
        }
        Ok(Self { knots, weights })
    }

    /// Uniform knots `start, start+h, ..., horizon` with trapezoid weights.
    pub fn uniform(start: f64, horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 || !(horizon > start) {
            return Err(Error::Domain("uniform grid needs steps > 0 and horizon > start".into()));
        }
        let h = (horizon - start) / steps as f64;
        let knots: Vec<f64> = (0..=steps).map(|i| start + h * i as f64).collect();
        let mut weights = vec![h; steps + 1];
        weights[0] = 0.5 * h;
        weights[steps] = 0.5 * h;
        Self::new(knots, weights, start, horizon)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_rule_integrates_polynomials_exactly() {
        for n in 1..12 {
            let (x, w) = gauss_legendre(n);
            for deg in 0..(2 * n) {
                let approx: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((approx - exact).abs() < 1e-13, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn inverse_square_root_weight_integrates_to_two() {
        let v = integrate_time(|_| 1.0, 0.0, 1.0, 0.5, &TimeQuadrature::default()).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn beta_integral_with_both_singular_ends() {
        // int_0^1 s^-0.75 (1-s)^-0.5 ds = B(0.25, 0.5)
        let rule = singular_rule(0.0, 1.0, 0.75, 0.5, &[], 16);
        let v = rule.apply(|s| s.powf(-0.75) * (1.0 - s).powf(-0.5));
        let exact = statrs::function::beta::beta(0.25, 0.5);
        assert!((v - exact).abs() < 1e-10 * exact);
    }

    #[test]
    fn breakpoints_resolve_jumps() {
        let opts = TimeQuadrature::with_breakpoints(vec![0.3]);
        let v = integrate_time(|s| if s < 0.3 { 1.0 } else { 2.0 }, 0.0, 1.0, 0.0, &opts).unwrap();
        assert!((v - 1.7).abs() < 1e-12);
    }

    #[test]
    fn empty_interval_is_rejected() {
        assert!(integrate_time(|_| 1.0, 1.0, 1.0, 0.0, &TimeQuadrature::default()).is_err());
    }

    #[test]
    fn time_grid_rejects_unordered_knots() {
        assert!(TimeGrid::new(vec![0.0, 0.5, 0.4], vec![1.0; 3], 0.0, 1.0).is_err());
        assert!(TimeGrid::uniform(0.0, 1.0, 4).is_ok());
    }
}
