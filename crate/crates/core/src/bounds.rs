//! Two-sided Gaussian bounds for fundamental solutions.
//!
//! Upper constants are fitted on sample grids. The lower bound chains the
//! near-diagonal estimate `Gamma >= Gamma^{1/lambda} / (2 lambda^d)` (valid
//! for links shorter than `T_lambda`) through `m + 1` links of the
//! Chapman-Kolmogorov identity.

use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::gauss_kernel::log_gamma_lambda;
use crate::linalg::{coords, norm, Point};

/// Radius factor below which `Gamma^lambda(t, x) <= Gamma^{1/lambda}(t, x)`:
/// `sqrt(lambda d ln(lambda) / (lambda^2 - 1))`.
pub fn rho_lambda(lambda: f64, dim: usize) -> Result<f64> {
    if !(lambda > 1.0) || dim == 0 {
        return Err(Error::Domain(format!("need lambda > 1 and d >= 1, got lambda={lambda}, d={dim}")));
    }
    Ok((lambda * dim as f64 * lambda.ln() / (lambda * lambda - 1.0)).sqrt())
}

/// The exact threshold of the comparison, `sqrt(2) rho_lambda`.
pub fn sharp_rho_lambda(lambda: f64, dim: usize) -> Result<f64> {
    Ok(std::f64::consts::SQRT_2 * rho_lambda(lambda, dim)?)
}

/// Volume of the unit ball in `R^d`.
pub fn unit_ball_volume(dim: usize) -> f64 {
    let h = 0.5 * dim as f64;
    (h * std::f64::consts::PI.ln() - ln_gamma(h + 1.0)).exp()
}

/// Short-time scale `T_lambda = (2 C lambda^d)^(-2/alpha) min T`.
pub fn t_lambda(c_fit: f64, lambda: f64, alpha: f64, dim: usize, horizon: f64) -> f64 {
    if c_fit <= 0.0 {
        return horizon;
    }
    (2.0 * c_fit * lambda.powi(dim as i32)).powf(-2.0 / alpha).min(horizon)
}

/// Chains longer than this are described by their parameters only; the
/// links are equally spaced, so the lists add nothing but memory.
pub const MAX_LISTED_LINKS: usize = 1000;

/// Chain of points and times linking the pole to the evaluation point.
#[derive(Debug, Clone, Serialize)]
pub struct ChainSpec {
    pub m: usize,
    /// Link times and points, empty when `m` exceeds [`MAX_LISTED_LINKS`].
    pub times: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    pub r: f64,
    pub rho: f64,
    pub t_lambda: f64,
    pub omega: f64,
    /// `2 r + |x - xi| / (m + 1)`
    pub step: f64,
    /// `rho sqrt((t - tau) / (m + 1))`
    pub step_limit: f64,
    /// `(t - tau) / (m + 1)`
    pub link: f64,
}

impl ChainSpec {
    /// Link length within `T_lambda` and the step bound, with a relative slack for rounding.
    pub fn inequalities_hold(&self) -> bool {
        self.r > 0.0 && self.link <= self.t_lambda * (1.0 + 1e-12) && self.step <= self.step_limit * (1.0 + 1e-12)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn chain_parameters(
    t: f64,
    tau: f64,
    x: &Point,
    xi: &Point,
    lambda: f64,
    alpha: f64,
    dim: usize,
    horizon: f64,
    c_fit: f64,
) -> Result<ChainSpec> {
    if !(t > tau) || t - tau > horizon * (1.0 + 1e-12) {
        return Err(Error::Domain(format!("need 0 < t - tau <= T, got t={t}, tau={tau}, T={horizon}")));
    }
    let rho = rho_lambda(lambda, dim)?;
    let tl = t_lambda(c_fit, lambda, alpha, dim, horizon);
    let dt = t - tau;
    let dist = norm(&(x - xi), dim);
    let lead = (4.0 * dist * dist / (rho * rho * dt)).max(horizon / tl);
    // Smallest natural number strictly greater than `lead`.
    let m = lead.floor() as usize + 1;
    let k = (m + 1) as f64;
    let listed = if m <= MAX_LISTED_LINKS { m + 2 } else { 0 };
    let times = (0..listed).map(|i| tau + i as f64 * dt / k).collect();
    let points = (0..listed).map(|i| coords(&(xi + (x - xi) * (i as f64 / k)), dim)).collect();
    let r = 0.25 * rho * (dt / k).sqrt();
    Ok(ChainSpec {
        m,
        times,
        points,
        r,
        rho,
        t_lambda: tl,
        omega: unit_ball_volume(dim),
        step: 2.0 * r + dist / k,
        step_limit: rho * (dt / k).sqrt(),
        link: dt / k,
    })
}

/// Natural logarithm of the chained bound
/// `(2 lambda^d)^-(m+1) (omega r^d)^m (lambda (m+1) / (2 pi dt))^(d(m+1)/2) exp(-lambda rho^2 (m+1) / 2)`.
pub fn log_chain_bound(spec: &ChainSpec, lambda: f64, dim: usize, dt: f64) -> f64 {
    let d = dim as f64;
    let m = spec.m as f64;
    let k = m + 1.0;
    -k * (2.0 * lambda.powi(dim as i32)).ln() + m * (spec.omega.ln() + d * spec.r.ln())
        + 0.5 * d * k * (lambda * k / (2.0 * std::f64::consts::PI * dt)).ln()
        - 0.5 * lambda * spec.rho * spec.rho * k
}

/// A certified lower bound with everything needed to audit it.
#[derive(Debug, Clone, Serialize)]
pub struct Certificate {
    pub t: f64,
    pub tau: f64,
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub lambda: f64,
    pub alpha: f64,
    pub horizon: f64,
    /// Fitted constant of `|Gamma - Z| <= C (t - tau)^(alpha/2) Gamma^lambda`.
    pub c_fit: f64,
    pub chain: ChainSpec,
    pub sharp_rho: f64,
    pub bound: f64,
    pub log_bound: f64,
    /// Kernel value at the query point when supplied.
    pub kernel: Option<f64>,
    /// `bound <= kernel`, when the kernel is known.
    pub holds: Option<bool>,
}

/// Computes the chained lower bound at `(t, x; tau, xi)` and, when `kernel`
/// is given, records whether it lies below the kernel.
///
/// The bound relies on the near-diagonal estimate at the link scale; a
/// non-finite or negative fitted constant, or a chain violating its own
/// inequalities, makes certification unavailable.
#[allow(clippy::too_many_arguments)]
pub fn lower_bound_certify(
    t: f64,
    tau: f64,
    x: &Point,
    xi: &Point,
    lambda: f64,
    alpha: f64,
    dim: usize,
    horizon: f64,
    c_fit: f64,
    kernel: Option<f64>,
) -> Result<Certificate> {
    if !c_fit.is_finite() || c_fit < 0.0 {
        return Err(Error::Configuration(format!("certification unavailable: fitted constant {c_fit}")));
    }
    let chain = chain_parameters(t, tau, x, xi, lambda, alpha, dim, horizon, c_fit)?;
    if !chain.inequalities_hold() {
        return Err(Error::Configuration("certification unavailable: chain violates the link conditions".into()));
    }
    let log_bound = log_chain_bound(&chain, lambda, dim, t - tau);
    let bound = log_bound.exp();
    Ok(Certificate {
        t,
        tau,
        x: coords(x, dim),
        xi: coords(xi, dim),
        lambda,
        alpha,
        horizon,
        c_fit,
        sharp_rho: sharp_rho_lambda(lambda, dim)?,
        chain,
        bound,
        log_bound,
        kernel,
        holds: kernel.map(|k| bound <= k),
    })
}

/// Kernel sample `(t - tau, displacement, value)`.
pub type KernelSample = (f64, Point, f64);

#[derive(Debug, Clone)]
pub enum SandwichMode {
    /// `C1^-1 Gamma^{C2} <= kernel <= C1 Gamma^{upper}`; `C2` is chosen from `lower_grid`.
    Independent { upper: f64, lower_grid: Vec<f64> },
    /// `mu2^-1 Gamma^{1/mu1} <= kernel <= mu2 Gamma^{mu1}`; `mu1` is chosen from `grid`.
    Tied { grid: Vec<f64> },
}

/// Constants of a two-sided Gaussian comparison and the samples attaining them.
#[derive(Debug, Clone, Serialize)]
pub struct SandwichFit {
    /// `C1` or `mu2`.
    pub scale: f64,
    /// `C2` or `mu1`.
    pub exponent: f64,
    pub upper_constant: f64,
    pub lower_constant: f64,
    /// `(t - tau, displacement)` where each constant is attained.
    pub upper_argmax: (f64, Vec<f64>),
    pub lower_argmax: (f64, Vec<f64>),
}

struct Extreme {
    log: f64,
    at: usize,
}

/// `max log(kernel / Gamma^{e})` and `max log(Gamma^{f} / kernel)`.
fn log_ratios(samples: &[KernelSample], dim: usize, exponent: f64, upper: bool) -> Extreme {
    let mut best = Extreme { log: f64::NEG_INFINITY, at: 0 };
    for (i, (dt, w, v)) in samples.iter().enumerate() {
        let g = log_gamma_lambda(exponent, dim, *dt, w);
        let l = if upper { v.ln() - g } else { g - v.ln() };
        if l > best.log {
            best = Extreme { log: l, at: i };
        }
    }
    best
}

/// Smallest constants on the sample set for the requested comparison.
pub fn sandwich_fit(samples: &[KernelSample], dim: usize, mode: &SandwichMode) -> Result<SandwichFit> {
    if samples.is_empty() {
        return Err(Error::Domain("no kernel samples to fit".into()));
    }
    if let Some((dt, w, v)) = samples.iter().find(|(_, _, v)| !(*v > 0.0)) {
        return Err(Error::Domain(format!(
            "kernel value {v} is not positive at t - tau = {dt}, displacement {:?}",
            coords(w, dim)
        )));
    }
    let point = |e: &Extreme| (samples[e.at].0, coords(&samples[e.at].1, dim));
    match mode {
        SandwichMode::Independent { upper, lower_grid } => {
            if lower_grid.is_empty() || lower_grid.iter().any(|m| !(*m > 0.0)) {
                return Err(Error::Domain("lower exponents must be positive".into()));
            }
            let up = log_ratios(samples, dim, *upper, true);
            let mut best: Option<(f64, f64, Extreme)> = None;
            for &mu in lower_grid {
                let lo = log_ratios(samples, dim, mu, false);
                let scale = up.log.max(lo.log);
                // Ties go to the larger exponent, the closer comparison.
                if best.as_ref().is_none_or(|(s, m, _)| scale < *s - 1e-12 || (scale <= *s + 1e-12 && mu > *m)) {
                    best = Some((scale, mu, lo));
                }
            }
            let (scale, mu, lo) = best.expect("non-empty grid");
            Ok(SandwichFit {
                scale: scale.exp(),
                exponent: mu,
                upper_constant: up.log.exp(),
                lower_constant: lo.log.exp(),
                upper_argmax: point(&up),
                lower_argmax: point(&lo),
            })
        }
        SandwichMode::Tied { grid } => {
            if grid.is_empty() || grid.iter().any(|m| !(*m > 0.0)) {
                return Err(Error::Domain("comparison exponents must be positive".into()));
            }
            let mut best: Option<(f64, f64, Extreme, Extreme)> = None;
            for &mu in grid {
                let up = log_ratios(samples, dim, mu, true);
                let lo = log_ratios(samples, dim, 1.0 / mu, false);
                let scale = up.log.max(lo.log);
                if best.as_ref().is_none_or(|(s, _, _, _)| scale < *s) {
                    best = Some((scale, mu, up, lo));
                }
            }
            let (scale, mu, up, lo) = best.expect("non-empty grid");
            Ok(SandwichFit {
                scale: scale.exp(),
                exponent: mu,
                upper_constant: up.log.exp(),
                lower_constant: lo.log.exp(),
                upper_argmax: point(&up),
                lower_argmax: point(&lo),
            })
        }
    }
}

/// `lo, lo * q, lo * q^2, ...` up to `hi`, both included.
pub fn geometric_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![hi];
    }
    let q = (hi / lo).powf(1.0 / (n - 1) as f64);
    (0..n).map(|i| if i == n - 1 { hi } else { lo * q.powi(i as i32) }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gauss_kernel::gamma_lambda;
    use crate::linalg::point;

    #[test]
    fn rho_reference_values() {
        let r = rho_lambda(2.0, 1).unwrap();
        assert!((r - (2.0 * 2f64.ln() / 3.0).sqrt()).abs() < 1e-15);
        assert!((r - 0.67978).abs() < 1e-5);
        let near = rho_lambda(1.0 + 1e-7, 1).unwrap();
        assert!((near - 0.5f64.sqrt()).abs() < 1e-6);
        assert!(rho_lambda(1.0, 1).is_err());
    }

    #[test]
    fn ball_volumes() {
        assert!((unit_ball_volume(1) - 2.0).abs() < 1e-12);
        assert!((unit_ball_volume(2) - std::f64::consts::PI).abs() < 1e-12);
        assert!((unit_ball_volume(3) - 4.0 * std::f64::consts::PI / 3.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_chain_has_two_links_inside() {
        // C chosen so that T_lambda equals T = 1.
        let lambda: f64 = 2.0;
        let c = 0.5 / lambda;
        let spec = chain_parameters(1.0, 0.0, &point(&[0.3]), &point(&[0.3]), lambda, 0.5, 1, 1.0, c).unwrap();
        assert!((spec.t_lambda - 1.0).abs() < 1e-15);
        assert_eq!(spec.m, 2);
        assert_eq!(spec.times.first(), Some(&0.0));
        assert_eq!(spec.times.last(), Some(&1.0));
        assert!(spec.inequalities_hold());
    }

    #[test]
    fn heat_kernel_self_comparison() {
        let samples: Vec<KernelSample> = [0.1, 0.5, 1.0]
            .iter()
            .flat_map(|&t| (-10..=10).map(move |i| (t, point(&[0.3 * i as f64]), gamma_lambda(1.0, 1, t, &point(&[0.3 * i as f64])))))
            .collect();
        let grid = geometric_grid(0.25, 1.0, 9);
        let fit = sandwich_fit(&samples, 1, &SandwichMode::Independent { upper: 1.0, lower_grid: grid }).unwrap();
        assert!((fit.scale - 1.0).abs() < 1e-6);
        assert!((fit.exponent - 1.0).abs() < 1e-12);
        let bad = vec![(0.5, point(&[0.0]), 0.0)];
        assert!(sandwich_fit(&bad, 1, &SandwichMode::Tied { grid: vec![1.0] }).is_err());
    }
}
