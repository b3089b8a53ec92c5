use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::gauss_kernel::log_gamma_lambda;
use crate::linalg::Point;

use super::table::ParametrixTable;

/// Bound `M_k` on the `k`-th iterated kernel:
/// `|(HZ)_k(t, x)| <= M_k (t - tau)^(alpha k / 2 - 1) Gamma^lambda(t - tau, x - xi)`
/// with `M_k = C^k Gamma(alpha/2)^k / Gamma(alpha k / 2)`.
///
/// Computed in log space; returns 0 once the value underflows.
pub fn series_term_bound(k: usize, alpha: f64, c: f64) -> f64 {
    assert!(k >= 1, "series terms start at k = 1");
    assert!(alpha > 0.0 && alpha <= 1.0, "alpha must lie in (0, 1]");
    if c == 0.0 {
        return 0.0;
    }
    let kf = k as f64;
    let log = kf * c.ln() + kf * ln_gamma(alpha / 2.0) - ln_gamma(alpha * kf / 2.0);
    let v = log.exp();
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SeriesTerm {
    pub k: usize,
    pub bound: f64,
    /// `M_k T^(alpha (k - 1) / 2)`, the weight of term `k` relative to the first at horizon `T`.
    pub weighted: f64,
}

/// First `kmax` bounds together with their horizon-weighted sizes, whose sum
/// dominates the density series on `(tau, tau + horizon]`.
pub fn series_terms(kmax: usize, alpha: f64, c: f64, horizon: f64) -> Vec<SeriesTerm> {
    (1..=kmax)
        .map(|k| {
            let bound = series_term_bound(k, alpha, c);
            let weighted = bound * horizon.powf(alpha * (k as f64 - 1.0) / 2.0);
            SeriesTerm { k, bound, weighted }
        })
        .collect()
}

/// `sup |v| dt^(-power) / Gamma^lambda(dt, w)` over samples `(dt, w, v)`.
pub fn fit_envelope(
    samples: impl IntoIterator<Item = (f64, Point, f64)>,
    lambda: f64,
    dim: usize,
    power: f64,
) -> f64 {
    let mut best = 0.0f64;
    for (dt, w, v) in samples {
        if v == 0.0 {
            continue;
        }
        let log = v.abs().ln() - power * dt.ln() - log_gamma_lambda(lambda, dim, dt, &w);
        best = best.max(log.exp());
    }
    best
}

/// Constant `C` in `|v| <= C dt^(alpha/2 - 1) Gamma^lambda(dt, w)` for kernel samples.
pub fn fit_kernel_constant(samples: impl IntoIterator<Item = (f64, Point, f64)>, alpha: f64, lambda: f64, dim: usize) -> f64 {
    fit_envelope(samples, lambda, dim, 0.5 * alpha - 1.0)
}

/// Density envelope constant of a solved table, restricted to `|z| <= z_fit`.
pub fn fit_density_constant(table: &ParametrixTable, z_fit: f64) -> f64 {
    let pole = table.pole();
    let d = table.dim();
    let samples = table
        .density_nodes()
        .filter(|(_, _, z, _)| crate::linalg::norm(z, d) <= z_fit)
        .map(|(s, y, _, v)| (s - pole.tau, y - pole.xi, v));
    let f = table.field();
    fit_kernel_constant(samples, f.alpha(), f.lambda(), d)
}

/// Constant `C` in `|Gamma - Z| <= C dt^(alpha/2) Gamma^lambda(dt, w)` over samples `(dt, w, Gamma - Z)`.
pub fn fit_correction_constant(samples: impl IntoIterator<Item = (f64, Point, f64)>, alpha: f64, lambda: f64, dim: usize) -> f64 {
    fit_envelope(samples, lambda, dim, 0.5 * alpha)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fourth_term_at_half_holder_exponent() {
        // Gamma(1/4)^4 / Gamma(1)
        let g = statrs::function::gamma::gamma(0.25);
        let m4 = series_term_bound(4, 0.5, 1.0);
        assert!((m4 - g.powi(4)).abs() < 1e-9 * m4);
        assert!((m4 - 172.79).abs() < 0.01);
    }

    #[test]
    fn terms_eventually_decay() {
        let terms = series_terms(5000, 0.5, 1.0, 1.0);
        assert!(terms.last().unwrap().bound < 1e-10);
        assert!(terms.iter().all(|t| t.bound.is_finite()));
    }
}
