//! Coefficient fields of the parabolic operator and the noise coefficient.
//!
//! The operator is `L = 1/2 a^{ij} d_ij + b^i d_i + c` with a time-dependent,
//! uniformly elliptic diffusion `a`. Fields declare their ellipticity constant
//! `lambda`, their spatial Hölder exponent `alpha`, and the times where they may
//! jump in `t`.

mod builtin;
mod sigma;

pub use builtin::{FnField, SeparableField, SpaceProfile, TimeProfile};
pub use sigma::{
    validate_sigma_decay, AffineSigma, ChannelJet, CompactBumpSigma, ConstantSigma, DecayEnvelope,
    FdSteps, GaussianBumpSigma, SigmaDecayReport, SigmaField,
};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{asymmetry, norm, sym_eigenvalues, Point, SymMatrix};
use crate::quadrature::singular_rule;

/// Coefficients of the operator at one point.
#[derive(Debug, Clone, Copy)]
pub struct Coefficients {
    pub diffusion: SymMatrix,
    pub drift: Point,
    pub potential: f64,
}

pub trait CoefficientField: Send + Sync {
    fn dim(&self) -> usize;

    /// Diffusion matrix; entries outside the active block are ignored.
    fn diffusion(&self, t: f64, x: &Point) -> SymMatrix;

    fn drift(&self, _t: f64, _x: &Point) -> Point {
        Point::zeros()
    }

    fn potential(&self, _t: f64, _x: &Point) -> f64 {
        0.0
    }

    /// Forcing term of the inhomogeneous problem.
    fn source(&self, _t: f64, _x: &Point) -> f64 {
        0.0
    }

    fn has_source(&self) -> bool {
        false
    }

    /// Declared ellipticity and boundedness constant, `lambda > 1`.
    fn lambda(&self) -> f64;

    /// Declared spatial Hölder exponent in `(0, 1]`.
    fn alpha(&self) -> f64;

    /// Times where the coefficients may jump.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }

    /// `int_s^t a_r(y) dr`.
    fn integrated_diffusion(&self, y: &Point, s: f64, t: f64) -> SymMatrix {
        let rule = singular_rule(s, t, 0.0, 0.0, &self.breakpoints(), 8);
        let mut acc = SymMatrix::zeros();
        for (r, w) in rule.nodes.iter().zip(&rule.weights) {
            acc += self.diffusion(*r, y) * *w;
        }
        acc
    }

    fn coefficients(&self, t: f64, x: &Point) -> Coefficients {
        Coefficients {
            diffusion: self.diffusion(t, x),
            drift: self.drift(t, x),
            potential: self.potential(t, x),
        }
    }

    /// True when the drift and potential vanish identically.
    fn is_driftless(&self) -> bool {
        false
    }
}

/// Extremes of the coefficients over a sample set.
#[derive(Debug, Clone, Serialize)]
pub struct EllipticityReport {
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub max_drift: f64,
    pub max_potential: f64,
    pub declared_lambda: f64,
    /// Sample `(t, x)` attaining the smallest eigenvalue.
    pub worst_sample: (f64, Vec<f64>),
}

impl EllipticityReport {
    /// Whether the declared `lambda` bounds every sampled quantity.
    pub fn holds(&self) -> bool {
        let l = self.declared_lambda;
        self.min_eigenvalue >= 1.0 / l
            && self.max_eigenvalue <= l
            && self.max_drift <= l
            && self.max_potential <= l
    }
}

/// Samples the eigenvalues of `a` and the sizes of `b`, `c`.
///
/// A non-symmetric diffusion sample is a structural error.
pub fn validate_ellipticity(
    field: &dyn CoefficientField,
    samples: &[(f64, Point)],
) -> Result<EllipticityReport> {
    if samples.is_empty() {
        return Err(Error::Domain("no samples supplied".into()));
    }
    let d = field.dim();
    let mut rep = EllipticityReport {
        min_eigenvalue: f64::INFINITY,
        max_eigenvalue: f64::NEG_INFINITY,
        max_drift: 0.0,
        max_potential: 0.0,
        declared_lambda: field.lambda(),
        worst_sample: (samples[0].0, crate::linalg::coords(&samples[0].1, d)),
    };
    for (t, x) in samples {
        let c = field.coefficients(*t, x);
        let asym = asymmetry(&c.diffusion, d);
        if asym > 1e-12 * (1.0 + c.diffusion.amax()) {
            return Err(Error::Structural(format!(
                "diffusion is not symmetric at t={t}, x={:?} (asymmetry {asym:.3e})",
                crate::linalg::coords(x, d)
            )));
        }
        let ev = sym_eigenvalues(&c.diffusion, d);
        if ev[0] < rep.min_eigenvalue {
            rep.min_eigenvalue = ev[0];
            rep.worst_sample = (*t, crate::linalg::coords(x, d));
        }
        rep.max_eigenvalue = rep.max_eigenvalue.max(ev[d - 1]);
        rep.max_drift = rep.max_drift.max(norm(&c.drift, d));
        rep.max_potential = rep.max_potential.max(c.potential.abs());
    }
    Ok(rep)
}

#[derive(Debug, Clone, Serialize)]
pub struct HolderEstimate {
    pub value: f64,
    /// Pairs dropped because the points coincide.
    pub skipped: usize,
}

/// Empirical Hölder seminorm `max |g(x) - g(y)| / |x - y|^alpha` over the pairs.
pub fn holder_seminorm(
    g: impl Fn(&Point) -> f64,
    alpha: f64,
    pairs: &[(Point, Point)],
    dim: usize,
) -> Result<HolderEstimate> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Domain(format!("Hölder exponent {alpha} not in (0, 1]")));
    }
    let mut est = HolderEstimate { value: 0.0, skipped: 0 };
    for (x, y) in pairs {
        let dist = norm(&(x - y), dim);
        if dist < 1e-14 {
            est.skipped += 1;
            continue;
        }
        est.value = est.value.max((g(x) - g(y)).abs() / dist.powf(alpha));
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::point;

    #[test]
    fn sine_modulated_diffusion_eigen_range() {
        let field = SeparableField::scalar(1.0, TimeProfile::constant(), SpaceProfile::sine(0.5, 1.0), 2.5, 0.5);
        let samples: Vec<_> = (0..=400)
            .map(|i| (0.0, point(&[-std::f64::consts::PI + i as f64 * std::f64::consts::PI / 200.0])))
            .collect();
        let rep = validate_ellipticity(&field, &samples).unwrap();
        assert!((rep.min_eigenvalue - 0.5).abs() < 1e-9);
        assert!((rep.max_eigenvalue - 1.5).abs() < 1e-9);
        assert!(rep.holds());
    }

    #[test]
    fn asymmetric_diffusion_is_structural_error() {
        let field = FnField::new(2, 2.0, 1.0, |_, _| crate::linalg::sym_matrix(2, &[1.0, 0.1, 0.0, 1.0]));
        let err = validate_ellipticity(&field, &[(0.0, point(&[0.0, 0.0]))]).unwrap_err();
        assert!(matches!(err, Error::Structural(_)));
    }

    #[test]
    fn holder_seminorm_of_sine() {
        let pairs = [(point(&[0.0]), point(&[std::f64::consts::FRAC_PI_2]))];
        let est = holder_seminorm(|x| x[0].sin(), 0.5, &pairs, 1).unwrap();
        assert!((est.value - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-12);
        assert!((est.value - 0.7979).abs() < 1e-4);
    }

    #[test]
    fn coincident_pairs_are_skipped() {
        let pairs = [(point(&[1.0]), point(&[1.0]))];
        let est = holder_seminorm(|x| x[0], 0.5, &pairs, 1).unwrap();
        assert_eq!(est.skipped, 1);
        assert_eq!(est.value, 0.0);
    }
}
