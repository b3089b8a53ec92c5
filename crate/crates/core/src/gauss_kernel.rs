//! Gaussian heat kernels, accumulated covariances and the frozen-coefficient
//! parametrix.

use std::f64::consts::PI;

use nalgebra::Cholesky;
use serde::Serialize;

use crate::coefficients::CoefficientField;
use crate::error::{Error, Result};
use crate::linalg::{asymmetry, check_dim, norm_sq, pad_identity, pad_zero, Point, SymMatrix};

/// Heat kernel `(2 pi)^(-d/2) det(A)^(-1/2) exp(-<A^-1 x, x>/2)` with its
/// covariance factored once.
#[derive(Debug, Clone, Copy)]
pub struct Gaussian {
    dim: usize,
    inv: SymMatrix,
    norm: f64,
}

/// Value, gradient and Hessian of a kernel in its space argument.
#[derive(Debug, Clone, Copy)]
pub struct KernelJet {
    pub value: f64,
    pub gradient: Point,
    pub hessian: SymMatrix,
}

impl Gaussian {
    /// Fails when `A` is not symmetric or not positive definite.
    pub fn new(cov: &SymMatrix, dim: usize) -> Result<Self> {
        check_dim(dim)?;
        let asym = asymmetry(cov, dim);
        if asym > 1e-12 * (1.0 + cov.amax()) {
            return Err(Error::Structural(format!("covariance is not symmetric (asymmetry {asym:.3e})")));
        }
        if dim == 1 {
            let a = cov[(0, 0)];
            if !(a > 0.0) || !a.is_finite() {
                return Err(Error::Structural(format!("covariance {a} is not positive")));
            }
            let mut inv = SymMatrix::identity();
            inv[(0, 0)] = 1.0 / a;
            return Ok(Self { dim, inv, norm: 1.0 / (2.0 * PI * a).sqrt() });
        }
        let m = pad_identity(*cov, dim);
        let chol = Cholesky::new(m)
            .ok_or_else(|| Error::Structural("covariance is not positive definite".into()))?;
        let det = chol.determinant();
        if !(det > 0.0) || !det.is_finite() {
            return Err(Error::Structural(format!("covariance determinant {det} is not positive")));
        }
        let inv = chol.inverse();
        Ok(Self {
            dim,
            inv,
            norm: (2.0 * PI).powf(-0.5 * dim as f64) / det.sqrt(),
        })
    }

    /// Isotropic covariance `v I`; no validation beyond `v > 0`.
    pub fn isotropic(dim: usize, v: f64) -> Self {
        debug_assert!(v > 0.0);
        let mut inv = SymMatrix::identity();
        for i in 0..dim {
            inv[(i, i)] = 1.0 / v;
        }
        Self { dim, inv, norm: (2.0 * PI * v).powf(-0.5 * dim as f64) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn inverse(&self) -> &SymMatrix {
        &self.inv
    }

    pub fn normalization(&self) -> f64 {
        self.norm
    }

    pub fn value(&self, x: &Point) -> f64 {
        if self.dim == 1 {
            return self.norm * (-0.5 * self.inv[(0, 0)] * x[0] * x[0]).exp();
        }
        self.norm * (-0.5 * x.dot(&(self.inv * x))).exp()
    }

    pub fn jet(&self, x: &Point) -> KernelJet {
        if self.dim == 1 {
            let ia = self.inv[(0, 0)];
            let v = self.norm * (-0.5 * ia * x[0] * x[0]).exp();
            let ax = ia * x[0];
            let mut gradient = Point::zeros();
            gradient[0] = -v * ax;
            let mut hessian = SymMatrix::zeros();
            hessian[(0, 0)] = v * (ax * ax - ia);
            return KernelJet { value: v, gradient, hessian };
        }
        let ax = self.inv * x;
        let v = self.norm * (-0.5 * x.dot(&ax)).exp();
        let hessian = pad_zero((ax * ax.transpose() - self.inv) * v, self.dim);
        KernelJet { value: v, gradient: -ax * v, hessian }
    }
}

/// `Gamma^heat(A, x)`.
pub fn heat_kernel(cov: &SymMatrix, x: &Point, dim: usize) -> Result<f64> {
    Ok(Gaussian::new(cov, dim)?.value(x))
}

/// Gradient `-Gamma A^-1 x` and Hessian `Gamma (A^-1 x x^T A^-1 - A^-1)`.
pub fn heat_kernel_derivatives(cov: &SymMatrix, x: &Point, dim: usize) -> Result<KernelJet> {
    Ok(Gaussian::new(cov, dim)?.jet(x))
}

/// Isotropic kernel with covariance `lambda t I`.
pub fn gamma_lambda(lambda: f64, dim: usize, t: f64, x: &Point) -> f64 {
    let v = lambda * t;
    (2.0 * PI * v).powf(-0.5 * dim as f64) * (-0.5 * norm_sq(x, dim) / v).exp()
}

/// Natural logarithm of [`gamma_lambda`], finite where the kernel underflows.
pub fn log_gamma_lambda(lambda: f64, dim: usize, t: f64, x: &Point) -> f64 {
    let v = lambda * t;
    -0.5 * dim as f64 * (2.0 * PI * v).ln() - 0.5 * norm_sq(x, dim) / v
}

/// `A_{tau,t}(y) = int_tau^t a_s(y) ds`.
pub fn accumulated_covariance(field: &dyn CoefficientField, y: &Point, tau: f64, t: f64) -> Result<SymMatrix> {
    if !(t > tau) {
        return Err(Error::Domain(format!("accumulated covariance needs t > tau, got t={t}, tau={tau}")));
    }
    Ok(field.integrated_diffusion(y, tau, t))
}

/// Frozen-coefficient parametrix `Z(t, x; tau, xi) = Gamma^heat(A_{tau,t}(xi), x - xi)`.
pub fn parametrix(field: &dyn CoefficientField, t: f64, x: &Point, tau: f64, xi: &Point) -> Result<f64> {
    let a = accumulated_covariance(field, xi, tau, t)?;
    heat_kernel(&a, &(x - xi), field.dim())
}

/// `(lambda^-d Gamma^{1/lambda}(dt, w), lambda^d Gamma^lambda(dt, w))`.
pub fn gaussian_sandwich_bounds(lambda: f64, dim: usize, dt: f64, w: &Point) -> (f64, f64) {
    let ld = lambda.powi(dim as i32);
    (
        gamma_lambda(1.0 / lambda, dim, dt, w) / ld,
        ld * gamma_lambda(lambda, dim, dt, w),
    )
}

/// A scaled Gaussian kernel `prefactor * Gamma^heat(covariance, x - center)`.
#[derive(Debug, Clone, Serialize)]
pub struct GaussianKernelSpec {
    pub dim: usize,
    #[serde(skip)]
    pub covariance: SymMatrix,
    #[serde(skip)]
    pub center: Point,
    pub prefactor: f64,
    #[serde(skip)]
    gaussian: Option<Gaussian>,
}

impl GaussianKernelSpec {
    pub fn new(dim: usize, covariance: SymMatrix, center: Point, prefactor: f64) -> Result<Self> {
        if !(prefactor > 0.0) {
            return Err(Error::Domain(format!("kernel prefactor {prefactor} must be positive")));
        }
        let gaussian = Gaussian::new(&covariance, dim)?;
        Ok(Self { dim, covariance, center, prefactor, gaussian: Some(gaussian) })
    }

    pub fn eval(&self, x: &Point) -> f64 {
        let g = self.gaussian.as_ref().expect("validated at construction");
        self.prefactor * g.value(&(x - self.center))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{SeparableField, SpaceProfile, TimeProfile};
    use crate::linalg::{point, scaled_identity, sym_matrix};

    #[test]
    fn two_dimensional_identity_covariance() {
        let v = heat_kernel(&scaled_identity(2, 1.0), &point(&[1.0, 1.0]), 2).unwrap();
        let exact = (-1.0f64).exp() / (2.0 * PI);
        assert!((v - exact).abs() < 1e-15);
        assert!((v - 0.0585498).abs() < 1e-7);
    }

    #[test]
    fn gradient_in_one_dimension() {
        let j = heat_kernel_derivatives(&scaled_identity(1, 1.0), &point(&[1.0]), 1).unwrap();
        assert!((j.gradient[0] + (-0.5f64).exp() / (2.0 * PI).sqrt()).abs() < 1e-15);
        assert!((j.gradient[0] + 0.2419707).abs() < 1e-7);
    }

    #[test]
    fn derivatives_match_finite_differences_for_general_covariance() {
        let a = sym_matrix(2, &[1.3, 0.4, 0.4, 0.8]);
        let x = point(&[0.3, -0.7]);
        let g = Gaussian::new(&a, 2).unwrap();
        let j = g.jet(&x);
        let h = 1e-5;
        for p in 0..2 {
            let mut e = Point::zeros();
            e[p] = h;
            let fd = (g.value(&(x + e)) - g.value(&(x - e))) / (2.0 * h);
            assert!((fd - j.gradient[p]).abs() < 1e-9);
            let gd = (g.jet(&(x + e)).gradient - g.jet(&(x - e)).gradient) / (2.0 * h);
            for q in 0..2 {
                assert!((gd[q] - j.hessian[(q, p)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn indefinite_covariance_is_rejected() {
        let a = sym_matrix(2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(Gaussian::new(&a, 2), Err(Error::Structural(_))));
        assert!(Gaussian::new(&sym_matrix(1, &[0.0]), 1).is_err());
    }

    #[test]
    fn accumulated_covariance_examples() {
        let y = point(&[0.0]);
        let constant = SeparableField::isotropic(1, 1.0, 2.0);
        let affine = SeparableField::scalar(1.0, TimeProfile::Affine { intercept: 1.0, slope: 1.0 }, SpaceProfile::Constant, 3.0, 1.0);
        let piecewise = SeparableField::scalar(
            1.0,
            TimeProfile::Piecewise { knots: vec![0.5], values: vec![1.0, 2.0] },
            SpaceProfile::Constant,
            3.0,
            1.0,
        );
        assert!((accumulated_covariance(&constant, &y, 0.0, 1.0).unwrap()[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((accumulated_covariance(&affine, &y, 0.0, 1.0).unwrap()[(0, 0)] - 1.5).abs() < 1e-15);
        assert!((accumulated_covariance(&piecewise, &y, 0.0, 1.0).unwrap()[(0, 0)] - 1.5).abs() < 1e-15);
        assert!((accumulated_covariance(&constant, &y, 0.0, 2.0).unwrap()[(0, 0)] - 2.0).abs() < 1e-15);
        assert!(accumulated_covariance(&constant, &y, 1.0, 1.0).is_err());
    }

    #[test]
    fn parametrix_with_affine_time_dependence() {
        let f = SeparableField::scalar(1.0, TimeProfile::Affine { intercept: 1.0, slope: 1.0 }, SpaceProfile::Constant, 3.0, 1.0);
        let z = parametrix(&f, 1.0, &point(&[0.0]), 0.0, &point(&[0.0])).unwrap();
        assert!((z - 1.0 / (3.0 * PI).sqrt()).abs() < 1e-15);
        assert!((z - 0.3257350).abs() < 1e-7);
    }

    #[test]
    fn sandwich_bounds_at_the_origin() {
        let (lo, hi) = gaussian_sandwich_bounds(2.0, 1, 1.0, &point(&[0.0]));
        assert!((lo - 0.2821).abs() < 1e-4);
        assert!((hi - 0.5642).abs() < 1e-4);
    }
}
