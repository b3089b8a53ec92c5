use serde::{Deserialize, Serialize};

use super::CoefficientField;
use crate::linalg::{Point, SymMatrix};

/// Scalar time factor of a separable diffusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeProfile {
    /// `intercept + slope * t`
    Affine { intercept: f64, slope: f64 },
    /// `values[i]` on `[knots[i-1], knots[i])`, right-continuous at the knots.
    Piecewise { knots: Vec<f64>, values: Vec<f64> },
}

impl TimeProfile {
    pub fn constant() -> Self {
        TimeProfile::Affine { intercept: 1.0, slope: 0.0 }
    }

    pub fn value(&self, t: f64) -> f64 {
        match self {
            TimeProfile::Affine { intercept, slope } => intercept + slope * t,
            TimeProfile::Piecewise { knots, values } => {
                let i = knots.partition_point(|k| *k <= t);
                values[i]
            }
        }
    }

    /// `int_s^t value(r) dr`
    pub fn integral(&self, s: f64, t: f64) -> f64 {
        match self {
            TimeProfile::Affine { intercept, slope } => {
                intercept * (t - s) + 0.5 * slope * (t * t - s * s)
            }
            TimeProfile::Piecewise { knots, values } => {
                let mut acc = 0.0;
                for (i, v) in values.iter().enumerate() {
                    let lo = if i == 0 { f64::NEG_INFINITY } else { knots[i - 1] };
                    let hi = if i == knots.len() { f64::INFINITY } else { knots[i] };
                    let (a, b) = (lo.max(s), hi.min(t));
                    if b > a {
                        acc += v * (b - a);
                    }
                }
                acc
            }
        }
    }

    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            TimeProfile::Affine { .. } => Vec::new(),
            TimeProfile::Piecewise { knots, .. } => knots.clone(),
        }
    }

    pub fn is_valid(&self) -> bool {
        match self {
            TimeProfile::Affine { .. } => true,
            TimeProfile::Piecewise { knots, values } => {
                values.len() == knots.len() + 1 && knots.windows(2).all(|w| w[1] > w[0])
            }
        }
    }
}

/// Scalar space factor of a separable diffusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpaceProfile {
    Constant,
    /// `1 + amplitude * sin(frequency * x[axis])`
    Sine { amplitude: f64, frequency: f64, axis: usize },
}

impl SpaceProfile {
    pub fn sine(amplitude: f64, frequency: f64) -> Self {
        SpaceProfile::Sine { amplitude, frequency, axis: 0 }
    }

    pub fn value(&self, x: &Point) -> f64 {
        match self {
            SpaceProfile::Constant => 1.0,
            SpaceProfile::Sine { amplitude, frequency, axis } => {
                1.0 + amplitude * (frequency * x[*axis]).sin()
            }
        }
    }
}

/// Diffusion `theta(t) m(x) M` with constant drift, potential and source.
#[derive(Debug, Clone)]
pub struct SeparableField {
    pub dim: usize,
    pub base: SymMatrix,
    pub time: TimeProfile,
    pub space: SpaceProfile,
    pub drift: Point,
    pub potential: f64,
    pub source: f64,
    pub lambda: f64,
    pub alpha: f64,
}

impl SeparableField {
    pub fn new(dim: usize, base: SymMatrix, time: TimeProfile, space: SpaceProfile, lambda: f64, alpha: f64) -> Self {
        Self {
            dim,
            base: crate::linalg::pad_identity(base, dim),
            time,
            space,
            drift: Point::zeros(),
            potential: 0.0,
            source: 0.0,
            lambda,
            alpha,
        }
    }

    /// One-dimensional field with diffusion `scale * theta(t) m(x)`.
    pub fn scalar(scale: f64, time: TimeProfile, space: SpaceProfile, lambda: f64, alpha: f64) -> Self {
        Self::new(1, crate::linalg::scaled_identity(1, scale), time, space, lambda, alpha)
    }

    /// Constant isotropic diffusion `scale * I`.
    pub fn isotropic(dim: usize, scale: f64, lambda: f64) -> Self {
        Self::new(
            dim,
            crate::linalg::scaled_identity(dim, scale),
            TimeProfile::constant(),
            SpaceProfile::Constant,
            lambda,
            1.0,
        )
    }

    pub fn with_drift(mut self, drift: Point) -> Self {
        self.drift = drift;
        self
    }

    pub fn with_potential(mut self, c: f64) -> Self {
        self.potential = c;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_source(mut self, f: f64) -> Self {
        self.source = f;
        self
    }

    /// True when the diffusion does not depend on `x`.
    pub fn is_space_homogeneous(&self) -> bool {
        matches!(self.space, SpaceProfile::Constant)
    }
}

impl CoefficientField for SeparableField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn diffusion(&self, t: f64, x: &Point) -> SymMatrix {
        self.base * (self.time.value(t) * self.space.value(x))
    }

    fn drift(&self, _t: f64, _x: &Point) -> Point {
        self.drift
    }

    fn potential(&self, _t: f64, _x: &Point) -> f64 {
        self.potential
    }

    fn source(&self, _t: f64, _x: &Point) -> f64 {
        self.source
    }

    fn has_source(&self) -> bool {
        self.source != 0.0
    }

    fn lambda(&self) -> f64 {
        self.lambda
    }

    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.time.breakpoints()
    }

    fn integrated_diffusion(&self, y: &Point, s: f64, t: f64) -> SymMatrix {
        self.base * (self.time.integral(s, t) * self.space.value(y))
    }

    fn is_driftless(&self) -> bool {
        self.potential == 0.0 && self.drift.iter().all(|b| *b == 0.0)
    }
}

type ScalarFn = Box<dyn Fn(f64, &Point) -> f64 + Send + Sync>;
type VectorFn = Box<dyn Fn(f64, &Point) -> Point + Send + Sync>;
type MatrixFn = Box<dyn Fn(f64, &Point) -> SymMatrix + Send + Sync>;

/// Field defined by closures.
pub struct FnField {
    dim: usize,
    lambda: f64,
    alpha: f64,
    breakpoints: Vec<f64>,
    diffusion: MatrixFn,
    drift: Option<VectorFn>,
    potential: Option<ScalarFn>,
    source: Option<ScalarFn>,
}

impl FnField {
    pub fn new(
        dim: usize,
        lambda: f64,
        alpha: f64,
        diffusion: impl Fn(f64, &Point) -> SymMatrix + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            lambda,
            alpha,
            breakpoints: Vec::new(),
            diffusion: Box::new(diffusion),
            drift: None,
            potential: None,
            source: None,
        }
    }

    pub fn with_breakpoints(mut self, breakpoints: Vec<f64>) -> Self {
        self.breakpoints = breakpoints;
        self
    }

    pub fn with_drift(mut self, b: impl Fn(f64, &Point) -> Point + Send + Sync + 'static) -> Self {
        self.drift = Some(Box::new(b));
        self
    }

    pub fn with_potential(mut self, c: impl Fn(f64, &Point) -> f64 + Send + Sync + 'static) -> Self {
        self.potential = Some(Box::new(c));
        self
    }

    pub fn with_source(mut self, f: impl Fn(f64, &Point) -> f64 + Send + Sync + 'static) -> Self {
        self.source = Some(Box::new(f));
        self
    }
}

impl CoefficientField for FnField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn diffusion(&self, t: f64, x: &Point) -> SymMatrix {
        (self.diffusion)(t, x)
    }

    fn drift(&self, t: f64, x: &Point) -> Point {
        self.drift.as_ref().map_or_else(Point::zeros, |b| b(t, x))
    }

    fn potential(&self, t: f64, x: &Point) -> f64 {
        self.potential.as_ref().map_or(0.0, |c| c(t, x))
    }

    fn source(&self, t: f64, x: &Point) -> f64 {
        self.source.as_ref().map_or(0.0, |f| f(t, x))
    }

    fn has_source(&self) -> bool {
        self.source.is_some()
    }

    fn lambda(&self) -> f64 {
        self.lambda
    }

    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.breakpoints.clone()
    }

    fn is_driftless(&self) -> bool {
        self.drift.is_none() && self.potential.is_none()
    }
}
