use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{norm_sq, NoiseMatrix, Point, SymMatrix, MAX_CHANNELS, MAX_DIM};

/// Value and spatial derivatives up to third order of one noise channel.
///
/// `jac[(h, p)] = d_p sigma^h`, `hess[h][(p, q)] = d_pq sigma^h` and
/// `third[h][p][(q, r)] = d_pqr sigma^h`.
#[derive(Debug, Clone, Copy)]
pub struct ChannelJet {
    pub value: Point,
    pub jac: SymMatrix,
    pub hess: [SymMatrix; 3],
    pub third: [[SymMatrix; 3]; 3],
}

impl ChannelJet {
    pub fn zeros() -> Self {
        Self {
            value: Point::zeros(),
            jac: SymMatrix::zeros(),
            hess: [SymMatrix::zeros(); 3],
            third: [[SymMatrix::zeros(); 3]; 3],
        }
    }
}

/// Relative finite-difference steps, scaled by `1 + |x|`.
///
/// Higher derivatives use larger steps: third differences at the first-order
/// step are dominated by rounding.
#[derive(Debug, Clone, Copy)]
pub struct FdSteps {
    pub first: f64,
    pub second: f64,
    pub third: f64,
}

impl Default for FdSteps {
    fn default() -> Self {
        Self { first: 1e-5, second: 1.2e-4, third: 7e-4 }
    }
}

/// Declared decay `(1 + |x|^2)^epsilon |d^beta sigma| <= bound` for `1 <= |beta| <= 3`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DecayEnvelope {
    pub epsilon: f64,
    pub bound: f64,
}

pub trait SigmaField: Send + Sync {
    fn dim(&self) -> usize;

    fn channels(&self) -> usize;

    /// Column `k` holds channel `k`; padding entries are zero.
    fn value(&self, t: f64, x: &Point) -> NoiseMatrix;

    fn envelope(&self) -> DecayEnvelope;

    /// Derivatives of channel `k`, by finite differences unless overridden.
    fn jet(&self, t: f64, x: &Point, k: usize) -> ChannelJet {
        fd_jet(|y| self.value(t, y).column(k).into_owned(), x, self.dim(), FdSteps::default())
    }

    /// True when sigma does not depend on `x`.
    fn is_constant(&self) -> bool {
        false
    }
}

/// Finite-difference jet of a vector field.
pub fn fd_jet(f: impl Fn(&Point) -> Point, x: &Point, dim: usize, steps: FdSteps) -> ChannelJet {
    let scale = 1.0 + x.norm();
    let mut jet = ChannelJet::zeros();
    jet.value = f(x);
    let e = |p: usize| {
        let mut v = Point::zeros();
        v[p] = 1.0;
        v
    };
    let h1 = steps.first * scale;
    for p in 0..dim {
        let d = (f(&(x + e(p) * h1)) - f(&(x - e(p) * h1))) / (2.0 * h1);
        for h in 0..dim {
            jet.jac[(h, p)] = d[h];
        }
    }
    let second = |y: &Point, hs: f64| -> [SymMatrix; 3] {
        let mut out = [SymMatrix::zeros(); 3];
        let fy = f(y);
        for p in 0..dim {
            for q in p..dim {
                let d = if p == q {
                    (f(&(y + e(p) * hs)) - fy * 2.0 + f(&(y - e(p) * hs))) / (hs * hs)
                } else {
                    (f(&(y + (e(p) + e(q)) * hs)) - f(&(y + (e(p) - e(q)) * hs))
                        - f(&(y + (e(q) - e(p)) * hs))
                        + f(&(y - (e(p) + e(q)) * hs)))
                        / (4.0 * hs * hs)
                };
                for h in 0..dim {
                    out[h][(p, q)] = d[h];
                    out[h][(q, p)] = d[h];
                }
            }
        }
        out
    };
    jet.hess = second(x, steps.second * scale);
    let h3 = steps.third * scale;
    for r in 0..dim {
        let hp = second(&(x + e(r) * h3), h3);
        let hm = second(&(x - e(r) * h3), h3);
        for h in 0..dim {
            let d = (hp[h] - hm[h]) / (2.0 * h3);
            for p in 0..dim {
                for q in 0..dim {
                    jet.third[h][p][(q, r)] = d[(p, q)];
                }
            }
        }
    }
    jet
}

fn check_shape(dim: usize, channels: usize) {
    assert!((1..=MAX_DIM).contains(&dim), "dimension {dim} unsupported");
    assert!((1..=MAX_CHANNELS).contains(&channels), "channel count {channels} unsupported");
}

/// Space-independent noise coefficient.
#[derive(Debug, Clone)]
pub struct ConstantSigma {
    pub dim: usize,
    pub channels: usize,
    pub matrix: NoiseMatrix,
}

impl ConstantSigma {
    pub fn new(dim: usize, channels: usize, matrix: NoiseMatrix) -> Self {
        check_shape(dim, channels);
        Self { dim, channels, matrix }
    }
}

impl SigmaField for ConstantSigma {
    fn dim(&self) -> usize {
        self.dim
    }
    fn channels(&self) -> usize {
        self.channels
    }
    fn value(&self, _t: f64, _x: &Point) -> NoiseMatrix {
        self.matrix
    }
    fn envelope(&self) -> DecayEnvelope {
        DecayEnvelope { epsilon: 1.0, bound: 0.0 }
    }
    fn jet(&self, _t: f64, _x: &Point, k: usize) -> ChannelJet {
        let mut j = ChannelJet::zeros();
        j.value = self.matrix.column(k).into_owned();
        j
    }
    fn is_constant(&self) -> bool {
        true
    }
}

/// `sigma^k(x) = S_k x + offset^k`.
#[derive(Debug, Clone)]
pub struct AffineSigma {
    pub dim: usize,
    pub channels: usize,
    pub slopes: Vec<SymMatrix>,
    pub offset: NoiseMatrix,
}

impl AffineSigma {
    pub fn new(dim: usize, slopes: Vec<SymMatrix>, offset: NoiseMatrix) -> Self {
        check_shape(dim, slopes.len());
        let channels = slopes.len();
        let slopes = slopes.into_iter().map(|s| crate::linalg::pad_zero(s, dim)).collect();
        Self { dim, channels, slopes, offset }
    }

    /// One-dimensional `sigma(x) = s x`.
    pub fn scalar_linear(s: f64) -> Self {
        Self::new(1, vec![crate::linalg::scaled_identity(1, s)], NoiseMatrix::zeros())
    }
}

impl SigmaField for AffineSigma {
    fn dim(&self) -> usize {
        self.dim
    }
    fn channels(&self) -> usize {
        self.channels
    }
    fn value(&self, _t: f64, x: &Point) -> NoiseMatrix {
        let mut m = self.offset;
        for (k, s) in self.slopes.iter().enumerate() {
            let col = s * x;
            for h in 0..self.dim {
                m[(h, k)] += col[h];
            }
        }
        m
    }
    fn envelope(&self) -> DecayEnvelope {
        let bound = self.slopes.iter().map(|s| s.amax()).fold(0.0, f64::max);
        DecayEnvelope { epsilon: 0.0, bound }
    }
    fn jet(&self, t: f64, x: &Point, k: usize) -> ChannelJet {
        let mut j = ChannelJet::zeros();
        j.value = self.value(t, x).column(k).into_owned();
        j.jac = self.slopes[k];
        j
    }
}

/// `sigma(x) = A exp(-|x - c|^2 / (2 w^2))` with a constant amplitude matrix `A`.
#[derive(Debug, Clone)]
pub struct GaussianBumpSigma {
    pub dim: usize,
    pub channels: usize,
    pub amplitude: NoiseMatrix,
    pub center: Point,
    pub width: f64,
}

impl GaussianBumpSigma {
    pub fn new(dim: usize, channels: usize, amplitude: NoiseMatrix, center: Point, width: f64) -> Self {
        check_shape(dim, channels);
        assert!(width > 0.0);
        Self { dim, channels, amplitude, center, width }
    }
}

impl SigmaField for GaussianBumpSigma {
    fn dim(&self) -> usize {
        self.dim
    }
    fn channels(&self) -> usize {
        self.channels
    }
    fn value(&self, _t: f64, x: &Point) -> NoiseMatrix {
        let r = x - self.center;
        self.amplitude * (-norm_sq(&r, self.dim) / (2.0 * self.width * self.width)).exp()
    }
    fn envelope(&self) -> DecayEnvelope {
        // Every derivative is a polynomial times the Gaussian, so any epsilon works;
        // the bound below is generous for epsilon = 1/2.
        let w = self.width;
        let amp = self.amplitude.amax();
        let bound = amp * (1.0 + w.powi(-3) + 3.0 / w.powi(2) + 3.0 / w) * (1.0 + self.center.norm() + 3.0 * w);
        DecayEnvelope { epsilon: 0.5, bound }
    }
    fn jet(&self, _t: f64, x: &Point, k: usize) -> ChannelJet {
        let d = self.dim;
        let r = x - self.center;
        let w2 = self.width * self.width;
        let g = (-norm_sq(&r, d) / (2.0 * w2)).exp();
        let amp: Point = self.amplitude.column(k).into_owned();
        let delta = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };
        let mut grad = Point::zeros();
        let mut hess = SymMatrix::zeros();
        let mut third = [SymMatrix::zeros(); 3];
        for p in 0..d {
            grad[p] = -r[p] / w2 * g;
            for q in 0..d {
                hess[(p, q)] = (r[p] * r[q] / (w2 * w2) - delta(p, q) / w2) * g;
                for s in 0..d {
                    third[p][(q, s)] = (-r[p] * r[q] * r[s] / (w2 * w2 * w2)
                        + (delta(p, q) * r[s] + delta(p, s) * r[q] + delta(q, s) * r[p]) / (w2 * w2))
                        * g;
                }
            }
        }
        let mut jet = ChannelJet::zeros();
        jet.value = amp * g;
        for h in 0..d {
            for p in 0..d {
                jet.jac[(h, p)] = amp[h] * grad[p];
            }
            jet.hess[h] = hess * amp[h];
            for p in 0..d {
                jet.third[h][p] = third[p] * amp[h];
            }
        }
        jet
    }
}

/// `sigma(x) = A (1 - |x - c|^2 / R^2)^4` inside the ball of radius `R`, zero
/// outside. Derivatives come from finite differences.
#[derive(Debug, Clone)]
pub struct CompactBumpSigma {
    pub dim: usize,
    pub channels: usize,
    pub amplitude: NoiseMatrix,
    pub center: Point,
    pub radius: f64,
}

impl CompactBumpSigma {
    pub fn new(dim: usize, channels: usize, amplitude: NoiseMatrix, center: Point, radius: f64) -> Self {
        check_shape(dim, channels);
        assert!(radius > 0.0);
        Self { dim, channels, amplitude, center, radius }
    }
}

impl SigmaField for CompactBumpSigma {
    fn dim(&self) -> usize {
        self.dim
    }
    fn channels(&self) -> usize {
        self.channels
    }
    fn value(&self, _t: f64, x: &Point) -> NoiseMatrix {
        let q = 1.0 - norm_sq(&(x - self.center), self.dim) / (self.radius * self.radius);
        if q <= 0.0 {
            NoiseMatrix::zeros()
        } else {
            self.amplitude * q.powi(4)
        }
    }
    fn envelope(&self) -> DecayEnvelope {
        let r = self.radius;
        let bound = self.amplitude.amax() * 200.0 * (1.0 + r.powi(-3)) * (1.0 + (self.center.norm() + r).powi(2));
        DecayEnvelope { epsilon: 1.0, bound }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SigmaDecayReport {
    /// Largest weighted derivative for orders one, two and three.
    pub max_weighted: [f64; 3],
    pub worst_sample: (f64, Vec<f64>),
    pub envelope_epsilon: f64,
    pub envelope_bound: f64,
}

impl SigmaDecayReport {
    pub fn holds(&self) -> bool {
        self.max_weighted.iter().all(|m| *m <= self.envelope_bound)
    }
}

/// Samples `(1 + |x|^2)^epsilon |d^beta sigma|` over derivative orders one to three.
pub fn validate_sigma_decay(sigma: &dyn SigmaField, samples: &[(f64, Point)]) -> Result<SigmaDecayReport> {
    if samples.is_empty() {
        return Err(Error::Domain("no samples supplied".into()));
    }
    let d = sigma.dim();
    let env = sigma.envelope();
    let mut rep = SigmaDecayReport {
        max_weighted: [0.0; 3],
        worst_sample: (samples[0].0, crate::linalg::coords(&samples[0].1, d)),
        envelope_epsilon: env.epsilon,
        envelope_bound: env.bound,
    };
    let mut worst = 0.0;
    for (t, x) in samples {
        if !x.iter().all(|v| v.is_finite()) || x.norm() > 1e12 {
            return Err(Error::Configuration(format!(
                "finite-difference steps underflow at |x| = {:.3e}",
                x.norm()
            )));
        }
        let weight = (1.0 + norm_sq(x, d)).powf(env.epsilon);
        for k in 0..sigma.channels() {
            let j = sigma.jet(*t, x, k);
            let mut orders = [0.0f64; 3];
            for h in 0..d {
                for p in 0..d {
                    orders[0] = orders[0].max(j.jac[(h, p)].abs());
                    for q in 0..d {
                        orders[1] = orders[1].max(j.hess[h][(p, q)].abs());
                        for r in 0..d {
                            orders[2] = orders[2].max(j.third[h][p][(q, r)].abs());
                        }
                    }
                }
            }
            for (m, o) in rep.max_weighted.iter_mut().zip(orders) {
                *m = m.max(weight * o);
            }
            let local = orders.iter().fold(0.0f64, |a, b| a.max(*b)) * weight;
            if local > worst {
                worst = local;
                rep.worst_sample = (*t, crate::linalg::coords(x, d));
            }
        }
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::point;

    fn bump() -> GaussianBumpSigma {
        // exp(-x^2)
        GaussianBumpSigma::new(1, 1, crate::linalg::noise_matrix(1, 1, &[1.0]), Point::zeros(), 0.5f64.sqrt())
    }

    #[test]
    fn analytic_jet_matches_finite_differences() {
        let s = GaussianBumpSigma::new(
            2,
            2,
            crate::linalg::noise_matrix(2, 2, &[0.3, 0.1, -0.2, 0.4]),
            point(&[0.2, -0.1]),
            0.8,
        );
        let x = point(&[0.5, 0.3]);
        for k in 0..2 {
            let a = s.jet(0.0, &x, k);
            let f = fd_jet(|y| s.value(0.0, y).column(k).into_owned(), &x, 2, FdSteps::default());
            assert!((a.jac - f.jac).amax() < 1e-8);
            for h in 0..2 {
                assert!((a.hess[h] - f.hess[h]).amax() < 1e-6);
                for p in 0..2 {
                    assert!((a.third[h][p] - f.third[h][p]).amax() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn gaussian_decay_is_finite_and_matches_brute_force() {
        let s = bump();
        let samples: Vec<_> = (0..=2000).map(|i| (0.0, point(&[-10.0 + 0.01 * i as f64]))).collect();
        let rep = validate_sigma_decay(&s, &samples).unwrap();
        // Independent evaluation of the derivatives of exp(-x^2).
        let mut brute = [0.0f64; 3];
        for (_, x) in &samples {
            let x = x[0];
            let g = (-x * x).exp();
            let w = (1.0 + x * x).sqrt();
            brute[0] = brute[0].max(w * (2.0 * x * g).abs());
            brute[1] = brute[1].max(w * ((4.0 * x * x - 2.0) * g).abs());
            brute[2] = brute[2].max(w * ((12.0 * x - 8.0 * x * x * x) * g).abs());
        }
        for o in 0..3 {
            assert!((rep.max_weighted[o] - brute[o]).abs() < 1e-12 * brute[o].max(1.0));
        }
        assert!(rep.holds());
    }

    #[test]
    fn compact_bump_vanishes_outside_support() {
        let s = CompactBumpSigma::new(1, 1, crate::linalg::noise_matrix(1, 1, &[0.4]), Point::zeros(), 1.0);
        assert_eq!(s.value(0.0, &point(&[1.5]))[(0, 0)], 0.0);
        let j = s.jet(0.0, &point(&[0.3]), 0);
        // d/dx 0.4 (1-x^2)^4 = -3.2 x (1-x^2)^3
        let exact = -3.2 * 0.3 * (1.0f64 - 0.09).powi(3);
        assert!((j.jac[(0, 0)] - exact).abs() < 1e-8);
    }
}
