use serde::Serialize;

use crate::error::{Error, Result};
use crate::gauss_kernel::GaussianKernelSpec;
use crate::linalg::{check_dim, Point};

/// Tensor grid of uniformly spaced nodes with trapezoid weights.
#[derive(Debug, Clone)]
pub struct SpaceGrid {
    dim: usize,
    axes: Vec<Vec<f64>>,
    weights: Vec<Vec<f64>>,
}

impl SpaceGrid {
    /// `n[i]` nodes from `lo[i]` to `hi[i]` on each axis.
    pub fn uniform(dim: usize, lo: &[f64], hi: &[f64], n: &[usize]) -> Result<Self> {
        check_dim(dim)?;
        if lo.len() != dim || hi.len() != dim || n.len() != dim {
            return Err(Error::Domain("grid bounds must match the dimension".into()));
        }
        let mut axes = Vec::with_capacity(dim);
        let mut weights = Vec::with_capacity(dim);
        for i in 0..dim {
            if n[i] < 2 || !(hi[i] > lo[i]) {
                return Err(Error::Domain(format!("axis {i} needs at least two nodes and hi > lo")));
            }
            let h = (hi[i] - lo[i]) / (n[i] - 1) as f64;
            axes.push((0..n[i]).map(|k| lo[i] + h * k as f64).collect());
            let mut w = vec![h; n[i]];
            w[0] = 0.5 * h;
            w[n[i] - 1] = 0.5 * h;
            weights.push(w);
        }
        Ok(Self { dim, axes, weights })
    }

    /// Same bounds and node count on every axis.
    pub fn cube(dim: usize, lo: f64, hi: f64, n: usize) -> Result<Self> {
        Self::uniform(dim, &vec![lo; dim], &vec![hi; dim], &vec![n; dim])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn axis(&self, i: usize) -> &[f64] {
        &self.axes[i]
    }

    pub fn step(&self, i: usize) -> f64 {
        self.axes[i][1] - self.axes[i][0]
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.len()).collect()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Node with row-major flat index `idx` (last axis fastest).
    pub fn node(&self, idx: usize) -> Point {
        let mut p = Point::zeros();
        let mut rem = idx;
        for i in (0..self.dim).rev() {
            let n = self.axes[i].len();
            p[i] = self.axes[i][rem % n];
            rem /= n;
        }
        p
    }

    pub fn weight(&self, idx: usize) -> f64 {
        let mut w = 1.0;
        let mut rem = idx;
        for i in (0..self.dim).rev() {
            let n = self.axes[i].len();
            w *= self.weights[i][rem % n];
            rem /= n;
        }
        w
    }

    pub fn nodes(&self) -> impl Iterator<Item = Point> + '_ {
        (0..self.len()).map(|i| self.node(i))
    }

    pub fn lower(&self, i: usize) -> f64 {
        self.axes[i][0]
    }

    pub fn upper(&self, i: usize) -> f64 {
        *self.axes[i].last().unwrap()
    }

    /// Whether `x` lies in the bounding box.
    pub fn contains(&self, x: &Point) -> bool {
        (0..self.dim).all(|i| x[i] >= self.lower(i) && x[i] <= self.upper(i))
    }
}

impl SpaceGrid {
    /// Multilinear interpolation of nodal data `f(flat_index)` at `x`.
    ///
    /// Each axis is blended as `v0 + w (v1 - v0)`, so constant data is
    /// reproduced exactly. Points outside the box give `None` unless `clamp`
    /// is set, in which case the nearest boundary value is used.
    pub fn interpolate<T>(&self, x: &Point, clamp: bool, f: impl Fn(usize) -> T) -> Option<T>
    where
        T: Copy + std::ops::Add<Output = T> + std::ops::Sub<Output = T> + std::ops::Mul<f64, Output = T>,
    {
        let d = self.dim;
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for i in 0..d {
            let axis = &self.axes[i];
            let n = axis.len();
            let mut u = (x[i] - axis[0]) / self.step(i);
            if !(u >= 0.0 && u <= (n - 1) as f64) {
                if !clamp || u.is_nan() {
                    return None;
                }
                u = u.clamp(0.0, (n - 1) as f64);
            }
            let k = (u.floor() as usize).min(n - 2);
            base[i] = k;
            frac[i] = u - k as f64;
        }
        let shape = self.shape();
        let flat = |corner: usize| -> usize {
            let mut idx = 0;
            for i in 0..d {
                let bit = (corner >> (d - 1 - i)) & 1;
                idx = idx * shape[i] + base[i] + bit;
            }
            idx
        };
        let v = |c: usize| f(flat(c));
        let lerp = |a: T, b: T, w: f64| a + (b - a) * w;
        // Corners differ in the last axis first.
        Some(match d {
            1 => lerp(v(0), v(1), frac[0]),
            2 => lerp(lerp(v(0), v(1), frac[1]), lerp(v(2), v(3), frac[1]), frac[0]),
            _ => {
                let face = |o: usize| {
                    lerp(lerp(v(o), v(o + 1), frac[2]), lerp(v(o + 2), v(o + 3), frac[2]), frac[1])
                };
                lerp(face(0), face(4), frac[0])
            }
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Convolution {
    pub value: f64,
    /// Quadrature of the kernel alone; one minus this is the truncated mass.
    pub captured_mass: f64,
    /// Set when the grid does not reach six standard deviations around the center.
    pub truncation_warning: bool,
}

/// `int Gamma(y) h(y) dy` for a Gaussian kernel on a tensor grid.
pub fn convolve_gaussian_space(
    kernel: &GaussianKernelSpec,
    h: impl Fn(&Point) -> f64,
    grid: &SpaceGrid,
) -> Result<Convolution> {
    if grid.dim() != kernel.dim {
        return Err(Error::Domain("grid and kernel dimensions differ".into()));
    }
    let mut value = 0.0;
    let mut mass = 0.0;
    for i in 0..grid.len() {
        let y = grid.node(i);
        let w = grid.weight(i) * kernel.eval(&y);
        value += w * h(&y);
        mass += w;
    }
    let mut warning = false;
    for i in 0..kernel.dim {
        let sd = kernel.covariance[(i, i)].sqrt();
        let c = kernel.center[i];
        if grid.lower(i) > c - 6.0 * sd || grid.upper(i) < c + 6.0 * sd || grid.step(i) > sd {
            warning = true;
        }
    }
    Ok(Convolution { value, captured_mass: mass / kernel.prefactor, truncation_warning: warning })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{point, scaled_identity};

    fn kernel(dim: usize, var: f64) -> GaussianKernelSpec {
        GaussianKernelSpec::new(dim, scaled_identity(dim, var), Point::zeros(), 1.0).unwrap()
    }

    #[test]
    fn unit_function_has_unit_mass() {
        let k = kernel(1, 2.0);
        let sd = 2f64.sqrt();
        let grid = SpaceGrid::cube(1, -6.0 * sd, 6.0 * sd, 401).unwrap();
        let c = convolve_gaussian_space(&k, |_| 1.0, &grid).unwrap();
        assert!((c.value - 1.0).abs() < 1e-8);
        assert!(!c.truncation_warning);
    }

    #[test]
    fn second_moment_equals_variance() {
        let k = kernel(1, 2.0);
        let grid = SpaceGrid::cube(1, -12.0, 12.0, 801).unwrap();
        let c = convolve_gaussian_space(&k, |y| y[0] * y[0], &grid).unwrap();
        assert!((c.value - 2.0).abs() < 1e-8);
    }

    #[test]
    fn narrow_grid_warns() {
        let k = kernel(2, 1.0);
        let grid = SpaceGrid::cube(2, -2.0, 2.0, 41).unwrap();
        let c = convolve_gaussian_space(&k, |_| 1.0, &grid).unwrap();
        assert!(c.truncation_warning);
        assert!(c.captured_mass < 0.95);
        assert!(grid.contains(&point(&[0.0, 1.0])));
    }

    #[test]
    fn multilinear_interpolation_is_exact_on_affine_data() {
        let grid = SpaceGrid::uniform(2, &[-1.0, 0.0], &[1.0, 2.0], &[5, 9]).unwrap();
        let g = |p: &Point| 0.5 + 2.0 * p[0] - 3.0 * p[1];
        let x = point(&[0.13, 1.71]);
        let v = grid.interpolate(&x, false, |i| g(&grid.node(i))).unwrap();
        assert!((v - g(&x)).abs() < 1e-13);
        assert!(grid.interpolate(&point(&[2.0, 1.0]), false, |i| g(&grid.node(i))).is_none());
        let c = grid.interpolate(&point(&[2.0, 1.0]), true, |i| g(&grid.node(i))).unwrap();
        assert!((c - g(&point(&[1.0, 1.0]))).abs() < 1e-13);
        assert_eq!(grid.interpolate(&x, false, |_| 0.3).unwrap(), 0.3);
    }
}
