/// Barycentric weights `1 / prod_{k != j} (x_j - x_k)` for arbitrary nodes.
pub fn barycentric_weights(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    (0..n)
        .map(|j| {
            let mut p = 1.0;
            for k in 0..n {
                if k != j {
                    p *= nodes[j] - nodes[k];
                }
            }
            1.0 / p
        })
        .collect()
}

/// Lagrange basis values `l_j(x)` for the nodes, written into `out`.
pub fn lagrange_coefficients(nodes: &[f64], bary: &[f64], x: f64, out: &mut [f64]) {
    let n = nodes.len();
    for j in 0..n {
        if x == nodes[j] {
            out.iter_mut().for_each(|o| *o = 0.0);
            out[j] = 1.0;
            return;
        }
    }
    let mut denom = 0.0;
    for j in 0..n {
        let t = bary[j] / (x - nodes[j]);
        out[j] = t;
        denom += t;
    }
    for o in out.iter_mut().take(n) {
        *o /= denom;
    }
}

/// Local Lagrange interpolation of fixed order on a uniform grid.
#[derive(Debug, Clone, Copy)]
pub struct UniformStencil {
    pub origin: f64,
    pub step: f64,
    pub len: usize,
    pub order: usize,
}

impl UniformStencil {
    pub fn new(origin: f64, step: f64, len: usize, order: usize) -> Self {
        assert!(len >= order && order >= 2, "stencil order {order} needs at least that many nodes");
        Self { origin, step, len, order }
    }

    /// Index of the first stencil node and the `order` weights for `x`, or
    /// `None` when `x` lies outside the grid.
    pub fn locate(&self, x: f64, weights: &mut [f64]) -> Option<usize> {
        let u = (x - self.origin) / self.step;
        let last = (self.len - 1) as f64;
        if !(u >= -1e-12 && u <= last + 1e-12) {
            return None;
        }
        let p = self.order;
        let cell = (u.floor() as isize).clamp(0, self.len as isize - 2);
        let start = (cell - (p as isize / 2 - 1)).clamp(0, (self.len - p) as isize) as usize;
        let r = u - start as f64;
        for j in 0..p {
            let mut w = 1.0;
            for k in 0..p {
                if k != j {
                    w *= (r - k as f64) / (j as f64 - k as f64);
                }
            }
            weights[j] = w;
        }
        Some(start)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stencil_reproduces_polynomials_of_its_degree() {
        let st = UniformStencil::new(-1.0, 0.1, 21, 6);
        let mut w = [0.0; 6];
        for &x in &[-1.0, -0.93, 0.0, 0.456, 0.99, 1.0] {
            let s = st.locate(x, &mut w).unwrap();
            let v: f64 = (0..6).map(|j| {
                let xj = -1.0 + 0.1 * (s + j) as f64;
                w[j] * (xj.powi(5) - 2.0 * xj * xj + 1.0)
            }).sum();
            assert!((v - (x.powi(5) - 2.0 * x * x + 1.0)).abs() < 1e-12, "x={x}");
        }
        assert!(st.locate(1.01, &mut w).is_none());
    }

    #[test]
    fn barycentric_matches_direct_lagrange() {
        let nodes = [0.1, 0.4, 0.5, 0.9];
        let bary = barycentric_weights(&nodes);
        let mut l = [0.0; 4];
        lagrange_coefficients(&nodes, &bary, 0.3, &mut l);
        let v: f64 = nodes.iter().zip(&l).map(|(x, l)| l * x.powi(3)).sum();
        assert!((v - 0.027).abs() < 1e-14);
    }
}
