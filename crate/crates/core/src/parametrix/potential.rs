use crate::coefficients::CoefficientField;
use crate::error::{Error, Result};
use crate::gauss_kernel::Gaussian;
use crate::linalg::{contract, Point, SymMatrix};
use crate::quadrature::singular_rule;

use super::layout::Window;
use super::ParametrixConfig;

/// Volume potential `int_t0^t int Z(t, x; s, y) g(s, y) dy ds` with derivatives.
#[derive(Debug, Clone, Copy)]
pub struct VolumePotential {
    pub value: f64,
    pub gradient: Point,
    pub hessian: SymMatrix,
    pub time_derivative: f64,
}

/// Evaluates the volume potential of `g` and its first and second space
/// derivatives and time derivative at `(t, x)`.
pub fn volume_potential(
    field: &dyn CoefficientField,
    g: impl Fn(f64, &Point) -> f64,
    t0: f64,
    t: f64,
    x: &Point,
    cfg: &ParametrixConfig,
) -> Result<VolumePotential> {
    if !(t > t0) {
        return Err(Error::Domain(format!("volume potential needs t > t0, got t={t}, t0={t0}")));
    }
    let d = field.dim();
    let lambda = field.lambda();
    let right = 1.0 - 0.5 * field.alpha();
    let rule = singular_rule(t0, t, 0.0, right, &field.breakpoints(), 2 * cfg.quad_nodes);
    let mut out = VolumePotential {
        value: 0.0,
        gradient: Point::zeros(),
        hessian: SymMatrix::zeros(),
        time_derivative: g(t, x),
    };
    for (&s, &w) in rule.nodes.iter().zip(&rule.weights) {
        let sd = (lambda * (t - s)).sqrt();
        let h = (t - s).sqrt() / (lambda.sqrt() * cfg.points_per_sigma);
        let half = cfg.window_sigmas * sd;
        let n = ((2.0 * half / h).ceil() as usize + 1).max(3);
        let step = 2.0 * half / (n - 1) as f64;
        let mut win = Window { dim: d, lo: Point::zeros(), step: Point::zeros(), n: [1; 3] };
        for i in 0..d {
            win.lo[i] = x[i] - half;
            win.step[i] = step;
            win.n[i] = n;
        }
        let mut err = None;
        win.for_each(|y, hy| {
            if err.is_some() {
                return;
            }
            let gv = g(s, y);
            if gv == 0.0 {
                return;
            }
            let cov = field.integrated_diffusion(y, s, t);
            match Gaussian::new(&cov, d) {
                Ok(k) => {
                    let j = k.jet(&(x - y));
                    let c = w * hy * gv;
                    out.value += c * j.value;
                    out.gradient += j.gradient * c;
                    out.hessian += j.hessian * c;
                    out.time_derivative += c * 0.5 * contract(&field.diffusion(t, y), &j.hessian, d);
                }
                Err(e) => err = Some(e),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
    }
    Ok(out)
}
