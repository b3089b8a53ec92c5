use std::sync::Arc;

use parametrix_core::coefficients::{AffineSigma, ConstantSigma, GaussianBumpSigma, SeparableField};
use parametrix_core::flow::{flow_determinant_check, invert_flow, simulate_flow, BrownianPath, Scheme};
use parametrix_core::linalg::{noise_matrix, point, Point};
use parametrix_core::parametrix::{ParametrixConfig, Pole};
use parametrix_core::quadrature::SpaceGrid;
use parametrix_core::spde::{
    assemble_spde_kernel, rms_decay, spde_residual_check, spde_solve, stochastic_heat_kernel, stochastic_heat_solution,
    FnSolution, SpdeProblem,
};

fn heat_problem(sigma: f64, source: f64) -> SpdeProblem {
    SpdeProblem {
        field: Arc::new(SeparableField::isotropic(1, 1.0, 2.0).with_source(source)),
        sigma: Arc::new(ConstantSigma::new(1, 1, noise_matrix(1, 1, &[sigma]))),
        scheme: Scheme::EulerMaruyama,
        seeds: SpaceGrid::cube(1, -16.0, 16.0, 129).unwrap(),
        cfg: ParametrixConfig::default(),
        panel_knots: 0,
    }
}

fn poles() -> SpaceGrid {
    SpaceGrid::cube(1, -12.0, 12.0, 241).unwrap()
}

fn xs() -> Vec<Point> {
    [-1.5, -0.3, 0.0, 0.8, 2.0].iter().map(|x| point(&[*x])).collect()
}

#[test]
fn constant_datum_is_preserved() {
    let problem = heat_problem(0.6, 0.0);
    let path = BrownianPath::generate(4, 0, 0.0, 1.0, 16, 1).unwrap();
    let u = spde_solve(&problem, &path, |_| 1.0, &poles(), 1.0, &xs()).unwrap();
    for v in u {
        assert!((v - 1.0).abs() < 1e-6, "{v}");
    }
}

#[test]
fn unit_source_accumulates_time() {
    let problem = heat_problem(0.6, 1.0);
    let path = BrownianPath::generate(4, 1, 0.0, 0.5, 8, 1).unwrap();
    let u = spde_solve(&problem, &path, |_| 0.0, &poles(), 0.5, &xs()).unwrap();
    for v in u {
        assert!((v - 0.5).abs() < 1e-6, "{v}");
    }
}

#[test]
fn gaussian_datum_matches_the_closed_form() {
    let (s, s0) = (0.6, 0.5);
    let problem = heat_problem(s, 0.0);
    let path = BrownianPath::generate(9, 3, 0.0, 1.0, 32, 1).unwrap();
    let datum = move |x: &Point| (-x[0] * x[0] / (2.0 * s0 * s0)).exp() / (2.0 * std::f64::consts::PI * s0 * s0).sqrt();
    for n in [8, 32] {
        let t = path.time(n);
        let w = path.value(n)[0];
        let u = spde_solve(&problem, &path, datum, &poles(), t, &xs()).unwrap();
        for (x, v) in xs().iter().zip(u) {
            let exact = stochastic_heat_solution(1.0, s, s0, w, t, x[0]).value;
            assert!((v - exact).abs() < 1e-6 * exact.max(1e-3), "t={t} x={}: {v} vs {exact}", x[0]);
        }
    }
}

#[test]
fn kernel_matches_the_closed_form_on_every_knot() {
    let problem = heat_problem(0.6, 0.0);
    let path = BrownianPath::generate(42, 5, 0.0, 1.0, 64, 1).unwrap();
    let xi = point(&[0.2]);
    let k = assemble_spde_kernel(&problem, &path, Pole::new(0.0, xi), 1.0).unwrap();
    for n in [1, 7, 33, 64] {
        let t = path.time(n);
        let w = path.value(n)[0];
        for x in [-1.0, 0.0, 0.5, 1.7] {
            let v = k.value(t, &point(&[x])).unwrap();
            let e = stochastic_heat_kernel(1.0, 0.6, w, t, x, 0.0, 0.2).unwrap();
            assert!((v - e).abs() <= 1e-9 * e, "t={t} x={x}: {v} vs {e}");
        }
    }
}

#[test]
fn closed_form_solution_has_a_vanishing_residual() {
    let (s, s0) = (0.6, 0.5);
    let field = SeparableField::isotropic(1, 1.0, 2.0);
    let sigma = ConstantSigma::new(1, 1, noise_matrix(1, 1, &[s]));
    let mut reports = Vec::new();
    for p in 0..20 {
        let path = BrownianPath::generate(12, p, 0.0, 1.0, 256, 1).unwrap();
        let u = FnSolution::new(path, move |n, path: &BrownianPath, x: &Point| {
            stochastic_heat_solution(1.0, s, s0, path.value(n)[0], path.time(n), x[0])
        });
        reports.push(spde_residual_check(&u, &field, &sigma, &xs(), &[16, 8, 4, 2, 1]).unwrap());
    }
    let r = rms_decay(&reports).unwrap();
    assert!(r.slope > 0.4, "slope {} defects {:?}", r.slope, r.defects);
    assert!(r.defects[r.defects.len() - 1] < r.defects[0]);
}

#[test]
fn linear_noise_determinant_is_the_stochastic_exponential() {
    // sigma(x) = x / 2: det D x_t = exp(-W_t / 2 - t / 8).
    let sigma = Arc::new(AffineSigma::scalar_linear(0.5));
    let seeds = SpaceGrid::cube(1, -2.0, 2.0, 9).unwrap();
    for scheme in [Scheme::EulerMaruyama, Scheme::Milstein] {
        let path = BrownianPath::generate(8, 0, 0.0, 1.0, 4096, 1).unwrap();
        let fs = simulate_flow(sigma.clone(), path.clone(), seeds.clone(), scheme).unwrap();
        let exact = (-0.5 * path.value(4096)[0] - 0.125).exp();
        let r = flow_determinant_check(&fs).unwrap();
        assert!((r.min_det / exact - 1.0).abs() < 0.02, "{scheme:?}: {} vs {exact}", r.min_det);
        assert!(r.max_deviation_ito < 0.02, "{scheme:?}: {}", r.max_deviation_ito);
    }
}

#[test]
fn inverse_flow_is_a_left_inverse() {
    let sigma = Arc::new(GaussianBumpSigma::new(1, 1, noise_matrix(1, 1, &[0.4]), Point::zeros(), 1.0));
    let seeds = SpaceGrid::cube(1, -8.0, 8.0, 129).unwrap();
    let path = BrownianPath::generate(3, 7, 0.0, 1.0, 64, 1).unwrap();
    let fs = simulate_flow(sigma, path, seeds, Scheme::Milstein).unwrap();
    for y in [-2.0, -0.45, 0.0, 0.3, 1.9] {
        let y = point(&[y]);
        let x = fs.state_from(&y, 64).unwrap().x;
        let (back, _) = invert_flow(&fs, 64, &x).unwrap();
        assert!((back - y).norm() < 1e-9);
    }
}
