use std::sync::Arc;

use parametrix_core::coefficients::{SeparableField, SpaceProfile, TimeProfile};
use parametrix_core::gauss_kernel::heat_kernel;
use parametrix_core::linalg::{point, scaled_identity};
use parametrix_core::parametrix::{gamma_assemble, gamma_derivatives, phi_solve, ParametrixConfig, ParametrixTable, Pole};

fn variable_table() -> ParametrixTable {
    let field = SeparableField::scalar(1.0, TimeProfile::constant(), SpaceProfile::sine(0.25, 1.0), 1.5, 1.0);
    phi_solve(Arc::new(field), Pole::new(0.0, point(&[0.2])), &ParametrixConfig::default()).unwrap()
}

#[test]
fn time_dependent_constant_diffusion_is_exact() {
    let profile = TimeProfile::Piecewise { knots: vec![0.3, 0.6], values: vec![1.0, 0.7, 1.2] };
    let field = SeparableField::scalar(0.9, profile.clone(), SpaceProfile::Constant, 2.0, 1.0);
    let xi = point(&[-0.4]);
    let table = phi_solve(Arc::new(field), Pole::new(0.0, xi), &ParametrixConfig::default()).unwrap();
    assert!(table.is_trivial());
    for t in [0.05, 0.3, 0.45, 0.9] {
        let x = point(&[0.5]);
        let var = 0.9 * profile.integral(0.0, t);
        let exact = heat_kernel(&scaled_identity(1, var), &(x - xi), 1).unwrap();
        assert!((gamma_assemble(&table, t, &x).unwrap() - exact).abs() <= 1e-12 * exact);
    }
}

#[test]
fn constant_drift_moves_the_kernel() {
    // d_t u = u''/2 + b u' transports to the left: the kernel centres at xi - b (t - tau).
    let b = 0.4;
    let field = SeparableField::isotropic(1, 1.0, 2.0).with_drift(point(&[b]));
    let xi = point(&[0.0]);
    let table = phi_solve(Arc::new(field), Pole::new(0.0, xi), &ParametrixConfig::default()).unwrap();
    for t in [0.1, 0.5, 1.0] {
        for z in [-2.0, -1.0, 0.0, 1.0, 2.0] {
            let x = point(&[-b * t + z * f64::sqrt(t)]);
            let exact = (-z * z / 2.0).exp() / (2.0 * std::f64::consts::PI * t).sqrt();
            let v = gamma_assemble(&table, t, &x).unwrap();
            assert!((v - exact).abs() < 1e-4 * exact, "t={t} z={z}: {v} vs {exact}");
        }
    }
}

#[test]
fn derivatives_match_differences() {
    let table = variable_table();
    let (t, x) = (0.6, point(&[0.7]));
    let j = gamma_derivatives(&table, t, &x).unwrap();
    let g = |t: f64, s: f64| gamma_assemble(&table, t, &point(&[s])).unwrap();
    let h = 1e-3;
    let dx = (g(t, 0.7 + h) - g(t, 0.7 - h)) / (2.0 * h);
    let dxx = (g(t, 0.7 + h) - 2.0 * g(t, 0.7) + g(t, 0.7 - h)) / (h * h);
    let dt = (g(t + h, 0.7) - g(t - h, 0.7)) / (2.0 * h);
    // Values and jets use differently graded time rules.
    assert!((j.value - g(t, 0.7)).abs() < 1e-6 * j.value);
    assert!((j.gradient[0] - dx).abs() < 1e-5, "{} {dx}", j.gradient[0]);
    assert!((j.hessian[(0, 0)] - dxx).abs() < 1e-4, "{} {dxx}", j.hessian[(0, 0)]);
    assert!((j.time_derivative - dt).abs() < 1e-4, "{} {dt}", j.time_derivative);
}

#[test]
fn kernel_solves_the_equation_away_from_the_pole() {
    let table = variable_table();
    let field = table.field().clone();
    for (t, s) in [(0.3, 0.0), (0.6, 0.9), (1.0, -0.8)] {
        let x = point(&[s]);
        let j = gamma_derivatives(&table, t, &x).unwrap();
        let a = field.diffusion(t, &x)[(0, 0)];
        let lu = 0.5 * a * j.hessian[(0, 0)];
        assert!((j.time_derivative - lu).abs() < 1e-4 * j.value.max(1e-3), "t={t} x={s}: {} vs {lu}", j.time_derivative);
    }
}

#[test]
fn tables_round_trip_through_files() {
    let table = variable_table();
    let dir = tempfile::tempdir().unwrap();
    table.write(dir.path(), "pole").unwrap();
    let back = ParametrixTable::read(dir.path(), "pole", table.field().clone()).unwrap();
    for s in [-1.0, 0.2, 1.3] {
        let x = point(&[s]);
        assert_eq!(gamma_assemble(&table, 0.7, &x).unwrap(), gamma_assemble(&back, 0.7, &x).unwrap());
    }
}

#[test]
fn positive_near_the_pole() {
    let table = variable_table();
    for t in [0.02, 0.2, 1.0] {
        for z in -6..=6 {
            let x = point(&[0.2 + z as f64 * 0.5 * f64::sqrt(t)]);
            assert!(gamma_assemble(&table, t, &x).unwrap() > 0.0);
        }
    }
}
