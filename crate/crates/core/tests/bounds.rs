use parametrix_core::bounds::{
    chain_parameters, geometric_grid, MAX_LISTED_LINKS, lower_bound_certify, rho_lambda, sandwich_fit, sharp_rho_lambda, t_lambda, SandwichMode,
};
use parametrix_core::gauss_kernel::{gamma_lambda, heat_kernel};
use parametrix_core::linalg::{point, scaled_identity, Point};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn comparison_radius_separates_the_kernels() {
    for d in 1..=3 {
        for lambda in [1.2, 1.5, 3.0] {
            let sharp = sharp_rho_lambda(lambda, d).unwrap();
            let rho = rho_lambda(lambda, d).unwrap();
            let t = 0.7;
            let at = |r: f64| {
                let mut x = Point::zeros();
                x[0] = r * f64::sqrt(t);
                (gamma_lambda(lambda, d, t, &x), gamma_lambda(1.0 / lambda, d, t, &x))
            };
            let (hi, lo) = at(sharp);
            assert!((hi / lo - 1.0).abs() < 1e-10, "d={d} lambda={lambda}");
            let (hi, lo) = at(rho);
            assert!(hi <= lo);
            let (hi, lo) = at(1.01 * sharp);
            assert!(hi > lo);
        }
    }
}

#[test]
fn heat_kernel_is_certified_at_random_points() {
    let lambda = 1.5;
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for _ in 0..50 {
        let t = 0.01 + 0.99 * rng.random::<f64>();
        let x = point(&[4.0 * rng.random::<f64>() - 2.0]);
        let xi = Point::zeros();
        let g = heat_kernel(&scaled_identity(1, t), &x, 1).unwrap();
        let cert = lower_bound_certify(t, 0.0, &x, &xi, lambda, 1.0, 1, 1.0, 0.0, Some(g)).unwrap();
        assert_eq!(cert.holds, Some(true), "t={t} x={}: {} > {g}", x[0], cert.bound);
        assert!(cert.chain.inequalities_hold());
    }
}

#[test]
fn chains_respect_their_link_conditions() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    for _ in 0..200 {
        let d = rng.random_range(1..=3);
        let lambda = 1.1 + 3.0 * rng.random::<f64>();
        let c = 2.0 * rng.random::<f64>();
        let t = 0.001 + rng.random::<f64>();
        let mut x = Point::zeros();
        for a in 0..d {
            x[a] = 6.0 * rng.random::<f64>() - 3.0;
        }
        let spec = chain_parameters(t, 0.0, &x, &Point::zeros(), lambda, 0.5, d, 1.01, c).unwrap();
        assert!(spec.inequalities_hold(), "{spec:?}");
        assert!(spec.link <= t_lambda(c, lambda, 0.5, d, 1.01) * (1.0 + 1e-12));
        let listed = if spec.m <= MAX_LISTED_LINKS { spec.m + 2 } else { 0 };
        assert_eq!(spec.times.len(), listed);
    }
}

#[test]
fn certification_needs_a_usable_constant() {
    let x = point(&[0.3]);
    assert!(lower_bound_certify(0.5, 0.0, &x, &Point::zeros(), 1.5, 1.0, 1, 1.0, f64::NAN, None).is_err());
    assert!(lower_bound_certify(0.5, 0.0, &x, &Point::zeros(), 1.5, 1.0, 1, 1.0, -1.0, None).is_err());
}

#[test]
fn heat_kernel_sits_inside_its_own_sandwich() {
    let mut samples = Vec::new();
    for t in [0.1, 0.5, 1.0] {
        for z in -20..=20 {
            let w = point(&[0.25 * z as f64 * f64::sqrt(t)]);
            samples.push((t, w, heat_kernel(&scaled_identity(1, t), &w, 1).unwrap()));
        }
    }
    let mode = SandwichMode::Independent { upper: 1.5, lower_grid: geometric_grid(1.0 / 1.5, 1.5, 25) };
    let fit = sandwich_fit(&samples, 1, &mode).unwrap();
    assert!(fit.exponent <= 1.0 + 1e-12);
    let tied = sandwich_fit(&samples, 1, &SandwichMode::Tied { grid: geometric_grid(1.0, 6.0, 49) }).unwrap();
    assert!((tied.exponent - 1.0).abs() < 1e-12);
    assert!((tied.scale - 1.0).abs() < 1e-9);
}
