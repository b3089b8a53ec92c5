use approx::assert_relative_eq;
use parametrix_core::bounds::{geometric_grid, sandwich_fit, SandwichMode};
use parametrix_core::coefficients::TimeProfile;
use parametrix_core::flow::BrownianPath;
use parametrix_core::gauss_kernel::{heat_kernel, log_gamma_lambda};
use parametrix_core::linalg::{point, sym_matrix};
use parametrix_core::quadrature::{gauss_legendre, SpaceGrid};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn heat_kernel_has_unit_mass(v in 0.2f64..2.0, c in -0.4f64..0.4, w in 0.5f64..1.5) {
        let cov = sym_matrix(2, &[v, c * (v * w).sqrt(), c * (v * w).sqrt(), w]);
        let grid = SpaceGrid::cube(2, -12.0, 12.0, 241).unwrap();
        let mass: f64 = (0..grid.len()).map(|k| grid.weight(k) * heat_kernel(&cov, &grid.node(k), 2).unwrap()).sum();
        prop_assert!((mass - 1.0).abs() < 1e-8, "mass {mass}");
    }

    #[test]
    fn heat_kernel_is_even(v in 0.1f64..3.0, x in -4.0f64..4.0, y in -4.0f64..4.0) {
        let cov = sym_matrix(2, &[v, 0.1, 0.1, 1.0]);
        let p = heat_kernel(&cov, &point(&[x, y]), 2).unwrap();
        let q = heat_kernel(&cov, &point(&[-x, -y]), 2).unwrap();
        assert_relative_eq!(p, q, max_relative = 1e-14);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials(n in 2usize..20, k in 0u32..6) {
        let deg = k.min(2 * n as u32 - 1);
        let (x, w) = gauss_legendre(n);
        let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
        let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
        prop_assert!((q - exact).abs() < 1e-13);
    }

    #[test]
    fn time_integrals_are_additive(
        v0 in 0.5f64..2.0, v1 in 0.5f64..2.0, knot in 0.1f64..0.9,
        a in 0.0f64..0.3, m in 0.3f64..0.7, b in 0.7f64..1.0,
    ) {
        let p = TimeProfile::Piecewise { knots: vec![knot], values: vec![v0, v1] };
        assert_relative_eq!(p.integral(a, b), p.integral(a, m) + p.integral(m, b), max_relative = 1e-12);
    }

    #[test]
    fn coarsening_keeps_the_path(seed in 0u64..1000, factor in 1usize..5) {
        let path = BrownianPath::generate(seed, 3, 0.0, 1.0, 48, 1).unwrap();
        let coarse = path.coarsen(factor.min(4)).unwrap();
        let m = 48 / coarse.steps();
        for n in 0..=coarse.steps() {
            assert_relative_eq!(coarse.value(n)[0], path.value(n * m)[0], epsilon = 1e-13);
        }
    }

    #[test]
    fn sandwich_constants_bracket_every_sample(
        values in prop::collection::vec((0.05f64..1.0, -2.0f64..2.0, 0.5f64..2.0), 1..30),
    ) {
        let lambda = 1.5;
        let samples: Vec<_> = values
            .iter()
            .map(|(t, z, f)| {
                let w = point(&[z * t.sqrt()]);
                (*t, w, f * log_gamma_lambda(1.0, 1, *t, &w).exp())
            })
            .collect();
        let grid = geometric_grid(1.0 / lambda, lambda, 25);
        let fit = sandwich_fit(&samples, 1, &SandwichMode::Independent { upper: lambda, lower_grid: grid }).unwrap();
        for (t, w, v) in &samples {
            let upper = fit.scale * log_gamma_lambda(lambda, 1, *t, w).exp();
            let lower = log_gamma_lambda(fit.exponent, 1, *t, w).exp() / fit.scale;
            prop_assert!(*v <= upper * (1.0 + 1e-12));
            prop_assert!(*v >= lower * (1.0 - 1e-12));
        }
    }

    #[test]
    fn geometric_grids_are_increasing(lo in 0.1f64..1.0, ratio in 1.01f64..10.0, n in 2usize..50) {
        let g = geometric_grid(lo, lo * ratio, n);
        prop_assert_eq!(g.len(), n);
        prop_assert!(g.windows(2).all(|w| w[1] > w[0]));
        prop_assert_eq!(g[n - 1], lo * ratio);
    }
}
