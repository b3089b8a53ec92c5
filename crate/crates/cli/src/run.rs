//! Scenario pipelines: validation, build and verification stages per kind.

use std::path::Path;
use std::sync::Arc;

use parametrix_core::bounds::{geometric_grid, lower_bound_certify, sandwich_fit, t_lambda, KernelSample, SandwichMode};
use parametrix_core::coefficients::{validate_ellipticity, validate_sigma_decay, CoefficientField, SpaceProfile, TimeProfile};
use parametrix_core::flow::{flow_determinant_check, BrownianPath};
use parametrix_core::gauss_kernel::heat_kernel;
use parametrix_core::itow::{coercivity_margin, reduced_diffusion};
use parametrix_core::linalg::{coords, norm, Point};
use parametrix_core::parametrix::{fit_correction_constant, phi_solve, ParametrixTable, Pole, SliceKind};
use parametrix_core::quadrature::SpaceGrid;
use parametrix_core::spde::{
    rms_decay, spde_residual_check, stochastic_heat_kernel, KernelSolution, SpdeFrame, SpdeKernel, SpdeProblem,
};
use parametrix_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::report::{
    Check, Comparison, FitRecord, Histogram, Histograms, KernelCsv, PathRecord, ResidualRecord, Summary, WriteError,
    Writer,
};
use crate::scenario::{Kind, Scenario};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error(transparent)]
    Write(#[from] WriteError),
}

/// Runs every stage of the scenario and writes the report into `out`.
///
/// Failed checks are recorded in the summary; only errors that prevent a
/// report are returned.
pub fn run_scenario(sc: &Scenario, out: &Path) -> Result<Summary, RunError> {
    let mut w = Writer::new(out)?;
    let mut summary = Summary::new(&sc.name, sc.kind, sc.seed);
    match sc.kind {
        Kind::Deterministic => deterministic(sc, &mut w, &mut summary, false)?,
        Kind::Certify => deterministic(sc, &mut w, &mut summary, true)?,
        Kind::Spde => stochastic(sc, &mut w, &mut summary)?,
    }
    w.finish(&mut summary)?;
    Ok(summary)
}

/// `(t, x)` pairs where coefficients are sampled: every evaluation time and
/// the initial one, crossed with the evaluation grid.
fn coefficient_samples(sc: &Scenario, extra: Option<&SpaceGrid>) -> Vec<(f64, Point)> {
    let grid = sc.eval_grid();
    let mut times = vec![sc.grid.tau];
    times.extend(&sc.grid.times);
    let mut out = Vec::new();
    for t in times {
        out.extend(grid.nodes().map(|x| (t, x)));
        if let Some(g) = extra {
            out.extend(g.nodes().map(|x| (t, x)));
        }
    }
    out
}

fn in_region(sc: &Scenario, dt: f64, w: &Point) -> bool {
    norm(w, sc.field.dim) <= sc.checks.region * dt.sqrt()
}

fn core_error_check(name: &str, comparison: Comparison, threshold: f64, e: &Error) -> Check {
    Check::failed(name, comparison, threshold, e.to_string())
}

fn ellipticity_check(sc: &Scenario, field: &dyn CoefficientField) -> Check {
    match validate_ellipticity(field, &coefficient_samples(sc, None)) {
        Ok(r) => {
            let worst = (r.min_eigenvalue * r.declared_lambda)
                .min(r.declared_lambda / r.max_eigenvalue)
                .min(r.declared_lambda / r.max_drift.max(f64::MIN_POSITIVE))
                .min(r.declared_lambda / r.max_potential.max(f64::MIN_POSITIVE));
            // `worst >= 1` exactly when every sampled quantity respects lambda.
            Check::new("ellipticity", worst, Comparison::AtLeast, 1.0).with_detail(format!(
                "eigenvalues in [{:.4e}, {:.4e}], lambda {}",
                r.min_eigenvalue, r.max_eigenvalue, r.declared_lambda
            ))
        }
        Err(e) => core_error_check("ellipticity", Comparison::AtLeast, 1.0, &e),
    }
}

/// Closed form of a field with constant diffusion matrix in space, constant
/// potential and no drift: `exp(c dt) Gamma^heat(int a, x - xi)`.
fn analytic_kernel(sc: &Scenario) -> Option<impl Fn(f64, &Point, &Point) -> Result<f64, Error>> {
    let f = sc.separable();
    let driftless = sc.field.drift.as_ref().is_none_or(|b| b.iter().all(|v| *v == 0.0));
    if !f.is_space_homogeneous() || !driftless {
        return None;
    }
    let tau = sc.grid.tau;
    let d = sc.field.dim;
    let c = sc.field.potential;
    Some(move |t: f64, x: &Point, xi: &Point| {
        let cov = f.integrated_diffusion(xi, tau, t);
        Ok((c * (t - tau)).exp() * heat_kernel(&cov, &(x - xi), d)?)
    })
}

fn deterministic(sc: &Scenario, w: &mut Writer, summary: &mut Summary, certify: bool) -> Result<(), RunError> {
    let field = sc.field();
    let d = sc.field.dim;
    if sc.checks.ellipticity {
        let c = ellipticity_check(sc, field.as_ref());
        let ok = c.passed;
        summary.checks.push(c);
        if !ok {
            return Ok(());
        }
    }
    let poles = sc.poles();
    let cfg = sc.config();
    let tau = sc.grid.tau;
    let tables = poles
        .par_iter()
        .map(|xi| phi_solve(field.clone(), Pole::new(tau, *xi), &cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let grid = sc.eval_grid();
    let nodes: Vec<Point> = grid.nodes().collect();
    // values[pole][time][node]
    let values = tables
        .par_iter()
        .map(|table| -> Result<Vec<Vec<f64>>, Error> {
            sc.grid
                .times
                .iter()
                .map(|&t| {
                    let slice = table.slice(t, SliceKind::Value)?;
                    nodes.iter().map(|x| slice.value(x)).collect()
                })
                .collect()
        })
        .collect::<Result<Vec<_>, _>>()?;
    for (i, xi) in poles.iter().enumerate() {
        let mut csv = KernelCsv::new(d);
        for (k, &t) in sc.grid.times.iter().enumerate() {
            for (x, v) in nodes.iter().zip(&values[i][k]) {
                csv.row(t, &coords(x, d), &coords(xi, d), *v);
            }
        }
        w.write(&format!("kernel_{i}.csv"), &csv.into_bytes())?;
    }
    if sc.checks.closed_form {
        if let Some(exact) = analytic_kernel(sc) {
            let mut worst = 0.0f64;
            for (i, xi) in poles.iter().enumerate() {
                for (k, &t) in sc.grid.times.iter().enumerate() {
                    for (x, v) in nodes.iter().zip(&values[i][k]) {
                        if !in_region(sc, t - tau, &(x - xi)) {
                            continue;
                        }
                        let e = exact(t, x, xi)?;
                        worst = worst.max((v - e).abs() / e);
                    }
                }
            }
            summary.checks.push(Check::new("closed_form_kernel", worst, Comparison::AtMost, sc.checks.closed_form_tol));
        }
    }
    if sc.checks.sandwich {
        let lambda = sc.field.lambda;
        let mode = SandwichMode::Independent { upper: lambda, lower_grid: geometric_grid(1.0 / lambda, lambda, 41) };
        let mut worst_scale = 0.0f64;
        let mut worst_exponent = 0.0f64;
        let mut failure = None;
        for (i, xi) in poles.iter().enumerate() {
            let samples = region_samples(sc, &nodes, xi, &values[i]);
            match sandwich_fit(&samples, d, &mode) {
                Ok(fit) => {
                    worst_scale = worst_scale.max(fit.scale);
                    worst_exponent = worst_exponent.max(fit.exponent);
                    summary.constants.sandwich.push(FitRecord {
                        pole: coords(xi, d),
                        scale: fit.scale,
                        exponent: fit.exponent,
                        upper_argmax: fit.upper_argmax,
                        lower_argmax: fit.lower_argmax,
                    });
                }
                Err(e) => failure = Some(e),
            }
        }
        if !poles.is_empty() {
            summary.checks.push(match failure {
                Some(e) => core_error_check("gaussian_sandwich", Comparison::AtMost, lambda, &e),
                None => {
                    // The value is the largest lower exponent C2; C1 must be finite as well.
                    let mut c = Check::new("gaussian_sandwich", worst_exponent, Comparison::AtMost, lambda)
                        .with_detail(format!("largest C1 = {worst_scale:.6e} over {} poles", poles.len()));
                    c.passed &= worst_scale.is_finite();
                    c
                }
            });
        }
    }
    if certify {
        certify_stage(sc, w, summary, &tables, &nodes)?;
    }
    Ok(())
}

fn region_samples(sc: &Scenario, nodes: &[Point], xi: &Point, values: &[Vec<f64>]) -> Vec<KernelSample> {
    let tau = sc.grid.tau;
    let mut out = Vec::new();
    for (k, &t) in sc.grid.times.iter().enumerate() {
        for (x, v) in nodes.iter().zip(&values[k]) {
            let disp = x - xi;
            if in_region(sc, t - tau, &disp) {
                out.push((t - tau, disp, *v));
            }
        }
    }
    out
}

fn certify_stage(
    sc: &Scenario,
    w: &mut Writer,
    summary: &mut Summary,
    tables: &[ParametrixTable],
    nodes: &[Point],
) -> Result<(), RunError> {
    let spec = sc.certify.as_ref().expect("validated certify section");
    let d = sc.field.dim;
    let tau = sc.grid.tau;
    let horizon = sc.grid.horizon;
    let (lambda, alpha) = (sc.field.lambda, sc.field.alpha);
    let c_fit = match spec.c_fit {
        Some(c) => c,
        None => {
            let mut samples = Vec::new();
            for table in tables {
                let xi = table.pole().xi;
                for &t in &sc.grid.times {
                    let slice = table.slice(t, SliceKind::Value)?;
                    for x in nodes {
                        let disp = x - xi;
                        if in_region(sc, t - tau, &disp) {
                            samples.push((t - tau, disp, slice.correction(x)?));
                        }
                    }
                }
            }
            fit_correction_constant(samples, alpha, lambda, d)
        }
    };
    summary.constants.c_fit = Some(c_fit);
    summary.constants.t_lambda = Some(t_lambda(c_fit, lambda, alpha, d, horizon - tau));
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let mut queries = Vec::new();
    for (i, table) in tables.iter().enumerate() {
        for q in 0..spec.queries {
            let t = tau + (horizon - tau) * (1.0 - rng.random::<f64>());
            let mut x = table.pole().xi;
            for a in 0..d {
                x[a] += spec.radius * (2.0 * rng.random::<f64>() - 1.0);
            }
            queries.push((i, q, t, x));
        }
    }
    let results = queries
        .par_iter()
        .map(|&(i, _, t, x)| -> Result<_, Error> {
            let table = &tables[i];
            let g = table.gamma(t, &x)?;
            Ok(lower_bound_certify(t, tau, &x, &table.pole().xi, lambda, alpha, d, horizon - tau, c_fit, Some(g)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut violations = 0usize;
    let mut unavailable = Vec::new();
    for ((i, q, _, _), r) in queries.iter().zip(results) {
        match r {
            Ok(cert) => {
                if cert.holds != Some(true) {
                    violations += 1;
                }
                w.json(&format!("certificates/pole{i}_q{q}.json"), &cert)?;
            }
            Err(e) => unavailable.push(format!("pole {i} query {q}: {e}")),
        }
    }
    summary.checks.push(
        Check::new("lower_bound_violations", violations as f64, Comparison::AtMost, 0.0)
            .with_detail(format!("{} queries, C = {c_fit:.4e}", queries.len())),
    );
    let mut c = Check::new("certificates_unavailable", unavailable.len() as f64, Comparison::AtMost, 0.0);
    if let Some(first) = unavailable.first() {
        c = c.with_detail(first.clone());
    }
    summary.checks.push(c);
    Ok(())
}

/// Innermost cause of a staged error.
fn root(e: &Error) -> &Error {
    match e {
        Error::Stage { source, .. } => root(source),
        e => e,
    }
}

/// One-dimensional constant noise over a field with constant diffusion and
/// nothing else: the kernel has a closed form.
fn stochastic_heat_params(sc: &Scenario) -> Option<(f64, f64)> {
    let s = sc.sigma.as_ref()?.constant_scalar()?;
    let f = &sc.field;
    let constant_time = matches!(f.time, TimeProfile::Affine { slope, .. } if slope == 0.0);
    let plain = f.dim == 1
        && constant_time
        && f.space == SpaceProfile::Constant
        && f.drift.as_ref().is_none_or(|b| b.iter().all(|v| *v == 0.0))
        && f.potential == 0.0
        && f.source == 0.0;
    if !plain {
        return None;
    }
    let a = sc.field().diffusion(0.0, &Point::zeros())[(0, 0)];
    Some((a.sqrt(), s))
}

struct PathOutcome {
    record: PathRecord,
    /// `values[pole][time][node]`, kept for the paths whose slices are written.
    values: Option<Vec<Vec<Vec<f64>>>>,
    residual: Option<parametrix_core::spde::ResidualDecay>,
    flow_csv: Option<Vec<u8>>,
}

fn stochastic(sc: &Scenario, w: &mut Writer, summary: &mut Summary) -> Result<(), RunError> {
    let spec = sc.spde.as_ref().expect("validated spde section");
    let field = sc.field();
    let sigma = sc.sigma().expect("validated sigma section");
    let d = sc.field.dim;
    let tau = sc.grid.tau;
    let horizon = sc.grid.horizon;
    let seeds = SpaceGrid::cube(d, spec.seed_lo, spec.seed_hi, spec.seed_n)?;
    let samples = coefficient_samples(sc, None);

    let margin = coercivity_margin(|t, x| reduced_diffusion(field.as_ref(), sigma.as_ref(), t, x), d, &samples);
    let c = match margin {
        Ok((m, (t, x))) => Check::new("coercivity_margin", m, Comparison::Above, 0.0)
            .with_detail(format!("smallest eigenvalue of a - sigma sigma* at t={t}, x={:?}", coords(&x, d))),
        Err(e) => core_error_check("coercivity_margin", Comparison::Above, 0.0, &e),
    };
    let ok = c.passed;
    summary.checks.push(c);
    let c = match validate_sigma_decay(sigma.as_ref(), &samples) {
        Ok(r) => {
            let worst = r.max_weighted.iter().copied().fold(0.0, f64::max);
            Check::new("sigma_decay", worst, Comparison::AtMost, r.envelope_bound)
                .with_detail(format!("weighted derivatives {:?}, epsilon {}", r.max_weighted, r.envelope_epsilon))
        }
        Err(e) => core_error_check("sigma_decay", Comparison::AtMost, 0.0, &e),
    };
    let ok = ok && c.passed;
    summary.checks.push(c);
    if !ok {
        return Ok(());
    }

    let problem = SpdeProblem { field: field.clone(), sigma: sigma.clone(), scheme: spec.scheme, seeds, cfg: sc.config(), panel_knots: spec.panel_knots };
    let poles = sc.poles();
    let grid = sc.eval_grid();
    let nodes: Vec<Point> = grid.nodes().collect();
    let knots: Vec<usize> = sc
        .grid
        .times
        .iter()
        .map(|t| (((t - tau) / (horizon - tau)) * spec.steps as f64).round() as usize)
        .collect();
    let closed = if sc.checks.closed_form { stochastic_heat_params(sc) } else { None };
    let residual_paths = if sc.checks.residual { spec.residual_paths.unwrap_or(spec.paths).min(spec.paths) } else { 0 };
    let datum_sd = spec.datum_sd.unwrap_or(1.0);
    let residual_points: Vec<Point> = spec.residual_points.iter().map(|p| crate::scenario::point_of(p)).collect();
    let pole_grid = match (spec.pole_lo, spec.pole_hi, spec.pole_n) {
        (Some(lo), Some(hi), Some(n)) if sc.checks.residual => Some(SpaceGrid::cube(d, lo, hi, n)?),
        _ => None,
    };
    let tied = |lambda: f64| SandwichMode::Tied { grid: geometric_grid(1.0, 4.0 * lambda, 49) };

    let outcomes = (0..spec.paths as u64)
        .into_par_iter()
        .map(|p| -> Result<PathOutcome, Error> {
            let path = BrownianPath::generate(sc.seed, p, tau, horizon, spec.steps, sigma.channels())?;
            let frame = Arc::new(SpdeFrame::build(&problem, &path, tau, horizon)?);
            let det = flow_determinant_check(frame.flow())?;
            let tr = frame.field().report().clone();
            let lambda = frame.field().lambda();
            let mut record = PathRecord {
                seed: sc.seed,
                path: p,
                mu1: Vec::new(),
                mu2: Vec::new(),
                upper_argmax: Vec::new(),
                lower_argmax: Vec::new(),
                min_det: det.min_det,
                det_deviation: det.max_deviation_ito,
                coercivity_margin: tr.margin,
                lambda,
                closed_form_error: None,
                residual_slope: None,
            };
            let mut values = Vec::with_capacity(poles.len());
            let mut closed_err = 0.0f64;
            for xi in &poles {
                let kernel = SpdeKernel::from_frame(frame.clone(), &problem, *xi)?;
                let mut per_time = Vec::with_capacity(knots.len());
                let mut fit_samples = Vec::new();
                for (&n, &t) in knots.iter().zip(&sc.grid.times) {
                    let mut row = Vec::with_capacity(nodes.len());
                    for x in &nodes {
                        let (v, y) = kernel.eval(t, x)?;
                        let disp = y - xi;
                        if in_region(sc, t - tau, &disp) {
                            fit_samples.push((t - tau, disp, v));
                            if let Some((a, s)) = closed {
                                let wn = path.value(n)[0] - path.value(0)[0];
                                let e = stochastic_heat_kernel(a, s, wn, t, x[0], tau, xi[0])?;
                                closed_err = closed_err.max((v - e).abs() / e);
                            }
                        }
                        row.push(v);
                    }
                    per_time.push(row);
                }
                if sc.checks.sandwich {
                    let fit = sandwich_fit(&fit_samples, d, &tied(lambda))?;
                    record.mu1.push(fit.exponent);
                    record.mu2.push(fit.scale);
                    record.upper_argmax.push(fit.upper_argmax);
                    record.lower_argmax.push(fit.lower_argmax);
                }
                values.push(per_time);
            }
            if closed.is_some() {
                record.closed_form_error = Some(closed_err);
            }
            let residual = if (p as usize) < residual_paths {
                let sd = datum_sd;
                let norm_c = (2.0 * std::f64::consts::PI * sd * sd).powf(0.5 * d as f64);
                let datum: Arc<dyn Fn(&Point) -> f64 + Send + Sync> =
                    Arc::new(move |x: &Point| (-x.norm_squared() / (2.0 * sd * sd)).exp() / norm_c);
                let u = KernelSolution::new(&problem, path.clone(), datum, pole_grid.clone().expect("validated pole grid"))?;
                let r = spde_residual_check(&u, field.as_ref(), sigma.as_ref(), &residual_points, &[4, 2, 1])?;
                record.residual_slope = Some(r.slope);
                Some(r)
            } else {
                None
            };
            let flow_csv = if p == 0 && sc.output.flows {
                let mut buf = frame.flow().csv_header().into_bytes();
                frame.flow().write_csv(p, &mut buf)?;
                Some(buf)
            } else {
                None
            };
            let keep = (p as usize) < sc.output.kernel_paths;
            Ok(PathOutcome { record, values: keep.then_some(values), residual, flow_csv })
        })
        .collect::<Vec<_>>();

    let mut records = Vec::with_capacity(outcomes.len());
    let mut residuals = Vec::new();
    for (p, o) in outcomes.into_iter().enumerate() {
        let o = match o {
            Ok(o) => o,
            Err(e) => {
                let name = match root(&e) {
                    Error::Coercivity { .. } => "coercivity_margin",
                    Error::Degenerate { .. } => "flow_determinant",
                    _ => return Err(e.into()),
                };
                let cmp = Comparison::Above;
                summary.checks.push(Check::failed(name, cmp, 0.0, format!("path {p}: {e}")));
                return Ok(());
            }
        };
        if let Some(values) = &o.values {
            for (i, xi) in poles.iter().enumerate() {
                let mut csv = KernelCsv::new(d);
                for (k, &t) in sc.grid.times.iter().enumerate() {
                    for (x, v) in nodes.iter().zip(&values[i][k]) {
                        csv.row(t, &coords(x, d), &coords(xi, d), *v);
                    }
                }
                w.write(&format!("kernel_path{p}_pole{i}.csv"), &csv.into_bytes())?;
            }
        }
        if let Some(buf) = &o.flow_csv {
            w.write(&format!("flow_path{p}.csv"), buf)?;
        }
        if let Some(r) = o.residual {
            residuals.push(r);
        }
        records.push(o.record);
    }

    if closed.is_some() {
        let worst = records.iter().filter_map(|r| r.closed_form_error).fold(0.0, f64::max);
        summary.checks.push(Check::new("closed_form_kernel", worst, Comparison::AtMost, sc.checks.closed_form_tol));
    }
    if sc.checks.sandwich && !poles.is_empty() {
        let finite = records
            .iter()
            .filter(|r| r.mu1.iter().chain(&r.mu2).all(|v| v.is_finite()))
            .count();
        summary.checks.push(
            Check::new("pathwise_sandwich", finite as f64, Comparison::AtLeast, records.len() as f64)
                .with_detail("paths with finite (mu1, mu2) for every pole"),
        );
        let mu1: Vec<f64> = records.iter().flat_map(|r| r.mu1.iter().copied()).collect();
        let mu2: Vec<f64> = records.iter().flat_map(|r| r.mu2.iter().copied()).collect();
        summary.histograms = Some(Histograms { mu1: Some(Histogram::of(&mu1, 10)), mu2: Some(Histogram::of(&mu2, 10)) });
    }
    let min_det = records.iter().map(|r| r.min_det).fold(f64::INFINITY, f64::min);
    summary.checks.push(
        Check::new("flow_determinant", min_det, Comparison::Above, 0.0)
            .with_detail("smallest Jacobian determinant over seeds and paths"),
    );
    if !residuals.is_empty() {
        let agg = rms_decay(&residuals)?;
        let mut csv = String::from("dt,rms_defect\n");
        for (dt, v) in agg.dts.iter().zip(&agg.defects) {
            csv.push_str(&format!("{dt},{v:e}\n"));
        }
        w.write("residual.csv", csv.as_bytes())?;
        summary.checks.push(
            Check::new("residual_decay", agg.slope, Comparison::AtLeast, sc.checks.residual_slope)
                .with_detail(format!("rms over {} paths", residuals.len())),
        );
        summary.residual = Some(ResidualRecord { paths: residuals.len(), dts: agg.dts, rms_defects: agg.defects, slope: agg.slope });
    }
    summary.paths = records;
    Ok(())
}
