//! Scenario files: one TOML document per run.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use parametrix_core::coefficients::{
    AffineSigma, CoefficientField, CompactBumpSigma, ConstantSigma, GaussianBumpSigma, SeparableField, SigmaField,
    SpaceProfile, TimeProfile,
};
use parametrix_core::flow::Scheme;
use parametrix_core::linalg::{NoiseMatrix, Point, SymMatrix, MAX_CHANNELS, MAX_DIM};
use parametrix_core::parametrix::ParametrixConfig;
use parametrix_core::quadrature::SpaceGrid;
use serde::{Deserialize, Serialize};

/// A problem with the scenario file itself; reported with exit status 2.
#[derive(Debug, thiserror::Error)]
pub enum SchemaError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("field `{field}`: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> SchemaError {
    SchemaError::Invalid { field: field.into(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Deterministic,
    Spde,
    Certify,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub kind: Kind,
    /// Master seed of every random stream.
    #[serde(default)]
    pub seed: u64,
    pub field: FieldSpec,
    #[serde(default)]
    pub sigma: Option<SigmaSpec>,
    pub grid: GridSpec,
    #[serde(default)]
    pub parametrix: ParametrixConfig,
    #[serde(default)]
    pub spde: Option<SpdeSpec>,
    #[serde(default)]
    pub certify: Option<CertifySpec>,
    #[serde(default)]
    pub checks: CheckSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

/// Separable diffusion `theta(t) m(x) M` with constant drift, potential and source.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    pub dim: usize,
    /// `M = diffusion * I` unless `matrix` is given.
    #[serde(default = "one")]
    pub diffusion: f64,
    #[serde(default)]
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default = "TimeProfile::constant")]
    pub time: TimeProfile,
    #[serde(default = "constant_space")]
    pub space: SpaceProfile,
    #[serde(default)]
    pub drift: Option<Vec<f64>>,
    #[serde(default)]
    pub potential: f64,
    #[serde(default)]
    pub source: f64,
    pub lambda: f64,
    #[serde(default = "one")]
    pub alpha: f64,
}

fn one() -> f64 {
    1.0
}

fn constant_space() -> SpaceProfile {
    SpaceProfile::Constant
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaSpec {
    /// Rows are space components, columns noise channels.
    Constant { matrix: Vec<Vec<f64>> },
    /// One-dimensional `sigma(x) = slope * x`.
    Linear { slope: f64 },
    GaussianBump { amplitude: Vec<Vec<f64>>, center: Vec<f64>, width: f64 },
    CompactBump { amplitude: Vec<Vec<f64>>, center: Vec<f64>, radius: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default)]
    pub tau: f64,
    pub horizon: f64,
    /// Evaluation times in `(tau, horizon]`.
    pub times: Vec<f64>,
    /// Evaluation box: per-axis bounds and node counts.
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
    pub x_n: Vec<usize>,
    /// Pole points `xi`, all at time `tau`.
    pub poles: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpdeSpec {
    pub paths: usize,
    pub steps: usize,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    /// Path steps per time panel of the transformed coefficients; 0 uses one panel.
    #[serde(default)]
    pub panel_knots: usize,
    /// Flow seed grid, the same on every axis.
    pub seed_lo: f64,
    pub seed_hi: f64,
    pub seed_n: usize,
    /// Standard deviation of a centered Gaussian datum for the residual check.
    #[serde(default)]
    pub datum_sd: Option<f64>,
    /// Pole grid for the datum integral of the residual check, same on every axis.
    #[serde(default)]
    pub pole_lo: Option<f64>,
    #[serde(default)]
    pub pole_hi: Option<f64>,
    #[serde(default)]
    pub pole_n: Option<usize>,
    /// Points where the residual identity is checked.
    #[serde(default)]
    pub residual_points: Vec<Vec<f64>>,
    /// Number of paths used for the residual check (the first ones).
    #[serde(default)]
    pub residual_paths: Option<usize>,
}

fn default_scheme() -> Scheme {
    Scheme::EulerMaruyama
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifySpec {
    /// Number of random query points `(t, x)` per pole.
    pub queries: usize,
    /// Half-width of the query box around each pole.
    pub radius: f64,
    /// Fitted constant of the correction bound; fitted from the tables when absent.
    #[serde(default)]
    pub c_fit: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSpec {
    #[serde(default = "yes")]
    pub ellipticity: bool,
    /// Compare with the closed-form kernel where one exists.
    #[serde(default = "yes")]
    pub closed_form: bool,
    #[serde(default = "default_closed_form_tol")]
    pub closed_form_tol: f64,
    #[serde(default = "yes")]
    pub sandwich: bool,
    /// Comparisons and fits use samples with `|x - xi| / sqrt(t - tau)` at most this.
    #[serde(default = "default_region")]
    pub region: f64,
    /// Residual decay of the integral identity (stochastic runs with a datum).
    #[serde(default)]
    pub residual: bool,
    #[serde(default = "default_slope")]
    pub residual_slope: f64,
}

fn yes() -> bool {
    true
}

fn default_closed_form_tol() -> f64 {
    1e-6
}

fn default_slope() -> f64 {
    0.4
}

fn default_region() -> f64 {
    5.0
}

impl Default for CheckSpec {
    fn default() -> Self {
        Self {
            ellipticity: true,
            closed_form: true,
            closed_form_tol: default_closed_form_tol(),
            sandwich: true,
            region: default_region(),
            residual: false,
            residual_slope: default_slope(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Output directory, relative to the scenario file unless absolute.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// Write the flow of the first path as CSV.
    #[serde(default)]
    pub flows: bool,
    /// Number of paths whose kernel slices are written (stochastic runs).
    #[serde(default = "one_path")]
    pub kernel_paths: usize,
}

fn one_path() -> usize {
    1
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: None, flows: false, kernel_paths: 1 }
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, SchemaError> {
        let text = std::fs::read_to_string(path).map_err(|source| SchemaError::Read { path: path.into(), source })?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, SchemaError> {
        let sc: Scenario =
            toml::from_str(text).map_err(|e| SchemaError::Parse { path: path.into(), message: e.to_string() })?;
        sc.validate()?;
        Ok(sc)
    }

    /// Checks every field that does not need numerical work.
    pub fn validate(&self) -> Result<(), SchemaError> {
        let d = self.field.dim;
        if !(1..=MAX_DIM).contains(&d) {
            return Err(invalid("field.dim", format!("must be 1, 2 or 3, got {d}")));
        }
        if !(self.field.lambda > 1.0) {
            return Err(invalid("field.lambda", "must exceed 1"));
        }
        if !(self.checks.region > 0.0) {
            return Err(invalid("checks.region", "must be positive"));
        }
        if !(self.field.alpha > 0.0 && self.field.alpha <= 1.0) {
            return Err(invalid("field.alpha", "must lie in (0, 1]"));
        }
        if let Some(m) = &self.field.matrix {
            check_matrix("field.matrix", m, d, d)?;
        }
        if let Some(b) = &self.field.drift {
            if b.len() != d {
                return Err(invalid("field.drift", format!("needs {d} entries")));
            }
        }
        if !self.field.time.is_valid() {
            return Err(invalid("field.time", "piecewise profile needs increasing knots and one more value than knots"));
        }
        if let SpaceProfile::Sine { amplitude, axis, .. } = self.field.space {
            if axis >= d {
                return Err(invalid("field.space.axis", "axis outside the dimension"));
            }
            if amplitude.abs() >= 1.0 {
                return Err(invalid("field.space.amplitude", "must be below 1 in absolute value"));
            }
        }
        let g = &self.grid;
        if !(g.horizon > g.tau) {
            return Err(invalid("grid.horizon", "must exceed grid.tau"));
        }
        if g.times.iter().any(|t| !(*t > g.tau && *t <= g.horizon)) {
            return Err(invalid("grid.times", "every time must lie in (tau, horizon]"));
        }
        if g.x_lo.len() != d || g.x_hi.len() != d || g.x_n.len() != d {
            return Err(invalid("grid.x_lo", format!("x_lo, x_hi and x_n need {d} entries")));
        }
        if g.x_lo.iter().zip(&g.x_hi).any(|(a, b)| !(b > a)) || g.x_n.iter().any(|n| *n < 2) {
            return Err(invalid("grid.x_n", "each axis needs x_hi > x_lo and at least two nodes"));
        }
        if g.poles.iter().any(|p| p.len() != d) {
            return Err(invalid("grid.poles", format!("each pole needs {d} coordinates")));
        }
        let mut cfg = self.parametrix.clone();
        cfg.horizon = g.horizon;
        cfg.validate().map_err(|e| invalid("parametrix", e.to_string()))?;
        match self.kind {
            Kind::Deterministic => {}
            Kind::Spde => {
                let s = self.spde.as_ref().ok_or_else(|| invalid("spde", "required for kind = \"spde\""))?;
                if s.paths == 0 {
                    return Err(invalid("spde.paths", "at least one path is required"));
                }
                if s.steps == 0 {
                    return Err(invalid("spde.steps", "at least one step is required"));
                }
                if !(s.seed_hi > s.seed_lo) || s.seed_n < 2 {
                    return Err(invalid("spde.seed_n", "seed grid needs seed_hi > seed_lo and two nodes"));
                }
                let dt = (g.horizon - g.tau) / s.steps as f64;
                for t in &g.times {
                    let u = (t - g.tau) / dt;
                    if (u - u.round()).abs() > 1e-9 {
                        return Err(invalid("grid.times", format!("t={t} is not on the path mesh of step {dt}")));
                    }
                }
                let sigma = self.sigma.as_ref().ok_or_else(|| invalid("sigma", "required for kind = \"spde\""))?;
                sigma.validate(d)?;
                // The flow seeds must cover six standard deviations around the evaluation box.
                let reach = 6.0 * (self.field.lambda * (g.horizon - g.tau)).sqrt();
                for i in 0..d {
                    if s.seed_lo > g.x_lo[i] - reach || s.seed_hi < g.x_hi[i] + reach {
                        return Err(invalid(
                            "spde.seed_lo",
                            format!("seed grid [{}, {}] must cover the evaluation box widened by {reach:.3}", s.seed_lo, s.seed_hi),
                        ));
                    }
                }
                if self.checks.residual {
                    if s.datum_sd.is_none_or(|v| !(v > 0.0)) {
                        return Err(invalid("spde.datum_sd", "the residual check needs a positive datum width"));
                    }
                    if s.pole_lo.is_none() || s.pole_hi.is_none() || s.pole_n.is_none() {
                        return Err(invalid("spde.pole_n", "the residual check needs pole_lo, pole_hi and pole_n"));
                    }
                    if s.residual_points.is_empty() || s.residual_points.iter().any(|p| p.len() != d) {
                        return Err(invalid("spde.residual_points", format!("need points with {d} coordinates")));
                    }
                    if s.steps % 4 != 0 {
                        return Err(invalid("spde.steps", "the residual check coarsens by 4 and needs steps divisible by 4"));
                    }
                }
            }
            Kind::Certify => {
                let c = self.certify.as_ref().ok_or_else(|| invalid("certify", "required for kind = \"certify\""))?;
                if c.queries == 0 || !(c.radius > 0.0) {
                    return Err(invalid("certify.queries", "need queries >= 1 and radius > 0"));
                }
                if c.c_fit.is_some_and(|v| !(v >= 0.0)) {
                    return Err(invalid("certify.c_fit", "must be non-negative"));
                }
            }
        }
        Ok(())
    }

    pub fn separable(&self) -> SeparableField {
        let f = &self.field;
        let d = f.dim;
        let mut base = SymMatrix::identity();
        for i in 0..d {
            for j in 0..d {
                base[(i, j)] = match &f.matrix {
                    Some(m) => m[i][j],
                    None if i == j => f.diffusion,
                    None => 0.0,
                };
            }
        }
        let mut field = SeparableField::new(d, base, f.time.clone(), f.space.clone(), f.lambda, f.alpha)
            .with_potential(f.potential)
            .with_source(f.source);
        if let Some(b) = &f.drift {
            field = field.with_drift(point_of(b));
        }
        field
    }

    pub fn field(&self) -> Arc<dyn CoefficientField> {
        Arc::new(self.separable())
    }

    pub fn sigma(&self) -> Option<Arc<dyn SigmaField>> {
        let d = self.field.dim;
        self.sigma.as_ref().map(|s| s.build(d))
    }

    pub fn config(&self) -> ParametrixConfig {
        ParametrixConfig { horizon: self.grid.horizon, ..self.parametrix.clone() }
    }

    pub fn eval_grid(&self) -> SpaceGrid {
        SpaceGrid::uniform(self.field.dim, &self.grid.x_lo, &self.grid.x_hi, &self.grid.x_n).expect("validated grid")
    }

    pub fn poles(&self) -> Vec<Point> {
        self.grid.poles.iter().map(|p| point_of(p)).collect()
    }

    /// Output directory: `--out` wins, then the file's `output.dir`, then `out/<name>`.
    pub fn output_dir(&self, config_path: &Path, cli_out: Option<&Path>) -> PathBuf {
        if let Some(o) = cli_out {
            return o.to_path_buf();
        }
        let base = config_path.parent().unwrap_or(Path::new("."));
        match &self.output.dir {
            Some(d) if d.is_absolute() => d.clone(),
            Some(d) => base.join(d),
            None => base.join("out").join(&self.name),
        }
    }
}

pub fn point_of(v: &[f64]) -> Point {
    let mut p = Point::zeros();
    for (i, x) in v.iter().enumerate() {
        p[i] = *x;
    }
    p
}

fn check_matrix(name: &str, m: &[Vec<f64>], rows: usize, max_cols: usize) -> Result<usize, SchemaError> {
    if m.len() != rows {
        return Err(invalid(name, format!("needs {rows} rows")));
    }
    let cols = m[0].len();
    if cols == 0 || cols > max_cols || m.iter().any(|r| r.len() != cols) {
        return Err(invalid(name, format!("rows must share a length between 1 and {max_cols}")));
    }
    Ok(cols)
}

fn noise_of(m: &[Vec<f64>]) -> (usize, NoiseMatrix) {
    let mut n = NoiseMatrix::zeros();
    for (i, row) in m.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            n[(i, k)] = *v;
        }
    }
    (m[0].len(), n)
}

impl SigmaSpec {
    fn validate(&self, d: usize) -> Result<(), SchemaError> {
        match self {
            SigmaSpec::Constant { matrix } => {
                check_matrix("sigma.matrix", matrix, d, MAX_CHANNELS)?;
            }
            SigmaSpec::Linear { .. } => {
                if d != 1 {
                    return Err(invalid("sigma.kind", "linear sigma is one-dimensional"));
                }
            }
            SigmaSpec::GaussianBump { amplitude, center, width } => {
                check_matrix("sigma.amplitude", amplitude, d, MAX_CHANNELS)?;
                if center.len() != d || !(*width > 0.0) {
                    return Err(invalid("sigma.center", format!("needs {d} coordinates and a positive width")));
                }
            }
            SigmaSpec::CompactBump { amplitude, center, radius } => {
                check_matrix("sigma.amplitude", amplitude, d, MAX_CHANNELS)?;
                if center.len() != d || !(*radius > 0.0) {
                    return Err(invalid("sigma.center", format!("needs {d} coordinates and a positive radius")));
                }
            }
        }
        Ok(())
    }

    pub fn build(&self, d: usize) -> Arc<dyn SigmaField> {
        match self {
            SigmaSpec::Constant { matrix } => {
                let (k, m) = noise_of(matrix);
                Arc::new(ConstantSigma::new(d, k, m))
            }
            SigmaSpec::Linear { slope } => Arc::new(AffineSigma::scalar_linear(*slope)),
            SigmaSpec::GaussianBump { amplitude, center, width } => {
                let (k, m) = noise_of(amplitude);
                Arc::new(GaussianBumpSigma::new(d, k, m, point_of(center), *width))
            }
            SigmaSpec::CompactBump { amplitude, center, radius } => {
                let (k, m) = noise_of(amplitude);
                Arc::new(CompactBumpSigma::new(d, k, m, point_of(center), *radius))
            }
        }
    }

    /// `(a, s)` when the noise is a constant scalar, for the closed-form kernel.
    pub fn constant_scalar(&self) -> Option<f64> {
        match self {
            SigmaSpec::Constant { matrix } if matrix.len() == 1 && matrix[0].len() == 1 => Some(matrix[0][0]),
            _ => None,
        }
    }
}
