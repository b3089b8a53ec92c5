use std::sync::Arc;

use rayon::prelude::*;

use super::table::{ParametrixTable, SliceKind};
use super::{phi_solve, ParametrixConfig, Pole};
use crate::coefficients::CoefficientField;
use crate::error::{Error, Result};
use crate::linalg::{norm_sq, Point};
use crate::quadrature::SpaceGrid;

/// Tables for a grid of poles sharing the pole time, used as a quadrature in
/// the pole variable.
#[derive(Debug, Clone)]
pub struct PoleBank {
    tau: f64,
    grid: SpaceGrid,
    tables: Vec<ParametrixTable>,
}

/// Poles whose kernel is below `exp(-CUTOFF)` of its peak are skipped.
const CUTOFF: f64 = 45.0;

impl PoleBank {
    /// Solves one table per grid node; tables are built in parallel and kept in grid order.
    pub fn build(field: Arc<dyn CoefficientField>, tau: f64, grid: SpaceGrid, cfg: &ParametrixConfig) -> Result<Self> {
        if grid.dim() != field.dim() {
            return Err(Error::Domain("pole grid dimension differs from the field".into()));
        }
        let tables = (0..grid.len())
            .into_par_iter()
            .map(|i| phi_solve(field.clone(), Pole::new(tau, grid.node(i)), cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { tau, grid, tables })
    }

    pub fn from_tables(tau: f64, grid: SpaceGrid, tables: Vec<ParametrixTable>) -> Result<Self> {
        if tables.len() != grid.len() {
            return Err(Error::Usage("one table per pole is required".into()));
        }
        Ok(Self { tau, grid, tables })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn grid(&self) -> &SpaceGrid {
        &self.grid
    }

    pub fn tables(&self) -> &[ParametrixTable] {
        &self.tables
    }

    fn relevant(&self, k: usize, t: f64, x: &Point) -> bool {
        let tb = &self.tables[k];
        let d = tb.dim();
        norm_sq(&(x - tb.pole().xi), d) <= 2.0 * CUTOFF * tb.field().lambda() * (t - self.tau)
    }

    /// `sum_k w_k g(xi_k) Gamma(t, x; tau, xi_k)` for each `x`, the pole
    /// quadrature of `int Gamma(t, x; tau, xi) g(xi) dxi`.
    pub fn integrate(&self, t: f64, xs: &[Point], g: impl Fn(&Point) -> f64 + Sync) -> Result<Vec<f64>> {
        let contributions = (0..self.tables.len())
            .into_par_iter()
            .map(|k| -> Result<Vec<f64>> {
                let weight = self.grid.weight(k) * g(&self.grid.node(k));
                let mut out = vec![0.0; xs.len()];
                if weight == 0.0 {
                    return Ok(out);
                }
                if !xs.iter().any(|x| self.relevant(k, t, x)) {
                    return Ok(out);
                }
                let slice = self.tables[k].slice(t, SliceKind::Value)?;
                for (o, x) in out.iter_mut().zip(xs) {
                    if self.relevant(k, t, x) {
                        *o = weight * slice.value(x)?;
                    }
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut total = vec![0.0; xs.len()];
        for c in contributions {
            for (t, v) in total.iter_mut().zip(c) {
                *t += v;
            }
        }
        Ok(total)
    }

    /// `Gamma(t, x; tau, xi_k)` for every pole.
    pub fn gamma_row(&self, t: f64, x: &Point) -> Result<Vec<f64>> {
        (0..self.tables.len())
            .map(|k| if self.relevant(k, t, x) { self.tables[k].gamma(t, x) } else { Ok(0.0) })
            .collect()
    }
}
