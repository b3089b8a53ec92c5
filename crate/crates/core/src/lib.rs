//! Fundamental solutions of linear parabolic equations with coefficients
//! measurable in time and Hölder continuous in space, built by the parametrix
//! method, and stochastic fundamental solutions of linear SPDEs obtained from
//! them by a random change of variables along a stochastic flow.

pub mod bounds;
pub mod cauchy;
pub mod coefficients;
pub mod error;
pub mod flow;
pub mod gauss_kernel;
pub mod itow;
pub mod linalg;
pub mod parametrix;
pub mod quadrature;
pub mod spde;

pub use error::{Error, Result};
pub use linalg::{point, Point, SymMatrix};
