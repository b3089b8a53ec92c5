//! Fixed-size vectors and matrices padded to three dimensions.
//!
//! Every spatial quantity is stored in a 3-vector or 3x3 matrix. Coordinates
//! beyond the active dimension are zero for vectors and identity for
//! covariance-like matrices, so determinants and inverses of the padded
//! matrices agree with those of the active block.

use nalgebra::{Matrix3, Matrix3x4, Vector3};

use crate::error::{Error, Result};

pub type Point = Vector3<f64>;
pub type SymMatrix = Matrix3<f64>;
/// Diffusion columns of the noise coefficient, one column per Brownian channel.
pub type NoiseMatrix = Matrix3x4<f64>;

pub const MAX_DIM: usize = 3;
pub const MAX_CHANNELS: usize = 4;

/// Builds a padded point from its active coordinates.
pub fn point(coords: &[f64]) -> Point {
    assert!(coords.len() <= MAX_DIM, "at most {MAX_DIM} coordinates");
    let mut p = Point::zeros();
    for (i, c) in coords.iter().enumerate() {
        p[i] = *c;
    }
    p
}

/// Returns the active coordinates of a padded point.
pub fn coords(p: &Point, dim: usize) -> Vec<f64> {
    (0..dim).map(|i| p[i]).collect()
}

/// Builds a padded symmetric matrix from a row-major active block.
pub fn sym_matrix(dim: usize, entries: &[f64]) -> SymMatrix {
    assert_eq!(entries.len(), dim * dim, "expected {} entries", dim * dim);
    let mut m = SymMatrix::identity();
    for i in 0..dim {
        for j in 0..dim {
            m[(i, j)] = entries[i * dim + j];
        }
    }
    m
}

/// Scaled identity on the active block, identity padding elsewhere.
pub fn scaled_identity(dim: usize, s: f64) -> SymMatrix {
    let mut m = SymMatrix::identity();
    for i in 0..dim {
        m[(i, i)] = s;
    }
    m
}

/// Replaces the inactive block by the identity.
pub fn pad_identity(mut m: SymMatrix, dim: usize) -> SymMatrix {
    for i in 0..MAX_DIM {
        for j in 0..MAX_DIM {
            if i >= dim || j >= dim {
                m[(i, j)] = if i == j { 1.0 } else { 0.0 };
            }
        }
    }
    m
}

/// Zeroes the inactive block.
pub fn pad_zero(mut m: SymMatrix, dim: usize) -> SymMatrix {
    for i in 0..MAX_DIM {
        for j in 0..MAX_DIM {
            if i >= dim || j >= dim {
                m[(i, j)] = 0.0;
            }
        }
    }
    m
}

/// Largest absolute asymmetry of the active block.
pub fn asymmetry(m: &SymMatrix, dim: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..dim {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Eigenvalues of the symmetric active block in ascending order.
pub fn sym_eigenvalues(m: &SymMatrix, dim: usize) -> Vec<f64> {
    let mut ev: Vec<f64> = match dim {
        1 => vec![m[(0, 0)]],
        2 => {
            let (a, b, c) = (m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]);
            let mean = 0.5 * (a + c);
            let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            vec![mean - rad, mean + rad]
        }
        _ => {
            let s = 0.5 * (m + m.transpose());
            s.symmetric_eigenvalues().iter().copied().collect()
        }
    };
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Frobenius contraction `A : B` over the active block.
pub fn contract(a: &SymMatrix, b: &SymMatrix, dim: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            s += a[(i, j)] * b[(i, j)];
        }
    }
    s
}

pub fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::Domain(format!(
            "spatial dimension must be 1..={MAX_DIM}, got {dim}"
        )));
    }
    Ok(())
}

/// Euclidean norm of the active coordinates.
pub fn norm(p: &Point, dim: usize) -> f64 {
    (0..dim).map(|i| p[i] * p[i]).sum::<f64>().sqrt()
}

pub fn norm_sq(p: &Point, dim: usize) -> f64 {
    (0..dim).map(|i| p[i] * p[i]).sum::<f64>()
}

/// Unused padding entries of a noise matrix are zero.
pub fn noise_matrix(dim: usize, channels: usize, entries: &[f64]) -> NoiseMatrix {
    assert_eq!(entries.len(), dim * channels);
    let mut m = NoiseMatrix::zeros();
    for i in 0..dim {
        for k in 0..channels {
            m[(i, k)] = entries[i * channels + k];
        }
    }
    m
}
