use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::MAX_CHANNELS;

/// Brownian increments on a uniform mesh.
///
/// Paths are generated from a per-path stream derived from the master seed
/// and the path index, so a path does not depend on how many others are drawn
/// or in which order.
#[derive(Debug, Clone, Serialize)]
pub struct BrownianPath {
    pub seed: u64,
    pub path_index: u64,
    t0: f64,
    dt: f64,
    channels: usize,
    increments: Vec<[f64; MAX_CHANNELS]>,
}

impl BrownianPath {
    pub fn generate(seed: u64, path_index: u64, t0: f64, t1: f64, steps: usize, channels: usize) -> Result<Self> {
        if steps == 0 || !(t1 > t0) {
            return Err(Error::Domain("a path needs t1 > t0 and at least one step".into()));
        }
        if channels == 0 || channels > MAX_CHANNELS {
            return Err(Error::Domain(format!("channel count must be 1..={MAX_CHANNELS}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path_index);
        let dt = (t1 - t0) / steps as f64;
        let sd = dt.sqrt();
        let increments = (0..steps)
            .map(|_| {
                let mut w = [0.0; MAX_CHANNELS];
                for wk in w.iter_mut().take(channels) {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *wk = sd * z;
                }
                w
            })
            .collect();
        Ok(Self { seed, path_index, t0, dt, channels, increments })
    }

    /// Path with prescribed increments.
    pub fn from_increments(t0: f64, dt: f64, channels: usize, increments: Vec<[f64; MAX_CHANNELS]>) -> Result<Self> {
        if !(dt > 0.0) || increments.is_empty() || channels == 0 || channels > MAX_CHANNELS {
            return Err(Error::Domain("invalid path description".into()));
        }
        Ok(Self { seed: 0, path_index: 0, t0, dt, channels, increments })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.steps())
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.increments.len()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn time(&self, n: usize) -> f64 {
        self.t0 + self.dt * n as f64
    }

    pub fn increment(&self, n: usize) -> &[f64; MAX_CHANNELS] {
        &self.increments[n]
    }

    /// `W(t_n) - W(t_0)`.
    pub fn value(&self, n: usize) -> [f64; MAX_CHANNELS] {
        let mut w = [0.0; MAX_CHANNELS];
        for inc in &self.increments[..n] {
            for k in 0..MAX_CHANNELS {
                w[k] += inc[k];
            }
        }
        w
    }

    /// Index of the knot at time `t`, if `t` is a knot.
    pub fn knot_index(&self, t: f64) -> Option<usize> {
        let u = (t - self.t0) / self.dt;
        let n = u.round();
        if (u - n).abs() < 1e-9 && n >= 0.0 && n as usize <= self.steps() {
            Some(n as usize)
        } else {
            None
        }
    }

    /// Path on a mesh `factor` times coarser, with summed increments.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.steps() % factor != 0 {
            return Err(Error::Domain(format!("{} steps cannot be coarsened by {factor}", self.steps())));
        }
        let increments = self
            .increments
            .chunks(factor)
            .map(|c| {
                let mut w = [0.0; MAX_CHANNELS];
                for inc in c {
                    for k in 0..MAX_CHANNELS {
                        w[k] += inc[k];
                    }
                }
                w
            })
            .collect();
        Ok(Self { increments, dt: self.dt * factor as f64, ..self.clone() })
    }

    /// The part of the path between two knots.
    pub fn restrict(&self, t_start: f64, t_end: f64) -> Result<Self> {
        let a = self
            .knot_index(t_start)
            .ok_or_else(|| Error::Domain(format!("t={t_start} is not a mesh knot")))?;
        let b = self
            .knot_index(t_end)
            .ok_or_else(|| Error::Domain(format!("t={t_end} is not a mesh knot")))?;
        if b <= a {
            return Err(Error::Domain("restriction needs t_end > t_start".into()));
        }
        Ok(Self {
            t0: self.time(a),
            increments: self.increments[a..b].to_vec(),
            ..self.clone()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a = BrownianPath::generate(7, 3, 0.0, 1.0, 64, 2).unwrap();
        let b = BrownianPath::generate(7, 3, 0.0, 1.0, 64, 2).unwrap();
        let c = BrownianPath::generate(7, 4, 0.0, 1.0, 64, 2).unwrap();
        assert_eq!(a.increments, b.increments);
        assert_ne!(a.increments, c.increments);
    }

    #[test]
    fn coarsening_preserves_endpoint_values() {
        let a = BrownianPath::generate(1, 0, 0.0, 1.0, 64, 1).unwrap();
        let c = a.coarsen(4).unwrap();
        assert_eq!(c.steps(), 16);
        assert!((a.value(64)[0] - c.value(16)[0]).abs() < 1e-14);
        assert!((a.value(32)[0] - c.value(8)[0]).abs() < 1e-14);
    }

    #[test]
    fn restriction_keeps_the_window() {
        let a = BrownianPath::generate(1, 0, 0.0, 1.0, 8, 1).unwrap();
        let r = a.restrict(0.25, 0.75).unwrap();
        assert_eq!(r.steps(), 4);
        assert_eq!(r.increment(0), a.increment(2));
        assert!(a.restrict(0.3, 0.75).is_err());
    }
}
