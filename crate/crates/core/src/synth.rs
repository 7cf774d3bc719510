//! Synthetic imbalanced measurements: a dense Gaussian cluster inside a
//! sparse uniform ring, with speeds drawn from a smooth field plus noise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{compute_score, Dataset, SamplePoint, ScoreRule};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub n_dense: usize,
    pub n_sparse: usize,
    /// Cluster and ring center, `(lon, lat)` degrees.
    pub center: [f64; 2],
    /// Standard deviation of the cluster, degrees.
    pub dense_std: f64,
    pub ring_inner: f64,
    pub ring_outer: f64,
    /// Wavelength of the field's oscillating part, degrees.
    pub wavelength: f64,
    /// Noise standard deviation as a fraction of the local field value.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n_dense: 4500,
            n_sparse: 500,
            center: [-84.0, 33.0],
            dense_std: 1.0,
            ring_inner: 3.0,
            ring_outer: 20.0,
            wavelength: 15.0,
            noise: 0.3,
            seed: 0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.n_dense + self.n_sparse >= 1
            && self.dense_std.is_finite()
            && self.dense_std > 0.0
            && self.ring_inner >= 0.0
            && self.ring_outer > self.ring_inner
            && self.wavelength > 0.0
            && self.noise >= 0.0
            && self.noise.is_finite()
            && (-180.0..=180.0).contains(&(self.center[0] - self.ring_outer))
            && (-180.0..=180.0).contains(&(self.center[0] + self.ring_outer))
            && (-90.0..=90.0).contains(&(self.center[1] - self.ring_outer))
            && (-90.0..=90.0).contains(&(self.center[1] + self.ring_outer));
        if ok {
            Ok(())
        } else {
            Err(Error::param(format!(
                "invalid synthetic parameters: {self:?}"
            )))
        }
    }

    /// Noise-free `(download, upload)` in Mbps at `p`.
    pub fn field(&self, p: [f64; 2]) -> (f64, f64) {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        let r2 = (dx * dx + dy * dy) / (self.ring_outer * self.ring_outer);
        let w = 2.0 * PI / self.wavelength;
        let urban = (-0.5 * (dx * dx + dy * dy) / (2.0 * self.dense_std).powi(2)).exp();
        let wave = (w * dx).sin() * (w * 0.8 * dy + 0.5).cos();
        let down = 70.0 + 90.0 * urban + 45.0 * wave - 20.0 * r2;
        let up = 9.0 + 16.0 * urban + 7.0 * (w * 0.7 * dy).sin() * (w * 0.6 * dx).cos() - 3.0 * r2;
        (down.max(1.0), up.max(0.5))
    }
}

/// Generates the dataset; points are the cluster first, then the ring.
pub fn generate(params: &SynthParams, rule: &ScoreRule) -> Result<Dataset> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let gauss = Normal::new(0.0, params.dense_std).expect("positive std");
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let n = params.n_dense + params.n_sparse;
    let mut points = Vec::with_capacity(n);
    let (r0, r1) = (params.ring_inner, params.ring_outer);
    for i in 0..n {
        let loc = if i < params.n_dense {
            [
                params.center[0] + gauss.sample(&mut rng),
                params.center[1] + gauss.sample(&mut rng),
            ]
        } else {
            // uniform over the annulus area
            let r = rng.random_range(r0 * r0..r1 * r1).sqrt();
            let a = rng.random_range(0.0..2.0 * PI);
            [
                params.center[0] + r * a.cos(),
                params.center[1] + r * a.sin(),
            ]
        };
        let loc = [loc[0].clamp(-180.0, 180.0), loc[1].clamp(-90.0, 90.0)];
        let (down, up) = params.field(loc);
        let down = (down * (1.0 + params.noise * unit.sample(&mut rng))).max(0.0) * 1000.0;
        let up = (up * (1.0 + params.noise * unit.sample(&mut rng))).max(0.0) * 1000.0;
        let tests = rng.random_range(1..=6u64);
        let devices = rng.random_range(1..=tests);
        points.push(SamplePoint {
            id: i,
            lon: loc[0],
            lat: loc[1],
            download_kbps: down,
            upload_kbps: up,
            tests,
            devices,
            score: compute_score(down, up, rule),
        });
    }
    Dataset::from_points(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::segment_grid;

    #[test]
    fn deterministic_per_seed() {
        let p = SynthParams {
            n_dense: 50,
            n_sparse: 20,
            ..SynthParams::default()
        };
        let a = generate(&p, &ScoreRule::default()).unwrap();
        let b = generate(&p, &ScoreRule::default()).unwrap();
        assert_eq!(a, b);
        let c = generate(&SynthParams { seed: 1, ..p }, &ScoreRule::default()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn cluster_cells_are_dense() {
        let p = SynthParams {
            n_dense: 900,
            n_sparse: 100,
            ..SynthParams::default()
        };
        let ds = generate(&p, &ScoreRule::default()).unwrap();
        let seg = segment_grid(&ds.locations(), 15, 15).unwrap();
        assert_eq!(seg.region_of(p.center), crate::preprocess::Region::Dense);
        let dense_pts = ds.points[..900]
            .iter()
            .filter(|q| seg.region_of(q.location()) == crate::preprocess::Region::Dense)
            .count();
        let ring_dense = ds.points[900..]
            .iter()
            .filter(|q| seg.region_of(q.location()) == crate::preprocess::Region::Dense)
            .count();
        assert!(dense_pts > 800, "{dense_pts}");
        assert!(ring_dense < 10, "{ring_dense}");
    }

    #[test]
    fn rejects_bad_params() {
        let p = SynthParams {
            ring_outer: 0.1,
            ring_inner: 0.5,
            ..SynthParams::default()
        };
        assert!(generate(&p, &ScoreRule::default()).is_err());
    }
}
