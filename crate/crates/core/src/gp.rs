//! Gaussian-process regression baseline.
//!
//! Covariance `k(x, x') = sigma2 * exp(-theta1 * dlon^2 - theta2 * dlat^2)`
//! plus an observation-noise term `noise2` on the diagonal. The prior mean
//! is the constant training-target mean. Hyperparameters are fitted by
//! maximizing the log marginal likelihood with a simplex search in log
//! space from several starts.
//!
//! All solves go through the Cholesky factor of `K + noise2 * I`; no
//! explicit inverse is ever formed.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::NelderMead;
use crate::par;

/// Minimum `noise2 / sigma2`.
pub const JITTER_FLOOR: f64 = 1e-8;
/// Largest diagonal jitter tried, relative to `sigma2`, before giving up.
pub const MAX_JITTER: f64 = 1e-2;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams {
    pub sigma2: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub noise2: f64,
}

impl GpHyperparams {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !(pos(self.sigma2) && pos(self.theta1) && pos(self.theta2) && pos(self.noise2)) {
            return Err(Error::param(format!(
                "GP hyperparameters must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Noise variance with the jitter floor applied.
    pub fn effective_noise(&self) -> f64 {
        self.noise2.max(JITTER_FLOOR * self.sigma2)
    }

    fn to_log(self) -> [f64; 4] {
        [
            self.sigma2.ln(),
            self.theta1.ln(),
            self.theta2.ln(),
            self.noise2.ln(),
        ]
    }

    fn from_log(p: &[f64]) -> Self {
        let sigma2 = p[0].exp();
        GpHyperparams {
            sigma2,
            theta1: p[1].exp(),
            theta2: p[2].exp(),
            noise2: p[3].exp().max(JITTER_FLOOR * sigma2),
        }
    }
}

/// Covariance between every row of `a` and every row of `b`.
pub fn kernel_matrix(a: &[[f64; 2]], b: &[[f64; 2]], hyper: &GpHyperparams) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| {
        let d0 = a[i][0] - b[j][0];
        let d1 = a[i][1] - b[j][1];
        hyper.sigma2 * (-hyper.theta1 * d0 * d0 - hyper.theta2 * d1 * d1).exp()
    })
}

/// Cholesky of `K + noise * I`, escalating diagonal jitter by 10x from
/// `JITTER_FLOOR * sigma2` up to `MAX_JITTER * sigma2`. Returns the factor
/// and the diagonal noise actually used.
fn factorize(x: &[[f64; 2]], hyper: &GpHyperparams) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let k = kernel_matrix(x, x, hyper);
    let base = hyper.effective_noise();
    let mut extra = 0.0;
    loop {
        let noise = base + extra;
        let mut a = k.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += noise;
        }
        if let Some(chol) = a.cholesky() {
            return Ok((chol, noise));
        }
        extra = if extra == 0.0 {
            JITTER_FLOOR * hyper.sigma2
        } else {
            extra * 10.0
        };
        if extra > MAX_JITTER * hyper.sigma2 * (1.0 + 1e-12) {
            return Err(Error::Conditioning(format!(
                "Cholesky failed for {} points with jitter up to {:e}",
                x.len(),
                MAX_JITTER * hyper.sigma2
            )));
        }
    }
}

fn lml_from(chol: &Cholesky<f64, Dyn>, resid: &DVector<f64>) -> (f64, DVector<f64>) {
    let alpha = chol.solve(resid);
    let m = resid.len() as f64;
    let log_det_half: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    let lml = -0.5 * resid.dot(&alpha) - log_det_half - 0.5 * m * LN_2PI;
    (lml, alpha)
}

fn check_inputs(x: &[[f64; 2]], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

/// Log marginal likelihood of `y` under prior mean `mean`.
pub fn log_marginal_likelihood(
    x: &[[f64; 2]],
    y: &[f64],
    mean: f64,
    hyper: &GpHyperparams,
) -> Result<f64> {
    check_inputs(x, y)?;
    hyper.validate()?;
    let (chol, _) = factorize(x, hyper)?;
    let resid = DVector::from_iterator(y.len(), y.iter().map(|v| v - mean));
    Ok(lml_from(&chol, &resid).0)
}

#[derive(Debug, Clone)]
pub struct GpPrediction {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Variance was negative from round-off and clamped to zero.
    pub clamped: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct GpModel {
    pub hyper: GpHyperparams,
    pub mean_const: f64,
    /// Diagonal noise used in the factorization (jitter included).
    pub noise_used: f64,
    pub lml: f64,
    x: Vec<[f64; 2]>,
    alpha: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl GpModel {
    /// Conditions a GP with fixed hyperparameters on `(x, y)`.
    pub fn condition(x: &[[f64; 2]], y: &[f64], hyper: GpHyperparams) -> Result<Self> {
        check_inputs(x, y)?;
        hyper.validate()?;
        let mean_const = y.iter().sum::<f64>() / y.len() as f64;
        let (chol, noise_used) = factorize(x, &hyper)?;
        let resid = DVector::from_iterator(y.len(), y.iter().map(|v| v - mean_const));
        let (lml, alpha) = lml_from(&chol, &resid);
        Ok(GpModel {
            hyper,
            mean_const,
            noise_used,
            lml,
            x: x.to_vec(),
            alpha,
            chol,
        })
    }

    pub fn training_points(&self) -> &[[f64; 2]] {
        &self.x
    }

    pub fn lower_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// Posterior mean and latent variance at each query.
    pub fn predict(&self, xstar: &[[f64; 2]]) -> GpPrediction {
        const CHUNK: usize = 512;
        let chunks: Vec<&[[f64; 2]]> = xstar.chunks(CHUNK).collect();
        let parts = par::map(&chunks, |chunk| self.predict_chunk(chunk));
        let mut out = GpPrediction {
            mean: Vec::with_capacity(xstar.len()),
            var: Vec::with_capacity(xstar.len()),
            clamped: Vec::with_capacity(xstar.len()),
        };
        for p in parts {
            out.mean.extend(p.mean);
            out.var.extend(p.var);
            out.clamped.extend(p.clamped);
        }
        out
    }

    fn predict_chunk(&self, xstar: &[[f64; 2]]) -> GpPrediction {
        let kstar = kernel_matrix(&self.x, xstar, &self.hyper);
        let mean_vec = kstar.tr_mul(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&kstar)
            .expect("Cholesky factor has a positive diagonal");
        let mut out = GpPrediction {
            mean: Vec::with_capacity(xstar.len()),
            var: Vec::with_capacity(xstar.len()),
            clamped: Vec::with_capacity(xstar.len()),
        };
        for j in 0..xstar.len() {
            out.mean.push(self.mean_const + mean_vec[j]);
            let var = self.hyper.sigma2 - v.column(j).norm_squared();
            out.clamped.push(var < 0.0);
            out.var.push(var.max(0.0));
        }
        out
    }
}

/// Starting points and search budget for [`fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    /// Explicit starts; empty means one data-derived start.
    pub init_grid: Vec<GpHyperparams>,
    /// Seeded random starts added after the grid.
    pub restarts: usize,
    pub seed: u64,
    pub max_evals: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            init_grid: Vec::new(),
            restarts: 4,
            seed: 0,
            max_evals: 800,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StartRecord {
    pub start: GpHyperparams,
    /// LML at the start; `-inf` if it could not be factorized.
    pub start_lml: f64,
    pub final_lml: f64,
}

#[derive(Debug, Clone)]
pub struct GpFit {
    pub model: GpModel,
    pub starts: Vec<StartRecord>,
}

struct Scale {
    var: f64,
    span: [f64; 2],
}

impl Scale {
    fn of(x: &[[f64; 2]], y: &[f64]) -> Self {
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64;
        let span = |axis: usize| {
            let (lo, hi) = x
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                    (lo.min(p[axis]), hi.max(p[axis]))
                });
            if hi > lo {
                hi - lo
            } else {
                1.0
            }
        };
        let scale = (y.iter().map(|v| v.abs()).fold(0.0, f64::max)).max(1e-12);
        Scale {
            var: if var > 0.0 { var } else { scale * scale * 1e-6 },
            span: [span(0), span(1)],
        }
    }

    // log-space box that keeps the search away from overflow
    fn admissible(&self, p: &[f64]) -> bool {
        let lv = self.var.ln();
        let within = |v: f64, lo: f64, hi: f64| v.is_finite() && v >= lo && v <= hi;
        let lt = |axis: usize| -2.0 * self.span[axis].ln();
        within(p[0], lv - 25.0, lv + 10.0)
            && within(p[1], lt(0) - 15.0, lt(0) + 25.0)
            && within(p[2], lt(1) - 15.0, lt(1) + 25.0)
            && within(p[3], lv - 30.0, lv + 10.0)
    }
}

/// A start derived from the data: signal variance = target variance,
/// length scale a tenth of each axis' extent, noise a tenth of the signal.
pub fn default_start(x: &[[f64; 2]], y: &[f64]) -> GpHyperparams {
    let s = Scale::of(x, y);
    GpHyperparams {
        sigma2: s.var,
        theta1: 1.0 / (0.1 * s.span[0]).powi(2),
        theta2: 1.0 / (0.1 * s.span[1]).powi(2),
        noise2: 0.1 * s.var,
    }
}

/// Maximum-likelihood hyperparameters over all starts. The winner is the
/// highest final LML, ties going to the earlier start.
pub fn fit(x: &[[f64; 2]], y: &[f64], opts: &FitOptions) -> Result<GpFit> {
    check_inputs(x, y)?;
    if x.len() < 2 {
        return Err(Error::param("GP fit needs at least two points"));
    }
    if opts.init_grid.is_empty() && opts.restarts == 0 {
        return Err(Error::param("GP fit needs at least one start"));
    }
    for h in &opts.init_grid {
        h.validate()?;
    }
    let scale = Scale::of(x, y);
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let resid = DVector::from_iterator(y.len(), y.iter().map(|v| v - mean));

    let objective = |p: &[f64]| -> f64 {
        if !scale.admissible(p) {
            return f64::INFINITY;
        }
        let h = GpHyperparams::from_log(p);
        match factorize(x, &h) {
            Ok((chol, _)) => -lml_from(&chol, &resid).0,
            Err(_) => f64::INFINITY,
        }
    };

    let mut starts: Vec<[f64; 4]> = if opts.init_grid.is_empty() {
        vec![default_start(x, y).to_log()]
    } else {
        opts.init_grid.iter().map(|h| h.to_log()).collect()
    };
    let base = default_start(x, y).to_log();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    for _ in 0..opts.restarts {
        starts.push([
            base[0] + rng.random_range(-2.0..2.0),
            base[1] + rng.random_range(-3.0..3.0),
            base[2] + rng.random_range(-3.0..3.0),
            base[3] + rng.random_range(-4.0..2.0),
        ]);
    }

    let nm = NelderMead {
        step: 1.0,
        max_evals: opts.max_evals,
        f_tol: 1e-10,
        x_tol: 1e-6,
    };
    let results = par::map(&starts, |s| {
        let start_f = objective(s);
        let first = nm.minimize(objective, s);
        // one restart from the best vertex guards against simplex collapse
        let polished = NelderMead { step: 0.25, ..nm }.minimize(objective, &first.x);
        let best = if polished.f <= first.f {
            polished
        } else {
            first
        };
        (start_f, best)
    });

    let mut records = Vec::with_capacity(starts.len());
    let mut winner: Option<(f64, Vec<f64>)> = None;
    for (s, (start_f, best)) in starts.iter().zip(results) {
        let start_h = GpHyperparams::from_log(s);
        records.push(StartRecord {
            start: start_h,
            start_lml: -start_f,
            final_lml: -best.f,
        });
        if best.f.is_finite() && winner.as_ref().is_none_or(|(f, _)| best.f < *f) {
            winner = Some((best.f, best.x));
        }
    }
    let (_, p) =
        winner.ok_or_else(|| Error::Conditioning("no GP start could be factorized".to_string()))?;
    let model = GpModel::condition(x, y, GpHyperparams::from_log(&p))?;
    Ok(GpFit {
        model,
        starts: records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyper(sigma2: f64, theta1: f64, theta2: f64, noise2: f64) -> GpHyperparams {
        GpHyperparams {
            sigma2,
            theta1,
            theta2,
            noise2,
        }
    }

    #[test]
    fn kernel_examples() {
        let h = hyper(1.0, 1.0, 2.0, 1e-3);
        let k = kernel_matrix(&[[0.0, 0.0]], &[[1.0, 1.0], [0.0, 0.0]], &h);
        assert!((k[(0, 0)] - (-3.0f64).exp()).abs() < 1e-15);
        assert!((k[(0, 0)] - 0.049787).abs() < 1e-6);
        assert_eq!(k[(0, 1)], 1.0);
        let h0 = GpHyperparams {
            theta1: 0.0,
            theta2: 0.0,
            ..hyper(2.5, 1.0, 1.0, 1.0)
        };
        let k = kernel_matrix(&[[0.0, 0.0], [5.0, -3.0]], &[[9.0, 9.0]], &h0);
        assert!(k.iter().all(|&v| v == 2.5));
    }

    #[test]
    fn scalar_lml() {
        let h = hyper(2.0, 1.0, 1.0, 0.5);
        let lml = log_marginal_likelihood(&[[0.0, 0.0]], &[3.0], 3.0, &h).unwrap();
        let v: f64 = 2.5;
        assert!((lml - (-0.5 * v.ln() - 0.5 * LN_2PI)).abs() < 1e-14);
    }

    #[test]
    fn lml_drops_with_offset() {
        let x = [[0.0, 0.0], [0.3, 0.1], [1.0, 0.7]];
        let y = [1.0, 1.2, 0.7];
        let h = hyper(1.0, 2.0, 2.0, 0.1);
        let base = log_marginal_likelihood(&x, &y, 1.0, &h).unwrap();
        let shifted: Vec<f64> = y.iter().map(|v| v + 50.0).collect();
        assert!(log_marginal_likelihood(&x, &shifted, 1.0, &h).unwrap() < base);
    }

    #[test]
    fn jitter_escalates_then_fails() {
        // identical points with a degenerate kernel need extra jitter
        let x = [[0.0, 0.0], [0.0, 0.0], [0.0, 0.0]];
        let h = hyper(1.0, 1.0, 1.0, 1e-300);
        let (_, noise) = factorize(&x, &h).unwrap();
        assert!(noise >= JITTER_FLOOR);
        let bad = hyper(1.0, 1.0, 1.0, f64::NAN);
        assert!(log_marginal_likelihood(&x, &[1.0, 2.0, 3.0], 0.0, &bad).is_err());
    }

    #[test]
    fn far_queries_revert_to_prior() {
        let x = [[0.0, 0.0], [1.0, 0.5]];
        let m = GpModel::condition(&x, &[1.0, 3.0], hyper(4.0, 1.0, 1.0, 0.1)).unwrap();
        let p = m.predict(&[[1e3, 1e3]]);
        assert_eq!(p.mean[0], 2.0);
        assert_eq!(p.var[0], 4.0);
    }

    #[test]
    fn constant_targets_predict_the_mean() {
        let x: Vec<[f64; 2]> = (0..12)
            .map(|i| [i as f64 * 0.1, (i % 3) as f64 * 0.2])
            .collect();
        let y = vec![7.5; 12];
        let fit = fit(&x, &y, &FitOptions::default()).unwrap();
        let p = fit.model.predict(&[[0.33, 0.1], [5.0, 5.0]]);
        assert!(p.mean.iter().all(|&m| m == 7.5));
        let h = fit.model.hyper;
        assert!(h.sigma2 + h.noise2 < 1e-3 * 7.5 * 7.5, "{h:?}");
    }
}
