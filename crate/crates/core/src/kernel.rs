//! Gaussian-kernel Nadaraya-Watson regression over the k nearest training
//! points, with either a fixed bandwidth or the self-tuning bandwidth
//! `h(x) = c * R_k(x)^2`, where `R_k(x)` is the distance from `x` to its
//! k-th nearest training point.
//!
//! The same `k` truncates the sum and defines `R_k`. A training location
//! queried against its own index counts itself as a neighbor at distance
//! zero.
//!
//! The `1/h` factor of the scaled kernel cancels in the ratio and is never
//! evaluated; weights are computed as `exp(e_i - max e)` with
//! `e_i = -(d_i / h)^2 / 2`.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{Metric, Neighbor, PointIndex};
use crate::par;
use crate::preprocess::{GridSegmentation, Region};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub const DEFAULT_CS: [f64; 5] = [0.005, 0.01, 0.02, 0.05, 0.075];
pub const DEFAULT_KS: [usize; 2] = [5, 10];

/// Standard normal density.
pub fn gaussian_kernel(u: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * u * u).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Fixed,
    SelfTuning,
}

impl KernelKind {
    /// Short method name used in file names and reports.
    pub fn method_name(self) -> &'static str {
        match self {
            KernelKind::Fixed => "fbkr",
            KernelKind::SelfTuning => "stbkr",
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.method_name())
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fbkr" | "fixed" => Ok(KernelKind::Fixed),
            "stbkr" | "self_tuning" => Ok(KernelKind::SelfTuning),
            _ => Err(Error::param(format!("unknown kernel method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub kind: KernelKind,
    /// Bandwidth itself (fixed) or its magnitude (self-tuning).
    pub c: f64,
    /// Neighbors used for truncation and for `R_k`.
    pub k: usize,
}

impl KernelConfig {
    pub fn new(kind: KernelKind, c: f64, k: usize) -> Result<Self> {
        let cfg = KernelConfig { kind, c, k };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::param(format!(
                "bandwidth magnitude c = {} must be > 0",
                self.c
            )));
        }
        if self.k < 1 {
            return Err(Error::param("k must be at least 1"));
        }
        Ok(())
    }

    /// Bandwidth for a query whose k-th neighbor sits at `r_k`.
    pub fn bandwidth_for(&self, r_k: f64) -> f64 {
        match self.kind {
            KernelKind::Fixed => self.c,
            KernelKind::SelfTuning => self.c * r_k * r_k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionParams {
    pub dense: KernelConfig,
    pub sparse: KernelConfig,
}

impl RegionParams {
    pub fn uniform(cfg: KernelConfig) -> Self {
        RegionParams {
            dense: cfg,
            sparse: cfg,
        }
    }

    pub fn get(&self, region: Region) -> &KernelConfig {
        match region {
            Region::Dense => &self.dense,
            Region::Sparse => &self.sparse,
        }
    }
}

/// How a prediction was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fallback {
    #[default]
    None,
    /// Bandwidth was zero; coincident neighbors were averaged.
    ZeroBandwidth,
    /// Every kernel weight underflowed; plain neighbor mean.
    Uniform,
}

impl Fallback {
    pub fn code(self) -> u8 {
        match self {
            Fallback::None => 0,
            Fallback::ZeroBandwidth => 1,
            Fallback::Uniform => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub value: f64,
    pub fallback: Fallback,
}

/// `Ok(None)` signals a degenerate (zero) bandwidth.
pub fn bandwidth(config: &KernelConfig, index: &PointIndex, x: [f64; 2]) -> Result<Option<f64>> {
    config.validate()?;
    let h = match config.kind {
        KernelKind::Fixed => config.c,
        KernelKind::SelfTuning => config.bandwidth_for(index.kth_distance(x, config.k)?),
    };
    Ok((h > 0.0).then_some(h))
}

/// Kernel-weighted mean of `targets` over `neighbors` (sorted ascending).
pub fn weighted_estimate(neighbors: &[Neighbor], targets: &[f64], h: f64) -> Prediction {
    let (lo, hi) = neighbors
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), n| {
            (lo.min(targets[n.id]), hi.max(targets[n.id]))
        });
    if h.is_nan() || h <= 0.0 {
        let zero: Vec<f64> = neighbors
            .iter()
            .filter(|n| n.dist == 0.0)
            .map(|n| targets[n.id])
            .collect();
        if !zero.is_empty() {
            let mean = zero.iter().sum::<f64>() / zero.len() as f64;
            return Prediction {
                value: mean.clamp(lo, hi),
                fallback: Fallback::ZeroBandwidth,
            };
        }
        return uniform(neighbors, targets, lo, hi);
    }

    // neighbors are sorted, so the first has the largest exponent
    let exponent = |d: f64| {
        let u = d / h;
        -0.5 * u * u
    };
    let top = exponent(neighbors[0].dist);
    if !top.is_finite() {
        return uniform(neighbors, targets, lo, hi);
    }
    let (mut num, mut den) = (0.0, 0.0);
    for n in neighbors {
        let w = (exponent(n.dist) - top).exp();
        num += w * targets[n.id];
        den += w;
    }
    if den.is_nan() || den <= 0.0 || !num.is_finite() {
        return uniform(neighbors, targets, lo, hi);
    }
    Prediction {
        value: (num / den).clamp(lo, hi),
        fallback: Fallback::None,
    }
}

fn uniform(neighbors: &[Neighbor], targets: &[f64], lo: f64, hi: f64) -> Prediction {
    let mean = neighbors.iter().map(|n| targets[n.id]).sum::<f64>() / neighbors.len() as f64;
    Prediction {
        value: mean.clamp(lo, hi),
        fallback: Fallback::Uniform,
    }
}

fn estimate_at(
    config: &KernelConfig,
    index: &PointIndex,
    targets: &[f64],
    x: [f64; 2],
    buf: &mut Vec<Neighbor>,
) -> Prediction {
    index.knn_into(x, config.k, buf);
    let h = config.bandwidth_for(buf[config.k - 1].dist);
    weighted_estimate(buf, targets, h)
}

/// A fitted kernel regressor: training index, targets and per-region
/// parameters.
#[derive(Debug, Clone)]
pub struct KernelModel {
    index: PointIndex,
    targets: Vec<f64>,
    params: RegionParams,
    segmentation: GridSegmentation,
}

impl KernelModel {
    pub fn fit(
        locations: &[[f64; 2]],
        targets: &[f64],
        params: RegionParams,
        segmentation: GridSegmentation,
        metric: Metric,
    ) -> Result<Self> {
        if locations.len() != targets.len() {
            return Err(Error::LengthMismatch {
                left: locations.len(),
                right: targets.len(),
            });
        }
        let index = PointIndex::build_with(locations, metric)?;
        for cfg in [params.dense, params.sparse] {
            cfg.validate()?;
            if cfg.k > index.len() {
                return Err(Error::NeighborCount {
                    k: cfg.k,
                    n: index.len(),
                });
            }
        }
        Ok(KernelModel {
            index,
            targets: targets.to_vec(),
            params,
            segmentation,
        })
    }

    pub fn params(&self) -> &RegionParams {
        &self.params
    }

    pub fn segmentation(&self) -> &GridSegmentation {
        &self.segmentation
    }

    pub fn index(&self) -> &PointIndex {
        &self.index
    }

    pub fn region(&self, x: [f64; 2]) -> Region {
        self.segmentation.region_of(x)
    }

    pub fn predict(&self, x: [f64; 2]) -> Prediction {
        let cfg = self.params.get(self.region(x));
        self.predict_with(cfg, x)
    }

    /// Predicts with an explicit configuration, ignoring the region map.
    pub fn predict_with(&self, config: &KernelConfig, x: [f64; 2]) -> Prediction {
        let mut buf = Vec::with_capacity(config.k);
        estimate_at(config, &self.index, &self.targets, x, &mut buf)
    }

    pub fn bandwidth_at(&self, x: [f64; 2]) -> Option<f64> {
        let cfg = self.params.get(self.region(x));
        bandwidth(cfg, &self.index, x).ok().flatten()
    }

    pub fn predict_many(&self, xs: &[[f64; 2]]) -> Vec<Prediction> {
        par::map(xs, |&x| self.predict(x))
    }
}

/// Candidate grids for cross-validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvGrid {
    pub cs: Vec<f64>,
    pub ks: Vec<usize>,
}

impl Default for CvGrid {
    fn default() -> Self {
        CvGrid {
            cs: DEFAULT_CS.to_vec(),
            ks: DEFAULT_KS.to_vec(),
        }
    }
}

/// Mean validation MSE of one candidate in one region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvScore {
    pub region: Region,
    pub k: usize,
    pub c: f64,
    pub mse: f64,
    pub folds_used: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub params: RegionParams,
    pub scores: Vec<CvScore>,
}

struct FoldStats {
    // [region][candidate] squared-error sums, and per-region counts
    sse: [Vec<f64>; 2],
    count: [usize; 2],
}

fn region_slot(r: Region) -> usize {
    match r {
        Region::Dense => 0,
        Region::Sparse => 1,
    }
}

/// Per-region k-fold selection of `(c, k)` by validation MSE.
///
/// Each fold refits the index on its training side; a validation point
/// only contributes to the region its cell belongs to. Ties go to the
/// smaller `k`, then the smaller `c`.
#[allow(clippy::too_many_arguments)]
pub fn cross_validate(
    locations: &[[f64; 2]],
    targets: &[f64],
    kind: KernelKind,
    grid: &CvGrid,
    folds: usize,
    seed: u64,
    segmentation: &GridSegmentation,
    metric: Metric,
) -> Result<CvOutcome> {
    let m = locations.len();
    if m != targets.len() {
        return Err(Error::LengthMismatch {
            left: m,
            right: targets.len(),
        });
    }
    if folds < 2 {
        return Err(Error::param(format!("need at least 2 folds, got {folds}")));
    }
    if grid.cs.is_empty() || grid.ks.is_empty() {
        return Err(Error::param("candidate grids must be non-empty"));
    }
    let mut ks = grid.ks.clone();
    ks.sort_unstable();
    ks.dedup();
    let mut cs = grid.cs.clone();
    cs.sort_by(f64::total_cmp);
    cs.dedup();
    for &c in &cs {
        KernelConfig::new(kind, c, 1)?;
    }
    if ks[0] < 1 {
        return Err(Error::param("k must be at least 1"));
    }
    let k_max = *ks.last().expect("non-empty");
    if m < folds {
        return Err(Error::param(format!(
            "{m} points cannot form {folds} folds"
        )));
    }

    let mut perm: Vec<usize> = (0..m).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0usize; m];
    for (j, &p) in perm.iter().enumerate() {
        fold_of[p] = j % folds;
    }
    let smallest_train = m - m.div_ceil(folds);
    if smallest_train < k_max {
        return Err(Error::param(format!(
            "fold training sides of {smallest_train} points cannot supply k = {k_max}"
        )));
    }

    let candidates: Vec<(usize, f64)> = ks
        .iter()
        .flat_map(|&k| cs.iter().map(move |&c| (k, c)))
        .collect();
    let fold_ids: Vec<usize> = (0..folds).collect();
    let stats: Vec<Result<FoldStats>> = par::map(&fold_ids, |&f| {
        let train: Vec<usize> = (0..m).filter(|&i| fold_of[i] != f).collect();
        let locs: Vec<[f64; 2]> = train.iter().map(|&i| locations[i]).collect();
        let ys: Vec<f64> = train.iter().map(|&i| targets[i]).collect();
        let index = PointIndex::build_with(&locs, metric)?;
        let mut st = FoldStats {
            sse: [vec![0.0; candidates.len()], vec![0.0; candidates.len()]],
            count: [0, 0],
        };
        let mut buf = Vec::with_capacity(k_max);
        for v in (0..m).filter(|&i| fold_of[i] == f) {
            let x = locations[v];
            let slot = region_slot(segmentation.region_of(x));
            st.count[slot] += 1;
            index.knn_into(x, k_max, &mut buf);
            for (ci, &(k, c)) in candidates.iter().enumerate() {
                let cfg = KernelConfig { kind, c, k };
                let nb = &buf[..k];
                let pred = weighted_estimate(nb, &ys, cfg.bandwidth_for(nb[k - 1].dist));
                let e = pred.value - targets[v];
                st.sse[slot][ci] += e * e;
            }
        }
        Ok(st)
    });
    let stats: Vec<FoldStats> = stats.into_iter().collect::<Result<_>>()?;

    let mut scores = Vec::new();
    let mut chosen = [None::<KernelConfig>; 2];
    for region in [Region::Dense, Region::Sparse] {
        let slot = region_slot(region);
        let used: Vec<&FoldStats> = stats.iter().filter(|s| s.count[slot] > 0).collect();
        if used.is_empty() {
            return Err(Error::EmptyRegion(region.as_str()));
        }
        let mut best: Option<(f64, KernelConfig)> = None;
        for (ci, &(k, c)) in candidates.iter().enumerate() {
            let mse = used
                .iter()
                .map(|s| s.sse[slot][ci] / s.count[slot] as f64)
                .sum::<f64>()
                / used.len() as f64;
            scores.push(CvScore {
                region,
                k,
                c,
                mse,
                folds_used: used.len(),
            });
            if best.is_none_or(|(b, _)| mse < b) {
                best = Some((mse, KernelConfig { kind, c, k }));
            }
        }
        chosen[slot] = best.map(|(_, cfg)| cfg);
    }
    Ok(CvOutcome {
        params: RegionParams {
            dense: chosen[0].expect("dense chosen"),
            sparse: chosen[1].expect("sparse chosen"),
        },
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::segment_grid;

    #[test]
    fn kernel_values() {
        assert_eq!(gaussian_kernel(0.0), 0.3989422804014327);
        assert!((gaussian_kernel(1.0) - 0.24197072451914337).abs() < 1e-17);
        for u in [0.3, 1.7, 12.0, 40.0] {
            assert_eq!(gaussian_kernel(u), gaussian_kernel(-u));
        }
    }

    fn line_model(ys: &[f64], cfg: KernelConfig) -> KernelModel {
        let locs: Vec<[f64; 2]> = (0..ys.len()).map(|i| [i as f64, 0.0]).collect();
        let seg = segment_grid(&locs, 1, 1).unwrap();
        KernelModel::fit(&locs, ys, RegionParams::uniform(cfg), seg, Metric::Planar).unwrap()
    }

    #[test]
    fn bandwidth_examples() {
        let idx = PointIndex::build(&[[0.0, 0.0], [2.0, 0.0], [5.0, 0.0]]).unwrap();
        let fixed = KernelConfig::new(KernelKind::Fixed, 0.05, 2).unwrap();
        assert_eq!(bandwidth(&fixed, &idx, [9.0, 9.0]).unwrap(), Some(0.05));
        let st = KernelConfig::new(KernelKind::SelfTuning, 0.05, 2).unwrap();
        // R_2 at the origin is 2
        let h = bandwidth(&st, &idx, [0.0, 0.0]).unwrap().unwrap();
        assert!((h - 0.2).abs() < 1e-15);
        let st1 = KernelConfig::new(KernelKind::SelfTuning, 0.05, 1).unwrap();
        assert_eq!(bandwidth(&st1, &idx, [2.0, 0.0]).unwrap(), None);
        assert!(KernelConfig::new(KernelKind::Fixed, 0.0, 1).is_err());
        assert!(KernelConfig::new(KernelKind::Fixed, 1.0, 0).is_err());
    }

    #[test]
    fn predict_examples() {
        let cfg = KernelConfig::new(KernelKind::Fixed, 0.3, 1).unwrap();
        let m = line_model(&[4.0, 8.0, 1.0], cfg);
        assert_eq!(m.predict([1.2, 0.3]).value, 8.0);

        // equidistant neighbors average evenly for any h
        for h in [1e-3, 0.7, 1e6] {
            let cfg = KernelConfig::new(KernelKind::Fixed, h, 2).unwrap();
            let m = line_model(&[10.0, 20.0], cfg);
            assert_eq!(m.predict([0.5, 0.0]).value, 15.0);
        }

        // d = {1, 2}, y = {0, 10}, h = 1
        let k1 = (-0.5f64).exp();
        let k2 = (-2.0f64).exp();
        let direct = 10.0 * k2 / (k1 + k2);
        let cfg = KernelConfig::new(KernelKind::Fixed, 1.0, 2).unwrap();
        let m = line_model(&[0.0, 10.0], cfg);
        let p = m.predict([-1.0, 0.0]);
        assert!((p.value - direct).abs() < 1e-12);
        assert!((p.value - 1.8243).abs() < 1e-4);
        assert_eq!(p.fallback, Fallback::None);
    }

    #[test]
    fn degenerate_bandwidth_returns_own_target() {
        let cfg = KernelConfig::new(KernelKind::SelfTuning, 0.05, 1).unwrap();
        let m = line_model(&[3.5, -2.0, 7.25], cfg);
        let p = m.predict([1.0, 0.0]);
        assert_eq!(p.value, -2.0);
        assert_eq!(p.fallback, Fallback::ZeroBandwidth);
    }

    #[test]
    fn underflow_falls_back_to_mean() {
        let cfg = KernelConfig::new(KernelKind::Fixed, 1e-300, 2).unwrap();
        let m = line_model(&[2.0, 4.0], cfg);
        let p = m.predict([-1.0, 0.0]);
        assert_eq!(p.fallback, Fallback::Uniform);
        assert_eq!(p.value, 3.0);
    }

    #[test]
    fn tiny_bandwidth_still_favors_nearest() {
        // exponents around -1e4 underflow individually but not after shifting
        let cfg = KernelConfig::new(KernelKind::Fixed, 0.01, 2).unwrap();
        let m = line_model(&[2.0, 4.0], cfg);
        let p = m.predict([-1.0, 0.0]);
        assert_eq!(p.fallback, Fallback::None);
        assert_eq!(p.value, 2.0);
    }

    #[test]
    fn cv_single_candidate_and_errors() {
        let locs: Vec<[f64; 2]> = (0..40).map(|i| [(i % 8) as f64, (i / 8) as f64]).collect();
        let ys: Vec<f64> = locs.iter().map(|p| p[0] + 2.0 * p[1]).collect();
        let seg = segment_grid(&locs, 1, 2).unwrap();
        let grid = CvGrid {
            cs: vec![0.4],
            ks: vec![3],
        };
        // 1x2 over 40 points: 20/20 split means no dense cell
        let r = cross_validate(
            &locs,
            &ys,
            KernelKind::Fixed,
            &grid,
            5,
            1,
            &seg,
            Metric::Planar,
        );
        assert!(matches!(r, Err(Error::EmptyRegion("dense"))));

        let seg = segment_grid(&locs, 2, 2).unwrap();
        let mut locs2 = locs.clone();
        locs2.push([0.0, 0.5]);
        let mut ys2 = ys.clone();
        ys2.push(1.0);
        let seg2 = segment_grid(&locs2, 2, 2).unwrap();
        assert!(seg2.dense_cells() > 0);
        let out = cross_validate(
            &locs2,
            &ys2,
            KernelKind::Fixed,
            &grid,
            5,
            1,
            &seg2,
            Metric::Planar,
        )
        .unwrap();
        assert_eq!(
            out.params.dense,
            KernelConfig::new(KernelKind::Fixed, 0.4, 3).unwrap()
        );
        assert_eq!(out.params.sparse, out.params.dense);

        let big = CvGrid {
            cs: vec![0.4],
            ks: vec![39],
        };
        assert!(cross_validate(
            &locs,
            &ys,
            KernelKind::Fixed,
            &big,
            5,
            1,
            &seg,
            Metric::Planar
        )
        .is_err());
        assert!(cross_validate(
            &locs,
            &ys,
            KernelKind::Fixed,
            &grid,
            1,
            1,
            &seg,
            Metric::Planar
        )
        .is_err());
    }
}
