//! Neighbor smoothing, seeded train/test splits, dense/sparse grid
//! segmentation and grid-stratified downsampling.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::index::PointIndex;

pub const DEFAULT_GRID: usize = 15;

/// Replaces score and both speeds with the mean over each point's `k`
/// nearest neighbors. A point is its own first neighbor, so `k = 1` is the
/// identity.
pub fn knn_average(dataset: &Dataset, index: &PointIndex, k: usize) -> Result<Dataset> {
    knn_average_with(dataset, index, k, k)
}

/// As [`knn_average`], with a separate neighbor count for the speeds.
pub fn knn_average_with(
    dataset: &Dataset,
    index: &PointIndex,
    score_k: usize,
    speed_k: usize,
) -> Result<Dataset> {
    if index.len() != dataset.len() {
        return Err(Error::LengthMismatch {
            left: index.len(),
            right: dataset.len(),
        });
    }
    for k in [score_k, speed_k] {
        if k < 1 || k > dataset.len() {
            return Err(Error::NeighborCount {
                k,
                n: dataset.len(),
            });
        }
    }
    let scores: Vec<f64> = dataset.points.iter().map(|p| p.score).collect();
    let down: Vec<f64> = dataset.points.iter().map(|p| p.download_kbps).collect();
    let up: Vec<f64> = dataset.points.iter().map(|p| p.upload_kbps).collect();

    let mut points = dataset.points.clone();
    let mut nbrs = Vec::new();
    let mut ids = Vec::new();
    for p in points.iter_mut() {
        index.knn_into(p.location(), score_k.max(speed_k), &mut nbrs);
        p.score = local_mean(&nbrs[..score_k], &scores, &mut ids);
        p.download_kbps = local_mean(&nbrs[..speed_k], &down, &mut ids);
        p.upload_kbps = local_mean(&nbrs[..speed_k], &up, &mut ids);
    }
    Ok(Dataset {
        points,
        crs_note: dataset.crs_note,
    })
}

// Summed in id order so that k = n yields the same global mean everywhere.
fn local_mean(nbrs: &[crate::index::Neighbor], values: &[f64], ids: &mut Vec<usize>) -> f64 {
    ids.clear();
    ids.extend(nbrs.iter().map(|n| n.id));
    ids.sort_unstable();
    let (mut sum, mut lo, mut hi) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
    for &i in ids.iter() {
        let v = values[i];
        sum += v;
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (sum / ids.len() as f64).clamp(lo, hi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
    pub seed: u64,
    pub ratio: f64,
}

impl Split {
    /// Sidecar with one `id,set` row per point, in id order.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let n = self.train_ids.len() + self.test_ids.len();
        let mut is_train = vec![false; n];
        for &i in &self.train_ids {
            is_train[i] = true;
        }
        writeln!(out, "id,set")?;
        for (i, t) in is_train.iter().enumerate() {
            writeln!(out, "{i},{}", if *t { "train" } else { "test" })?;
        }
        Ok(())
    }
}

/// Uniform random permutation of `0..n`; the first `round(ratio * n)` ids
/// become the training side. Both sides are returned sorted.
pub fn split(n: usize, ratio: f64, seed: u64) -> Result<Split> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::param(format!("split ratio {ratio} not in (0, 1)")));
    }
    if n < 2 {
        return Err(Error::param(format!("cannot split {n} points")));
    }
    let n_train = (ratio * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::param(format!(
            "ratio {ratio} leaves one side of a {n}-point split empty"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let mut train_ids = perm[..n_train].to_vec();
    let mut test_ids = perm[n_train..].to_vec();
    train_ids.sort_unstable();
    test_ids.sort_unstable();
    Ok(Split {
        train_ids,
        test_ids,
        seed,
        ratio,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Dense,
    Sparse,
}

impl Region {
    pub fn as_str(self) -> &'static str {
        match self {
            Region::Dense => "dense",
            Region::Sparse => "sparse",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "dense" => Ok(Region::Dense),
            "sparse" => Ok(Region::Sparse),
            other => Err(Error::Schema(format!("unknown region {other:?}"))),
        }
    }
}

/// Uniform `rows x cols` grid over the bounding box of a point set. Cells
/// holding more points than the mean cell count are dense.
///
/// Row 0 is the southernmost band, column 0 the westernmost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct GridSegmentation {
    pub bbox: [f64; 4],
    pub rows: usize,
    pub cols: usize,
    counts: Vec<u64>,
    dense: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct GridSpec {
    bbox: [f64; 4],
    rows: usize,
    cols: usize,
    counts: Vec<u64>,
}

impl TryFrom<GridSpec> for GridSegmentation {
    type Error = Error;

    fn try_from(spec: GridSpec) -> Result<Self> {
        GridSegmentation::from_counts(spec.bbox, spec.rows, spec.cols, spec.counts)
    }
}

impl From<GridSegmentation> for GridSpec {
    fn from(seg: GridSegmentation) -> Self {
        GridSpec {
            bbox: seg.bbox,
            rows: seg.rows,
            cols: seg.cols,
            counts: seg.counts,
        }
    }
}

impl GridSegmentation {
    pub fn from_counts(bbox: [f64; 4], rows: usize, cols: usize, counts: Vec<u64>) -> Result<Self> {
        if rows == 0 || cols == 0 || counts.len() != rows * cols {
            return Err(Error::param(format!(
                "grid {rows}x{cols} does not match {} counts",
                counts.len()
            )));
        }
        if !bbox.iter().all(|v| v.is_finite()) || bbox[0] > bbox[2] || bbox[1] > bbox[3] {
            return Err(Error::param(format!("invalid bounding box {bbox:?}")));
        }
        let total: u64 = counts.iter().sum();
        let cells = (rows * cols) as u64;
        // count > total / cells, without rounding
        let dense = counts.iter().map(|&c| c * cells > total).collect();
        Ok(GridSegmentation {
            bbox,
            rows,
            cols,
            counts,
            dense,
        })
    }

    pub fn cell_of(&self, p: [f64; 2]) -> (usize, usize) {
        let axis = |v: f64, lo: f64, hi: f64, n: usize| -> usize {
            let width = hi - lo;
            if width <= 0.0 {
                return 0;
            }
            let t = ((v - lo) / width * n as f64).floor();
            t.clamp(0.0, (n - 1) as f64) as usize
        };
        (
            axis(p[1], self.bbox[1], self.bbox[3], self.rows),
            axis(p[0], self.bbox[0], self.bbox[2], self.cols),
        )
    }

    pub fn count(&self, row: usize, col: usize) -> u64 {
        self.counts[row * self.cols + col]
    }

    pub fn is_dense(&self, row: usize, col: usize) -> bool {
        self.dense[row * self.cols + col]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn dense_cells(&self) -> usize {
        self.dense.iter().filter(|&&d| d).count()
    }

    pub fn region_of(&self, p: [f64; 2]) -> Region {
        let (r, c) = self.cell_of(p);
        if self.is_dense(r, c) {
            Region::Dense
        } else {
            Region::Sparse
        }
    }

    /// Sidecar with one `id,row,col,region` line per location.
    pub fn write_labels_csv<W: Write>(&self, locations: &[[f64; 2]], mut out: W) -> Result<()> {
        writeln!(out, "id,row,col,region")?;
        for (i, &p) in locations.iter().enumerate() {
            let (r, c) = self.cell_of(p);
            let region = if self.is_dense(r, c) {
                Region::Dense
            } else {
                Region::Sparse
            };
            writeln!(out, "{i},{r},{c},{region}")?;
        }
        Ok(())
    }
}

pub fn segment_grid(points: &[[f64; 2]], rows: usize, cols: usize) -> Result<GridSegmentation> {
    if points.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if rows == 0 || cols == 0 {
        return Err(Error::param("grid needs at least one row and column"));
    }
    let mut bbox = [
        f64::INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
    ];
    for p in points {
        bbox[0] = bbox[0].min(p[0]);
        bbox[1] = bbox[1].min(p[1]);
        bbox[2] = bbox[2].max(p[0]);
        bbox[3] = bbox[3].max(p[1]);
    }
    let mut seg = GridSegmentation::from_counts(bbox, rows, cols, vec![0; rows * cols])?;
    for &p in points {
        let (r, c) = seg.cell_of(p);
        seg.counts[r * cols + c] += 1;
    }
    GridSegmentation::from_counts(seg.bbox, rows, cols, seg.counts)
}

/// Dense/sparse label of the cell holding `p`; points outside the box
/// take the label of the nearest edge cell.
pub fn classify_cell(seg: &GridSegmentation, p: [f64; 2]) -> Region {
    seg.region_of(p)
}

/// From every occupied cell, draws `ceil(fraction * count)` of its training
/// ids uniformly without replacement. Output is sorted.
pub fn stratified_downsample(
    train_ids: &[usize],
    locations: &[[f64; 2]],
    seg: &GridSegmentation,
    fraction: f64,
    seed: u64,
) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::param(format!("fraction {fraction} not in (0, 1]")));
    }
    let mut cells: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for &id in train_ids {
        let p = *locations
            .get(id)
            .ok_or_else(|| Error::param(format!("train id {id} has no location")))?;
        cells.entry(seg.cell_of(p)).or_default().push(id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for ids in cells.values_mut() {
        ids.sort_unstable();
        // the epsilon keeps 0.1 * 30 from rounding up to 4
        let take = ((fraction * ids.len() as f64) - 1e-9).ceil().max(1.0) as usize;
        let take = take.min(ids.len());
        let (chosen, _) = ids.partial_shuffle(&mut rng, take);
        out.extend_from_slice(chosen);
    }
    out.sort_unstable();
    Ok(out)
}
