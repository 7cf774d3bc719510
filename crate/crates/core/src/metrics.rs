//! Loss metrics, service tiers and run evaluation.

use std::fmt::{self, Write as _};
use std::io::{Read, Write};
use std::str::FromStr;

use crate::data::csv_err;
use crate::error::{Error, Result};
use crate::kernel::Fallback;
use crate::preprocess::{GridSegmentation, Region};

/// Mean absolute, mean squared and maximum absolute error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Losses {
    pub mae: f64,
    pub mse: f64,
    pub mne: f64,
}

pub fn metrics(y_true: &[f64], y_pred: &[f64]) -> Result<Losses> {
    if y_true.len() != y_pred.len() {
        return Err(Error::LengthMismatch {
            left: y_true.len(),
            right: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = y_true.len() as f64;
    let (mut abs, mut sq, mut max) = (0.0, 0.0, 0.0f64);
    for (t, p) in y_true.iter().zip(y_pred) {
        let e = (p - t).abs();
        abs += e;
        sq += e * e;
        max = max.max(e);
    }
    Ok(Losses {
        mae: abs / n,
        mse: sq / n,
        mne: max,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ServiceTier {
    Unserved,
    Underserved,
    Served,
}

impl ServiceTier {
    pub fn as_str(self) -> &'static str {
        match self {
            ServiceTier::Served => "served",
            ServiceTier::Underserved => "underserved",
            ServiceTier::Unserved => "unserved",
        }
    }
}

impl fmt::Display for ServiceTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ServiceTier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "served" => Ok(ServiceTier::Served),
            "underserved" => Ok(ServiceTier::Underserved),
            "unserved" => Ok(ServiceTier::Unserved),
            other => Err(Error::Schema(format!("unknown service tier {other:?}"))),
        }
    }
}

pub const SERVED_DOWN_MBPS: f64 = 100.0;
pub const SERVED_UP_MBPS: f64 = 20.0;
pub const UNDERSERVED_DOWN_MBPS: f64 = 25.0;
pub const UNDERSERVED_UP_MBPS: f64 = 3.0;

/// Tier from speeds in Mbps; all thresholds are inclusive.
pub fn classify_service(download_mbps: f64, upload_mbps: f64) -> Result<ServiceTier> {
    if !(download_mbps >= 0.0 && upload_mbps >= 0.0) {
        return Err(Error::param(format!(
            "speeds must be non-negative (got {download_mbps}, {upload_mbps})"
        )));
    }
    Ok(
        if download_mbps >= SERVED_DOWN_MBPS && upload_mbps >= SERVED_UP_MBPS {
            ServiceTier::Served
        } else if download_mbps >= UNDERSERVED_DOWN_MBPS && upload_mbps >= UNDERSERVED_UP_MBPS {
            ServiceTier::Underserved
        } else {
            ServiceTier::Unserved
        },
    )
}

/// Share of exact tier matches; `None` where a group is empty.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Accuracy {
    pub dense: Option<f64>,
    pub sparse: Option<f64>,
    pub all: Option<f64>,
}

impl Accuracy {
    pub fn get(&self, scope: Scope) -> Option<f64> {
        match scope {
            Scope::Dense => self.dense,
            Scope::Sparse => self.sparse,
            Scope::All => self.all,
        }
    }
}

pub fn classification_accuracy(
    truth: &[ServiceTier],
    predicted: &[ServiceTier],
    regions: &[Region],
) -> Result<Accuracy> {
    if truth.len() != predicted.len() || truth.len() != regions.len() {
        return Err(Error::LengthMismatch {
            left: truth.len(),
            right: predicted.len().min(regions.len()),
        });
    }
    let mut hits = [0usize; 3];
    let mut total = [0usize; 3];
    for ((t, p), r) in truth.iter().zip(predicted).zip(regions) {
        let slot = match r {
            Region::Dense => 0,
            Region::Sparse => 1,
        };
        for s in [slot, 2] {
            total[s] += 1;
            hits[s] += usize::from(t == p);
        }
    }
    let frac = |s: usize| (total[s] > 0).then(|| hits[s] as f64 / total[s] as f64);
    Ok(Accuracy {
        dense: frac(0),
        sparse: frac(1),
        all: frac(2),
    })
}

/// Which test points a report covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Dense,
    Sparse,
    All,
}

impl Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            Scope::Dense => "dense",
            Scope::Sparse => "sparse",
            Scope::All => "all",
        }
    }

    fn contains(self, r: Region) -> bool {
        match self {
            Scope::Dense => r == Region::Dense,
            Scope::Sparse => r == Region::Sparse,
            Scope::All => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub scope: Scope,
    pub n: usize,
    pub mae: f64,
    pub mse: f64,
    pub mne: f64,
    pub accuracy: Option<f64>,
}

/// One row of a prediction file.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRecord {
    pub id: usize,
    pub lon: f64,
    pub lat: f64,
    pub y_true: f64,
    pub y_pred: f64,
    pub region: Region,
    pub fallback: u8,
    /// Posterior variance, GP only.
    pub var: Option<f64>,
}

impl PredictionRecord {
    pub fn from_kernel(
        id: usize,
        loc: [f64; 2],
        y_true: f64,
        y_pred: f64,
        region: Region,
        fallback: Fallback,
    ) -> Self {
        PredictionRecord {
            id,
            lon: loc[0],
            lat: loc[1],
            y_true,
            y_pred,
            region,
            fallback: fallback.code(),
            var: None,
        }
    }
}

const PREDICTION_HEADER: [&str; 7] = [
    "id",
    "lon",
    "lat",
    "y_true",
    "y_pred",
    "region",
    "fallback_flag",
];

/// `id,lon,lat,y_true,y_pred,region,fallback_flag[,var]`.
pub fn write_predictions<W: Write>(records: &[PredictionRecord], out: W) -> Result<()> {
    let with_var = records.iter().any(|r| r.var.is_some());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = PREDICTION_HEADER.to_vec();
    if with_var {
        header.push("var");
    }
    w.write_record(&header).map_err(csv_err)?;
    for r in records {
        let mut row = vec![
            r.id.to_string(),
            r.lon.to_string(),
            r.lat.to_string(),
            r.y_true.to_string(),
            r.y_pred.to_string(),
            r.region.to_string(),
            r.fallback.to_string(),
        ];
        if with_var {
            row.push(r.var.map(|v| v.to_string()).unwrap_or_default());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn column(header: &csv::StringRecord, name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
}

fn parse_at<T: FromStr>(rec: &csv::StringRecord, idx: usize, line: usize) -> Result<T> {
    let raw = rec.get(idx).unwrap_or("").trim();
    raw.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("bad value {raw:?}"),
    })
}

pub fn read_predictions<R: Read>(source: R) -> Result<Vec<PredictionRecord>> {
    let mut rdr = csv::Reader::from_reader(source);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let cols: Vec<usize> = PREDICTION_HEADER
        .iter()
        .map(|c| column(&header, c))
        .collect::<Result<_>>()?;
    let var_col = header.iter().position(|h| h == "var");
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let region: Region =
            rec.get(cols[5])
                .unwrap_or("")
                .parse()
                .map_err(|e: Error| Error::Parse {
                    line,
                    msg: e.to_string(),
                })?;
        out.push(PredictionRecord {
            id: parse_at(&rec, cols[0], line)?,
            lon: parse_at(&rec, cols[1], line)?,
            lat: parse_at(&rec, cols[2], line)?,
            y_true: parse_at(&rec, cols[3], line)?,
            y_pred: parse_at(&rec, cols[4], line)?,
            region,
            fallback: parse_at(&rec, cols[6], line)?,
            var: match var_col {
                Some(c) if !rec.get(c).unwrap_or("").is_empty() => Some(parse_at(&rec, c, line)?),
                _ => None,
            },
        });
    }
    Ok(out)
}

/// One row of a tier-classification file.
#[derive(Debug, Clone, PartialEq)]
pub struct TierRecord {
    pub id: usize,
    pub region: Region,
    pub truth: ServiceTier,
    pub predicted: ServiceTier,
}

pub fn write_tiers<W: Write>(records: &[TierRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "region", "true_tier", "pred_tier"])
        .map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.id.to_string(),
            r.region.to_string(),
            r.truth.to_string(),
            r.predicted.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tiers<R: Read>(source: R) -> Result<Vec<TierRecord>> {
    let mut rdr = csv::Reader::from_reader(source);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let cols: Vec<usize> = ["id", "region", "true_tier", "pred_tier"]
        .iter()
        .map(|c| column(&header, c))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        out.push(TierRecord {
            id: parse_at(&rec, cols[0], line)?,
            region: parse_at(&rec, cols[1], line)?,
            truth: parse_at(&rec, cols[2], line)?,
            predicted: parse_at(&rec, cols[3], line)?,
        });
    }
    Ok(out)
}

pub fn tier_accuracy(records: &[TierRecord]) -> Result<Accuracy> {
    let truth: Vec<ServiceTier> = records.iter().map(|r| r.truth).collect();
    let pred: Vec<ServiceTier> = records.iter().map(|r| r.predicted).collect();
    let regions: Vec<Region> = records.iter().map(|r| r.region).collect();
    classification_accuracy(&truth, &pred, &regions)
}

/// Dense, sparse and overall losses; empty groups are omitted. When a
/// segmentation is given, regions are recomputed from `lon, lat` instead
/// of read from the file.
pub fn evaluate_records(
    records: &[PredictionRecord],
    segmentation: Option<&GridSegmentation>,
    accuracy: Option<&Accuracy>,
) -> Result<Vec<MetricsReport>> {
    let regions: Vec<Region> = records
        .iter()
        .map(|r| match segmentation {
            Some(seg) => seg.region_of([r.lon, r.lat]),
            None => r.region,
        })
        .collect();
    let mut out = Vec::new();
    for scope in [Scope::Dense, Scope::Sparse, Scope::All] {
        let (t, p): (Vec<f64>, Vec<f64>) = records
            .iter()
            .zip(&regions)
            .filter(|(_, &reg)| scope.contains(reg))
            .map(|(r, _)| (r.y_true, r.y_pred))
            .unzip();
        if t.is_empty() {
            continue;
        }
        let l = metrics(&t, &p)?;
        out.push(MetricsReport {
            scope,
            n: t.len(),
            mae: l.mae,
            mse: l.mse,
            mne: l.mne,
            accuracy: accuracy.and_then(|a| a.get(scope)),
        });
    }
    Ok(out)
}

pub fn evaluate_run<R: Read>(
    predictions: R,
    segmentation: Option<&GridSegmentation>,
    tiers: Option<&[TierRecord]>,
) -> Result<Vec<MetricsReport>> {
    let records = read_predictions(predictions)?;
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let acc = tiers.map(tier_accuracy).transpose()?;
    evaluate_records(&records, segmentation, acc.as_ref())
}

/// `region,n,mae,mse,mne[,accuracy]`.
pub fn write_report_csv<W: Write>(reports: &[MetricsReport], mut out: W) -> Result<()> {
    let with_acc = reports.iter().any(|r| r.accuracy.is_some());
    writeln!(
        out,
        "region,n,mae,mse,mne{}",
        if with_acc { ",accuracy" } else { "" }
    )?;
    for r in reports {
        write!(
            out,
            "{},{},{},{},{}",
            r.scope.as_str(),
            r.n,
            r.mae,
            r.mse,
            r.mne
        )?;
        if with_acc {
            write!(
                out,
                ",{}",
                r.accuracy.map(|a| a.to_string()).unwrap_or_default()
            )?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Aligned plain-text table.
pub fn format_report(title: &str, reports: &[MetricsReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{title}");
    let _ = writeln!(
        s,
        "{:<8} {:>7} {:>14} {:>16} {:>14} {:>9}",
        "region", "n", "mae", "mse", "mne", "accuracy"
    );
    for r in reports {
        let acc = r
            .accuracy
            .map(|a| format!("{:.2}%", 100.0 * a))
            .unwrap_or_else(|| "-".into());
        let _ = writeln!(
            s,
            "{:<8} {:>7} {:>14.4} {:>16.4} {:>14.4} {:>9}",
            r.scope.as_str(),
            r.n,
            r.mae,
            r.mse,
            r.mne,
            acc
        );
    }
    s
}
