//! Measurement records: ingestion, validation, the composite score and
//! summary statistics.
//!
//! Two input layouts are accepted, selected by header names:
//!
//! * `lon,lat,avg_d_kbps,avg_u_kbps,tests,devices`
//! * `quadkey,avg_d_kbps,avg_u_kbps,tests,devices`
//!
//! Extra columns are ignored. Rows that land on an identical location are
//! merged: speeds are averaged with test-count weights, tests and devices
//! are summed.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadkey;

pub const CRS_NOTE: &str = "EPSG:4326 geographic degrees (lon, lat)";

/// One aggregated measurement tile.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePoint {
    pub id: usize,
    pub lon: f64,
    pub lat: f64,
    pub download_kbps: f64,
    pub upload_kbps: f64,
    pub tests: u64,
    pub devices: u64,
    pub score: f64,
}

impl SamplePoint {
    pub fn location(&self) -> [f64; 2] {
        [self.lon, self.lat]
    }
}

/// Weighted speed sum, reported in Mbps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRule {
    pub w_down: f64,
    pub w_up: f64,
    pub unit_divisor: f64,
}

impl Default for ScoreRule {
    fn default() -> Self {
        ScoreRule {
            w_down: 1.0,
            w_up: 1.0,
            unit_divisor: 1000.0,
        }
    }
}

impl ScoreRule {
    pub fn new(w_down: f64, w_up: f64) -> Result<Self> {
        let rule = ScoreRule {
            w_down,
            w_up,
            ..ScoreRule::default()
        };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.w_down.is_finite()
            && self.w_up.is_finite()
            && self.w_down >= 0.0
            && self.w_up >= 0.0
            && self.w_down + self.w_up > 0.0
            && self.unit_divisor.is_finite()
            && self.unit_divisor > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::param(format!(
                "score weights must be non-negative with a positive sum (got {}, {})",
                self.w_down, self.w_up
            )))
        }
    }
}

pub fn compute_score(download_kbps: f64, upload_kbps: f64, rule: &ScoreRule) -> f64 {
    (rule.w_down * download_kbps + rule.w_up * upload_kbps) / rule.unit_divisor
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub points: Vec<SamplePoint>,
    pub crs_note: &'static str,
}

impl Dataset {
    /// Wraps already-validated points; ids are reassigned densely in order.
    pub fn from_points(mut points: Vec<SamplePoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut seen: HashMap<(u64, u64), usize> = HashMap::with_capacity(points.len());
        for (i, p) in points.iter_mut().enumerate() {
            p.id = i;
            if let Some(&first) = seen.get(&location_key(p.lon, p.lat)) {
                return Err(Error::DuplicateLocation {
                    lon: p.lon,
                    lat: p.lat,
                    first,
                    second: i,
                });
            }
            seen.insert(location_key(p.lon, p.lat), i);
        }
        Ok(Dataset {
            points,
            crs_note: CRS_NOTE,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn locations(&self) -> Vec<[f64; 2]> {
        self.points.iter().map(SamplePoint::location).collect()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.score).collect()
    }

    /// Canonical form: `id,lon,lat,avg_d_kbps,avg_u_kbps,tests,devices,score`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "id",
            "lon",
            "lat",
            "avg_d_kbps",
            "avg_u_kbps",
            "tests",
            "devices",
            "score",
        ])
        .map_err(csv_err)?;
        for p in &self.points {
            w.write_record([
                p.id.to_string(),
                p.lon.to_string(),
                p.lat.to_string(),
                p.download_kbps.to_string(),
                p.upload_kbps.to_string(),
                p.tests.to_string(),
                p.devices.to_string(),
                p.score.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads the canonical layout back verbatim, score column included (it
/// may hold smoothed values that no longer follow the score rule).
pub fn read_canonical<R: Read>(source: R) -> Result<Dataset> {
    let mut rdr = csv::Reader::from_reader(source);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let names = [
        "id",
        "lon",
        "lat",
        "avg_d_kbps",
        "avg_u_kbps",
        "tests",
        "devices",
        "score",
    ];
    let cols: Vec<usize> = names
        .iter()
        .map(|n| {
            header
                .iter()
                .position(|h| h == *n)
                .ok_or_else(|| Error::Schema(format!("missing column `{n}`")))
        })
        .collect::<Result<_>>()?;
    let mut points = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let id: usize = field(&rec, cols[0], "id", line)?
            .parse()
            .map_err(|_| Error::Parse {
                line,
                msg: "bad id".into(),
            })?;
        if id != points.len() {
            return Err(Error::Parse {
                line,
                msg: format!("ids must be dense and ordered, found {id}"),
            });
        }
        points.push(SamplePoint {
            id,
            lon: real(&rec, cols[1], "lon", line)?,
            lat: real(&rec, cols[2], "lat", line)?,
            download_kbps: real(&rec, cols[3], "avg_d_kbps", line)?,
            upload_kbps: real(&rec, cols[4], "avg_u_kbps", line)?,
            tests: count(&rec, cols[5], "tests", line)?,
            devices: count(&rec, cols[6], "devices", line)?,
            score: real(&rec, cols[7], "score", line)?,
        });
    }
    Dataset::from_points(points)
}

fn location_key(lon: f64, lat: f64) -> (u64, u64) {
    // +0.0 and -0.0 are the same place
    ((lon + 0.0).to_bits(), (lat + 0.0).to_bits())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line,
            msg: format!("{other:?}"),
        },
    }
}

enum Layout {
    LonLat { lon: usize, lat: usize },
    Quadkey { key: usize },
}

struct Columns {
    layout: Layout,
    down: usize,
    up: usize,
    tests: usize,
    devices: usize,
}

impl Columns {
    fn from_header(header: &csv::StringRecord) -> Result<Self> {
        let find = |name: &str| header.iter().position(|h| h.trim() == name);
        let require = |name: &str| {
            find(name).ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
        };
        let layout = match (find("lon"), find("lat"), find("quadkey")) {
            (Some(lon), Some(lat), _) => Layout::LonLat { lon, lat },
            (_, _, Some(key)) => Layout::Quadkey { key },
            _ => {
                return Err(Error::Schema(
                    "header needs `lon,lat` or `quadkey` columns".into(),
                ))
            }
        };
        Ok(Columns {
            layout,
            down: require("avg_d_kbps")?,
            up: require("avg_u_kbps")?,
            tests: require("tests")?,
            devices: require("devices")?,
        })
    }
}

struct RawRow {
    lon: f64,
    lat: f64,
    down: f64,
    up: f64,
    tests: u64,
    devices: u64,
}

fn field<'a>(rec: &'a csv::StringRecord, idx: usize, name: &str, line: usize) -> Result<&'a str> {
    rec.get(idx).map(str::trim).ok_or_else(|| Error::Parse {
        line,
        msg: format!("missing field `{name}`"),
    })
}

fn real(rec: &csv::StringRecord, idx: usize, name: &str, line: usize) -> Result<f64> {
    let s = field(rec, idx, name, line)?;
    let v: f64 = s.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("`{name}` is not a number: {s:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            msg: format!("`{name}` is not finite"),
        });
    }
    Ok(v)
}

fn count(rec: &csv::StringRecord, idx: usize, name: &str, line: usize) -> Result<u64> {
    let s = field(rec, idx, name, line)?;
    let v: u64 = s.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("`{name}` is not a non-negative integer: {s:?}"),
    })?;
    if v < 1 {
        return Err(Error::Parse {
            line,
            msg: format!("`{name}` must be at least 1"),
        });
    }
    Ok(v)
}

fn parse_row(rec: &csv::StringRecord, cols: &Columns, line: usize) -> Result<RawRow> {
    let (lon, lat) = match cols.layout {
        Layout::LonLat { lon, lat } => (real(rec, lon, "lon", line)?, real(rec, lat, "lat", line)?),
        Layout::Quadkey { key } => {
            let key = field(rec, key, "quadkey", line)?;
            quadkey::tile_centroid(key).map_err(|e| Error::Parse {
                line,
                msg: e.to_string(),
            })?
        }
    };
    if !(-180.0..=180.0).contains(&lon) {
        return Err(Error::Parse {
            line,
            msg: format!("lon {lon} outside [-180, 180]"),
        });
    }
    if !(-90.0..=90.0).contains(&lat) {
        return Err(Error::Parse {
            line,
            msg: format!("lat {lat} outside [-90, 90]"),
        });
    }
    let down = real(rec, cols.down, "avg_d_kbps", line)?;
    let up = real(rec, cols.up, "avg_u_kbps", line)?;
    if down < 0.0 || up < 0.0 {
        return Err(Error::Parse {
            line,
            msg: "negative speed".into(),
        });
    }
    Ok(RawRow {
        lon,
        lat,
        down,
        up,
        tests: count(rec, cols.tests, "tests", line)?,
        devices: count(rec, cols.devices, "devices", line)?,
    })
}

/// Rows merged at one location. Singletons keep their values untouched so
/// canonical output re-parses bit-exactly.
struct Merged {
    first: RawRow,
    rows: usize,
    tests: u64,
    devices: u64,
    down_weighted: f64,
    up_weighted: f64,
}

/// Reads measurement rows and merges duplicate locations.
pub fn parse_records<R: Read>(source: R, rule: &ScoreRule) -> Result<Dataset> {
    rule.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(source);
    let header = reader.headers().map_err(csv_err)?.clone();
    let cols = Columns::from_header(&header)?;

    let mut slots: HashMap<(u64, u64), usize> = HashMap::new();
    let mut merged: Vec<Merged> = Vec::new();
    let mut rec = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(csv_err(e)),
        }
        if rec.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let row = parse_row(&rec, &cols, line)?;
        let key = location_key(row.lon, row.lat);
        match slots.get(&key) {
            Some(&slot) => {
                let m = &mut merged[slot];
                let t = row.tests as f64;
                m.rows += 1;
                m.tests += row.tests;
                m.devices += row.devices;
                m.down_weighted += t * row.down;
                m.up_weighted += t * row.up;
            }
            None => {
                slots.insert(key, merged.len());
                let t = row.tests as f64;
                merged.push(Merged {
                    rows: 1,
                    tests: row.tests,
                    devices: row.devices,
                    down_weighted: t * row.down,
                    up_weighted: t * row.up,
                    first: row,
                });
            }
        }
    }
    if merged.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let points = merged
        .into_iter()
        .enumerate()
        .map(|(id, m)| {
            let (down, up) = if m.rows == 1 {
                (m.first.down, m.first.up)
            } else {
                let t = m.tests as f64;
                (m.down_weighted / t, m.up_weighted / t)
            };
            SamplePoint {
                id,
                lon: m.first.lon,
                lat: m.first.lat,
                download_kbps: down,
                upload_kbps: up,
                tests: m.tests,
                devices: m.devices,
                score: compute_score(down, up, rule),
            }
        })
        .collect();
    Ok(Dataset {
        points,
        crs_note: CRS_NOTE,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Population standard deviation.
    pub stddev: f64,
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "n = {}\nscore mean = {:.3}\nscore min = {:.3}\nscore max = {:.3}\nscore stddev = {:.3}",
            self.n, self.mean, self.min, self.max, self.stddev
        )
    }
}

pub fn summarize(dataset: &Dataset) -> Result<Summary> {
    summarize_values(&dataset.scores())
}

pub fn summarize_values(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    Ok(Summary {
        n,
        mean,
        min,
        max,
        stddev: var.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "lon,lat,avg_d_kbps,avg_u_kbps,tests,devices\n";

    fn parse(body: &str) -> Result<Dataset> {
        parse_records(format!("{HEADER}{body}").as_bytes(), &ScoreRule::default())
    }

    #[test]
    fn single_row_score() {
        let ds = parse("-84.39,33.75,100000,20000,5,3").unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.points[0].score, 120.0);
        assert_eq!(ds.points[0].tests, 5);
    }

    #[test]
    fn duplicates_are_test_weighted() {
        let ds = parse("1,2,100000,0,1,1\n1,2,200000,0,3,2\n").unwrap();
        assert_eq!(ds.len(), 1);
        let p = &ds.points[0];
        assert_eq!(p.download_kbps, 175000.0);
        assert_eq!(p.tests, 4);
        assert_eq!(p.devices, 3);
    }

    #[test]
    fn range_errors_carry_line() {
        match parse("0,0,1,1,1,1\n-84,95,1,1,1,1\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse("0,0,-1,1,1,1"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(parse("0,0,x,1,1,1"), Err(Error::Parse { .. })));
        assert!(matches!(parse("0,0,1,1,0,1"), Err(Error::Parse { .. })));
    }

    #[test]
    fn empty_after_header() {
        assert!(matches!(parse(""), Err(Error::EmptyDataset)));
    }

    #[test]
    fn missing_columns() {
        let r = parse_records("lon,lat,tests\n1,2,3\n".as_bytes(), &ScoreRule::default());
        assert!(matches!(r, Err(Error::Schema(_))));
    }

    #[test]
    fn quadkey_layout() {
        let src = "quadkey,avg_d_kbps,avg_u_kbps,tests,devices,extra\n3,1000,1000,1,1,zz\n";
        let ds = parse_records(src.as_bytes(), &ScoreRule::default()).unwrap();
        assert_eq!(ds.points[0].lon, 90.0);
        assert_eq!(ds.points[0].score, 2.0);
        let bad = "quadkey,avg_d_kbps,avg_u_kbps,tests,devices\n4,1,1,1,1\n";
        assert!(matches!(
            parse_records(bad.as_bytes(), &ScoreRule::default()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn score_examples() {
        let r = ScoreRule::default();
        assert_eq!(compute_score(100000.0, 20000.0, &r), 120.0);
        assert_eq!(compute_score(0.0, 0.0, &r), 0.0);
        let r = ScoreRule::new(2.0, 1.0).unwrap();
        assert_eq!(compute_score(50000.0, 10000.0, &r), 110.0);
        assert!(ScoreRule::new(0.0, 0.0).is_err());
        assert!(ScoreRule::new(-1.0, 2.0).is_err());
    }

    #[test]
    fn summary() {
        let s = summarize_values(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.n, s.mean, s.min, s.max), (3, 2.0, 1.0, 3.0));
        assert!((s.stddev - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let s = summarize_values(&[5.0]).unwrap();
        assert_eq!((s.mean, s.stddev), (5.0, 0.0));
        assert!(summarize_values(&[]).is_err());
    }

    #[test]
    fn from_points_rejects_duplicates() {
        let p = SamplePoint {
            id: 0,
            lon: 1.0,
            lat: 1.0,
            download_kbps: 0.0,
            upload_kbps: 0.0,
            tests: 1,
            devices: 1,
            score: 0.0,
        };
        let r = Dataset::from_points(vec![p.clone(), p]);
        assert!(matches!(r, Err(Error::DuplicateLocation { .. })));
    }
}
