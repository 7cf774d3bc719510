//! Regular rasters over a lon/lat box and their file encodings.
//!
//! Row 0 is the northern edge, as in image coordinates.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min_lon: f64,
    pub min_lat: f64,
    pub max_lon: f64,
    pub max_lat: f64,
}

impl Bounds {
    pub fn new(min_lon: f64, min_lat: f64, max_lon: f64, max_lat: f64) -> Result<Self> {
        let b = Bounds {
            min_lon,
            min_lat,
            max_lon,
            max_lat,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.min_lon, self.min_lat, self.max_lon, self.max_lat]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite || self.min_lon >= self.max_lon || self.min_lat >= self.max_lat {
            return Err(Error::param(format!("degenerate bounds {self:?}")));
        }
        Ok(())
    }

    /// Smallest box holding every point, padded by `pad` of its extent.
    pub fn enclosing(points: &[[f64; 2]], pad: f64) -> Result<Self> {
        let first = points.first().ok_or(Error::EmptyDataset)?;
        let mut b = [first[0], first[1], first[0], first[1]];
        for p in points {
            b[0] = b[0].min(p[0]);
            b[1] = b[1].min(p[1]);
            b[2] = b[2].max(p[0]);
            b[3] = b[3].max(p[1]);
        }
        let dx = (b[2] - b[0]).max(1e-9) * pad;
        let dy = (b[3] - b[1]).max(1e-9) * pad;
        Bounds::new(b[0] - dx, b[1] - dy, b[2] + dx, b[3] + dy)
    }

    /// Parses `min_lon,min_lat,max_lon,max_lat`.
    pub fn parse(s: &str) -> Result<Self> {
        let v: Vec<f64> = s
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::param(format!("bounds {s:?} are not four numbers")))?;
        match v[..] {
            [a, b, c, d] => Bounds::new(a, b, c, d),
            _ => Err(Error::param(format!("bounds {s:?} are not four numbers"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub rows: usize,
    pub cols: usize,
    pub bounds: Bounds,
    /// Row-major values, `rows * cols` long.
    pub values: Vec<f64>,
}

/// Cell-center coordinates of a `rows x cols` grid, row-major.
pub fn grid_centers(bounds: &Bounds, rows: usize, cols: usize) -> Result<Vec<[f64; 2]>> {
    bounds.validate()?;
    if rows == 0 || cols == 0 {
        return Err(Error::param("raster needs at least one row and column"));
    }
    let w = (bounds.max_lon - bounds.min_lon) / cols as f64;
    let h = (bounds.max_lat - bounds.min_lat) / rows as f64;
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let lat = bounds.max_lat - (r as f64 + 0.5) * h;
        for c in 0..cols {
            out.push([bounds.min_lon + (c as f64 + 0.5) * w, lat]);
        }
    }
    Ok(out)
}

/// Linear ramp endpoints used by the SVG and RGBA encodings.
pub const RAMP_LOW: [u8; 3] = [68, 1, 84];
pub const RAMP_HIGH: [u8; 3] = [253, 231, 37];

pub fn ramp(level: u8) -> [u8; 3] {
    let t = u32::from(level);
    let mix = |a: u8, b: u8| ((u32::from(a) * (255 - t) + u32::from(b) * t + 127) / 255) as u8;
    [
        mix(RAMP_LOW[0], RAMP_HIGH[0]),
        mix(RAMP_LOW[1], RAMP_HIGH[1]),
        mix(RAMP_LOW[2], RAMP_HIGH[2]),
    ]
}

impl Raster {
    /// Evaluates `f` on every cell center at once.
    pub fn evaluate<F>(bounds: Bounds, rows: usize, cols: usize, f: F) -> Result<Self>
    where
        F: FnOnce(&[[f64; 2]]) -> Vec<f64>,
    {
        let centers = grid_centers(&bounds, rows, cols)?;
        let values = f(&centers);
        if values.len() != centers.len() {
            return Err(Error::LengthMismatch {
                left: values.len(),
                right: centers.len(),
            });
        }
        Ok(Raster {
            rows,
            cols,
            bounds,
            values,
        })
    }

    /// Point counts per cell; points outside the bounds are ignored.
    pub fn density(points: &[[f64; 2]], bounds: Bounds, rows: usize, cols: usize) -> Result<Self> {
        grid_centers(&bounds, rows, cols)?;
        let mut values = vec![0.0; rows * cols];
        let w = (bounds.max_lon - bounds.min_lon) / cols as f64;
        let h = (bounds.max_lat - bounds.min_lat) / rows as f64;
        for p in points {
            if p[0] < bounds.min_lon
                || p[0] > bounds.max_lon
                || p[1] < bounds.min_lat
                || p[1] > bounds.max_lat
            {
                continue;
            }
            let c = (((p[0] - bounds.min_lon) / w) as usize).min(cols - 1);
            let r = (((bounds.max_lat - p[1]) / h) as usize).min(rows - 1);
            values[r * cols + c] += 1.0;
        }
        Ok(Raster {
            rows,
            cols,
            bounds,
            values,
        })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    /// `(min, max)` over finite values; `None` if there are none.
    pub fn range(&self) -> Option<(f64, f64)> {
        self.values
            .iter()
            .filter(|v| v.is_finite())
            .fold(None, |acc, &v| match acc {
                None => Some((v, v)),
                Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
            })
    }

    /// Min-max normalized 8-bit levels. A constant raster maps to 0;
    /// non-finite cells map to 0.
    pub fn levels(&self) -> Vec<u8> {
        let (lo, hi) = self.range().unwrap_or((0.0, 0.0));
        let span = hi - lo;
        self.values
            .iter()
            .map(|&v| {
                if !v.is_finite() || span <= 0.0 {
                    0
                } else {
                    (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8
                }
            })
            .collect()
    }

    pub fn to_rgba(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.values.len() * 4);
        for l in self.levels() {
            let [r, g, b] = ramp(l);
            out.extend_from_slice(&[r, g, b, 255]);
        }
        out
    }

    /// One line per row, comma separated, shortest round-trip floats.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for row in self.values.chunks(self.cols) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        out.flush()?;
        Ok(())
    }

    /// Binary (P5) greyscale image.
    pub fn write_pgm<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.cols, self.rows)?;
        out.write_all(&self.levels())?;
        out.flush()?;
        Ok(())
    }

    pub fn write_svg<W: Write>(&self, mut out: W, cell_px: usize) -> Result<()> {
        let px = cell_px.max(1);
        writeln!(
            out,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" shape-rendering=\"crispEdges\">",
            self.cols * px,
            self.rows * px
        )?;
        for (i, l) in self.levels().into_iter().enumerate() {
            let [r, g, b] = ramp(l);
            writeln!(
                out,
                "<rect x=\"{}\" y=\"{}\" width=\"{px}\" height=\"{px}\" fill=\"#{r:02x}{g:02x}{b:02x}\"/>",
                (i % self.cols) * px,
                (i / self.cols) * px
            )?;
        }
        writeln!(out, "</svg>")?;
        out.flush()?;
        Ok(())
    }

    /// Sidecar recording what the 0 and 255 levels stand for.
    pub fn range_toml(&self) -> String {
        let (lo, hi) = self.range().unwrap_or((f64::NAN, f64::NAN));
        format!(
            "rows = {}\ncols = {}\nmin_lon = {:?}\nmin_lat = {:?}\nmax_lon = {:?}\nmax_lat = {:?}\nvalue_min = {:?}\nvalue_max = {:?}\n",
            self.rows,
            self.cols,
            self.bounds.min_lon,
            self.bounds.min_lat,
            self.bounds.max_lon,
            self.bounds.max_lat,
            lo,
            hi
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> Bounds {
        Bounds::new(0.0, 0.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn degenerate_bounds_rejected() {
        assert!(Bounds::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(Bounds::new(0.0, 1.0, 1.0, 0.5).is_err());
        assert!(Bounds::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
        assert!(Bounds::parse("0,0,1").is_err());
        assert_eq!(Bounds::parse("0, 0, 1, 1").unwrap(), unit());
    }

    #[test]
    fn centers_run_north_to_south() {
        let c = grid_centers(&unit(), 2, 2).unwrap();
        assert_eq!(
            c,
            vec![[0.25, 0.75], [0.75, 0.75], [0.25, 0.25], [0.75, 0.25]]
        );
        assert_eq!(grid_centers(&unit(), 1, 1).unwrap(), vec![[0.5, 0.5]]);
    }

    #[test]
    fn constant_raster_is_flat() {
        let r = Raster::evaluate(unit(), 3, 4, |xs| vec![7.0; xs.len()]).unwrap();
        assert_eq!(r.range(), Some((7.0, 7.0)));
        assert!(r.levels().iter().all(|&l| l == 0));
    }

    #[test]
    fn pgm_layout() {
        let r = Raster::evaluate(unit(), 1, 3, |xs| xs.iter().map(|p| p[0]).collect()).unwrap();
        let mut buf = Vec::new();
        r.write_pgm(&mut buf).unwrap();
        let header = b"P5\n3 1\n255\n";
        assert_eq!(&buf[..header.len()], header);
        assert_eq!(&buf[header.len()..], &[0, 128, 255]);
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp(0), RAMP_LOW);
        assert_eq!(ramp(255), RAMP_HIGH);
    }

    #[test]
    fn density_counts_points() {
        let pts = [[0.1, 0.9], [0.2, 0.8], [0.9, 0.1], [5.0, 5.0]];
        let r = Raster::density(&pts, unit(), 2, 2).unwrap();
        assert_eq!(r.values, vec![2.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn csv_matrix_shape() {
        let r =
            Raster::evaluate(unit(), 2, 3, |xs| (0..xs.len()).map(|i| i as f64).collect()).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "0,1,2\n3,4,5\n");
    }
}
