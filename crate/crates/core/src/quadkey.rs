//! Web-Mercator quadkey decoding (Bing tile system).

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Deepest zoom level accepted.
pub const MAX_ZOOM: usize = 31;

/// Tile column, row and zoom level addressed by a quadkey.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tile {
    pub x: u32,
    pub y: u32,
    pub zoom: u8,
}

impl Tile {
    pub fn parse(quadkey: &str) -> Result<Self> {
        if quadkey.is_empty() || quadkey.len() > MAX_ZOOM {
            return Err(Error::Quadkey(quadkey.to_string()));
        }
        let (mut x, mut y) = (0u32, 0u32);
        for ch in quadkey.chars() {
            let digit = match ch {
                '0' => 0,
                '1' => 1,
                '2' => 2,
                '3' => 3,
                _ => return Err(Error::Quadkey(quadkey.to_string())),
            };
            x = (x << 1) | (digit & 1);
            y = (y << 1) | (digit >> 1);
        }
        Ok(Tile {
            x,
            y,
            zoom: quadkey.len() as u8,
        })
    }

    pub fn from_lon_lat(lon: f64, lat: f64, zoom: u8) -> Self {
        let n = (1u64 << zoom) as f64;
        let lat = lat.clamp(-85.051_128_779_806_59, 85.051_128_779_806_59);
        let x_frac = (lon + 180.0) / 360.0;
        let sin_lat = lat.to_radians().sin();
        let y_frac = 0.5 - ((1.0 + sin_lat) / (1.0 - sin_lat)).ln() / (4.0 * PI);
        let max = (n - 1.0).max(0.0);
        Tile {
            x: (x_frac * n).floor().clamp(0.0, max) as u32,
            y: (y_frac * n).floor().clamp(0.0, max) as u32,
            zoom,
        }
    }

    pub fn quadkey(&self) -> String {
        (1..=self.zoom)
            .rev()
            .map(|i| {
                let mask = 1u32 << (i - 1);
                let mut digit = 0u8;
                if self.x & mask != 0 {
                    digit += 1;
                }
                if self.y & mask != 0 {
                    digit += 2;
                }
                char::from(b'0' + digit)
            })
            .collect()
    }

    /// `(lon_min, lat_min, lon_max, lat_max)` of the tile.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let n = (1u64 << self.zoom) as f64;
        let lon_min = self.x as f64 / n * 360.0 - 180.0;
        let lon_max = (self.x as f64 + 1.0) / n * 360.0 - 180.0;
        let lat_max = mercator_lat(self.y as f64 / n);
        let lat_min = mercator_lat((self.y as f64 + 1.0) / n);
        (lon_min, lat_min, lon_max, lat_max)
    }

    pub fn centroid(&self) -> (f64, f64) {
        let n = (1u64 << self.zoom) as f64;
        let lon = (self.x as f64 + 0.5) / n * 360.0 - 180.0;
        let lat = mercator_lat((self.y as f64 + 0.5) / n);
        (lon, lat)
    }
}

/// Latitude (degrees) at fractional Mercator row `y_frac` (0 = north edge).
fn mercator_lat(y_frac: f64) -> f64 {
    (PI * (1.0 - 2.0 * y_frac)).sinh().atan().to_degrees()
}

/// Center `(lon, lat)` of the tile addressed by `quadkey`.
pub fn tile_centroid(quadkey: &str) -> Result<(f64, f64)> {
    Tile::parse(quadkey).map(|t| t.centroid())
}
