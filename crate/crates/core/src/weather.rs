//! Gridded cloud probabilities and per-pass clear/blocked draws.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GroundStation;

pub const DEFAULT_RESOLUTION_DEG: f64 = 0.1;
pub const CSV_HEADER: &str = "lat0,lon0,res_deg,n_lat,n_lon,n_layers";

/// Zonal-mean cloud probability by absolute latitude used by the banded
/// generator: cloudy equatorial belt, clearer subtropics, cloudy storm tracks.
pub const DEFAULT_BANDS: [(f64, f64); 9] = [
    (0.0, 0.65),
    (10.0, 0.60),
    (20.0, 0.45),
    (30.0, 0.40),
    (40.0, 0.55),
    (50.0, 0.70),
    (60.0, 0.75),
    (70.0, 0.70),
    (90.0, 0.60),
];

/// Cell-centred probability grid with one annual layer or twelve monthly ones.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudGrid {
    pub lat0_deg: f64,
    pub lon0_deg: f64,
    pub res_deg: f64,
    pub n_lat: usize,
    pub n_lon: usize,
    pub n_layers: usize,
    /// Layer-major, then row-major (latitude rows of `n_lon` values).
    pub p_cloud: Vec<f64>,
}

impl CloudGrid {
    pub fn new(lat0_deg: f64, lon0_deg: f64, res_deg: f64, n_lat: usize, n_lon: usize, n_layers: usize, p_cloud: Vec<f64>) -> Result<Self> {
        let g = CloudGrid {
            lat0_deg,
            lon0_deg,
            res_deg,
            n_lat,
            n_lon,
            n_layers,
            p_cloud,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.res_deg > 0.0) {
            return Err(Error::invalid("cloud grid res_deg", "must be > 0"));
        }
        if self.n_lat == 0 || self.n_lon == 0 || !(self.n_layers == 1 || self.n_layers == 12) {
            return Err(Error::invalid("cloud grid", "needs n_lat, n_lon >= 1 and 1 or 12 layers"));
        }
        if self.p_cloud.len() != self.n_layers * self.n_lat * self.n_lon {
            return Err(Error::invalid("cloud grid", "value count does not match dimensions"));
        }
        if let Some(bad) = self.p_cloud.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::invalid("cloud grid", format!("probability {bad} outside [0, 1]")));
        }
        Ok(())
    }

    fn global_dims(res_deg: f64) -> Result<(usize, usize)> {
        if !(res_deg > 0.0) || res_deg > 180.0 {
            return Err(Error::invalid("cloud grid res_deg", "must lie in (0, 180]"));
        }
        Ok(((180.0 / res_deg).round() as usize, (360.0 / res_deg).round() as usize))
    }

    pub fn uniform(p: f64, res_deg: f64) -> Result<Self> {
        let (n_lat, n_lon) = Self::global_dims(res_deg)?;
        let res_lat = 180.0 / n_lat as f64;
        let res_lon = 360.0 / n_lon as f64;
        debug_assert!((res_lat - res_lon).abs() < 1e-9);
        CloudGrid::new(
            -90.0 + res_lat / 2.0,
            -180.0 + res_lon / 2.0,
            res_lat,
            n_lat,
            n_lon,
            1,
            vec![p; n_lat * n_lon],
        )
    }

    /// Global annual grid whose probability depends only on |latitude|,
    /// interpolated linearly between `bands` (sorted by latitude).
    pub fn banded(bands: &[(f64, f64)], res_deg: f64) -> Result<Self> {
        if bands.is_empty() || bands.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::invalid("cloud bands", "need at least one band with increasing latitudes"));
        }
        let (n_lat, n_lon) = Self::global_dims(res_deg)?;
        let res = 180.0 / n_lat as f64;
        let lat0 = -90.0 + res / 2.0;
        let mut values = Vec::with_capacity(n_lat * n_lon);
        for i in 0..n_lat {
            let p = band_probability(bands, (lat0 + i as f64 * res).abs());
            values.extend(std::iter::repeat_n(p, n_lon));
        }
        CloudGrid::new(lat0, -180.0 + res / 2.0, res, n_lat, n_lon, 1, values)
    }

    fn wraps_longitude(&self) -> bool {
        self.n_lon as f64 * self.res_deg >= 360.0 - 1e-9
    }

    fn lat_extent(&self) -> (f64, f64) {
        let half = self.res_deg / 2.0;
        (
            self.lat0_deg - half,
            self.lat0_deg + (self.n_lat as f64 - 1.0) * self.res_deg + half,
        )
    }

    fn lon_extent(&self) -> (f64, f64) {
        let half = self.res_deg / 2.0;
        (
            self.lon0_deg - half,
            self.lon0_deg + (self.n_lon as f64 - 1.0) * self.res_deg + half,
        )
    }

    fn outside(&self, lat: f64, lon: f64) -> Error {
        let (lat_min, lat_max) = self.lat_extent();
        let (lon_min, lon_max) = self.lon_extent();
        Error::OutsideCloudGrid {
            lat_deg: lat,
            lon_deg: lon,
            lat_min,
            lat_max,
            lon_min,
            lon_max,
        }
    }

    /// Fractional (row, column) coordinates of a point, in cell units.
    fn cell_coords(&self, lat: f64, lon: f64) -> Result<(f64, f64)> {
        let eps = 1e-9;
        let (lat_min, lat_max) = self.lat_extent();
        if !(lat >= lat_min - eps && lat <= lat_max + eps) {
            return Err(self.outside(lat, lon));
        }
        let row = (lat - self.lat0_deg) / self.res_deg;
        let col = if self.wraps_longitude() {
            let span = self.n_lon as f64 * self.res_deg;
            (lon - self.lon0_deg).rem_euclid(span) / self.res_deg
        } else {
            let (lon_min, lon_max) = self.lon_extent();
            if !(lon >= lon_min - eps && lon <= lon_max + eps) {
                return Err(self.outside(lat, lon));
            }
            (lon - self.lon0_deg) / self.res_deg
        };
        Ok((row, col))
    }

    fn layer_for(&self, month: u32) -> usize {
        if self.n_layers == 12 {
            (month.clamp(1, 12) - 1) as usize
        } else {
            0
        }
    }

    fn at(&self, layer: usize, row: usize, col: usize) -> f64 {
        self.p_cloud[(layer * self.n_lat + row) * self.n_lon + col]
    }

    /// Nearest-cell probability for calendar `month` (1..=12).
    pub fn cloud_prob(&self, lat_deg: f64, lon_deg: f64, month: u32) -> Result<f64> {
        let (row, col) = self.cell_coords(lat_deg, lon_deg)?;
        let r = (row.round().max(0.0) as usize).min(self.n_lat - 1);
        let mut c = col.round().max(0.0) as usize;
        c = if self.wraps_longitude() {
            c % self.n_lon
        } else {
            c.min(self.n_lon - 1)
        };
        Ok(self.at(self.layer_for(month), r, c))
    }

    /// Bilinear interpolation between cell centres (edge cells clamp).
    pub fn cloud_prob_bilinear(&self, lat_deg: f64, lon_deg: f64, month: u32) -> Result<f64> {
        let (row, col) = self.cell_coords(lat_deg, lon_deg)?;
        let layer = self.layer_for(month);
        let row = row.clamp(0.0, (self.n_lat - 1) as f64);
        let r0 = row.floor() as usize;
        let r1 = (r0 + 1).min(self.n_lat - 1);
        let fr = row - r0 as f64;
        let (c0, c1, fc) = if self.wraps_longitude() {
            let c0 = col.floor() as usize % self.n_lon;
            (c0, (c0 + 1) % self.n_lon, col - col.floor())
        } else {
            let col = col.clamp(0.0, (self.n_lon - 1) as f64);
            let c0 = col.floor() as usize;
            (c0, (c0 + 1).min(self.n_lon - 1), col - c0 as f64)
        };
        let top = self.at(layer, r0, c0) * (1.0 - fc) + self.at(layer, r0, c1) * fc;
        let bottom = self.at(layer, r1, c0) * (1.0 - fc) + self.at(layer, r1, c1) * fc;
        Ok(top * (1.0 - fr) + bottom * fr)
    }

    pub fn station_cloud_prob(&self, station: &GroundStation, month: u32) -> Result<f64> {
        self.cloud_prob(station.lat_deg, station.lon_deg, month)
            .map_err(|e| Error::Station {
                station: station.name.clone(),
                source: Box::new(e),
            })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = std::io::BufWriter::new(writer);
        writeln!(w, "{CSV_HEADER}")?;
        writeln!(
            w,
            "{},{},{},{},{},{}",
            self.lat0_deg, self.lon0_deg, self.res_deg, self.n_lat, self.n_lon, self.n_layers
        )?;
        for row in self.p_cloud.chunks(self.n_lon) {
            let mut first = true;
            for v in row {
                if !first {
                    w.write_all(b",")?;
                }
                write!(w, "{v}")?;
                first = false;
            }
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let mut next = |what: &str| -> Result<String> {
            lines
                .next()
                .transpose()?
                .ok_or_else(|| Error::Format(format!("cloud grid: missing {what}")))
        };
        let header = next("header")?;
        if header.trim() != CSV_HEADER {
            return Err(Error::Format(format!(
                "cloud grid: header must be `{CSV_HEADER}`, found `{}`",
                header.trim()
            )));
        }
        let meta = next("dimensions line")?;
        let f: Vec<&str> = meta.trim().split(',').collect();
        if f.len() != 6 {
            return Err(Error::Format("cloud grid: dimensions line needs 6 fields".into()));
        }
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("cloud grid: bad number `{s}`")))
        };
        let int = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Format(format!("cloud grid: bad integer `{s}`")))
        };
        let (lat0, lon0, res) = (num(f[0])?, num(f[1])?, num(f[2])?);
        let (n_lat, n_lon, n_layers) = (int(f[3])?, int(f[4])?, int(f[5])?);
        let mut values = Vec::with_capacity(n_lat * n_lon * n_layers);
        for r in 0..n_lat * n_layers {
            let line = next(&format!("row {r}"))?;
            let before = values.len();
            for v in line.trim().split(',') {
                values.push(num(v)?);
            }
            if values.len() - before != n_lon {
                return Err(Error::Format(format!(
                    "cloud grid: row {r} has {} values, expected {n_lon}",
                    values.len() - before
                )));
            }
        }
        CloudGrid::new(lat0, lon0, res, n_lat, n_lon, n_layers, values)
    }
}

fn band_probability(bands: &[(f64, f64)], abs_lat: f64) -> f64 {
    if abs_lat <= bands[0].0 {
        return bands[0].1;
    }
    for w in bands.windows(2) {
        let ((l0, p0), (l1, p1)) = (w[0], w[1]);
        if abs_lat <= l1 {
            return p0 + (p1 - p0) * (abs_lat - l0) / (l1 - l0);
        }
    }
    bands[bands.len() - 1].1
}

/// How a cloud probability turns into delivered key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CloudMode {
    /// One all-or-nothing draw per pass.
    #[default]
    Bernoulli,
    /// Key scaled by the clear-sky probability.
    Expected,
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based uniform in [0, 1) keyed by `(seed, stream_id)`.
pub fn uniform_draw(seed: u64, stream_id: u64) -> f64 {
    let bits = splitmix64(splitmix64(seed) ^ stream_id);
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Clear with probability `1 - p_cloud`.
pub fn draw_is_clear(p_cloud: f64, seed: u64, stream_id: u64) -> bool {
    uniform_draw(seed, stream_id) >= p_cloud
}

pub fn pass_is_clear(grid: &CloudGrid, station: &GroundStation, month: u32, pass_id: u64, seed: u64) -> Result<bool> {
    Ok(draw_is_clear(grid.station_cloud_prob(station, month)?, seed, pass_id))
}
