//! Circular-orbit propagation, constellation layout, station geometry,
//! a mean-sun model and pass detection.
//!
//! Everything here works on a spherical Earth of radius [`EARTH_RADIUS_KM`]
//! in an Earth-centred inertial frame whose x axis points at the mean sun on
//! March 20 00:00 UTC of the epoch year.

use std::cmp::Ordering;
use std::ops::{Add, Mul, Sub};

use chrono::{Datelike, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EARTH_RADIUS_KM: f64 = 6371.0;
pub const MU_EARTH_KM3_S2: f64 = 398_600.441_8;
pub const J2: f64 = 1.082_626_68e-3;
pub const SECONDS_PER_DAY: f64 = 86_400.0;
pub const EARTH_ROTATION_DEG_PER_DAY: f64 = 360.9856;
pub const TROPICAL_YEAR_DAYS: f64 = 365.2422;
pub const OBLIQUITY_DEG: f64 = 23.439;
/// Solar elevation below which a station counts as dark.
pub const NIGHT_SUN_ELEVATION_DEG: f64 = -6.0;
pub const DEFAULT_MIN_ELEVATION_DEG: f64 = 10.0;
pub const DEFAULT_STEP_S: f64 = 10.0;

/// Altitude band inside which a sun-synchronous inclination is searched for.
pub const SSO_ALTITUDE_RANGE_KM: (f64, f64) = (200.0, 6000.0);

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3(pub [f64; 3]);

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3([x, y, z])
    }
    pub fn x(&self) -> f64 {
        self.0[0]
    }
    pub fn y(&self) -> f64 {
        self.0[1]
    }
    pub fn z(&self) -> f64 {
        self.0[2]
    }
    pub fn dot(&self, o: &Vec3) -> f64 {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }
    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
    pub fn unit(&self) -> Vec3 {
        *self * (1.0 / self.norm())
    }
    /// Rotation about +z by `angle_rad`.
    pub fn rotate_z(&self, angle_rad: f64) -> Vec3 {
        let (s, c) = angle_rad.sin_cos();
        Vec3::new(c * self.0[0] - s * self.0[1], s * self.0[0] + c * self.0[1], self.0[2])
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2])
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2])
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, k: f64) -> Vec3 {
        Vec3::new(self.0[0] * k, self.0[1] * k, self.0[2] * k)
    }
}

pub fn wrap_deg(x: f64) -> f64 {
    let r = x.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360.0 for tiny negative inputs
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

/// Calendar anchor for simulation time zero (00:00 UTC of `epoch_date`).
///
/// The sun moves uniformly along the ecliptic at one revolution per tropical
/// year and sits at ecliptic longitude 0 on March 20 00:00 UTC. Greenwich is
/// placed at local midnight at t = 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimClock {
    pub epoch_date: NaiveDate,
    sun_longitude0_deg: f64,
    earth_angle0_deg: f64,
}

impl SimClock {
    pub fn new(epoch_date: NaiveDate) -> Self {
        let equinox = NaiveDate::from_ymd_opt(epoch_date.year(), 3, 20).expect("March 20 exists in every year");
        let days = (epoch_date - equinox).num_days() as f64;
        let sun_longitude0_deg = wrap_deg(360.0 * days / TROPICAL_YEAR_DAYS);
        let mut clock = SimClock {
            epoch_date,
            sun_longitude0_deg,
            earth_angle0_deg: 0.0,
        };
        clock.earth_angle0_deg = wrap_deg(clock.sun_right_ascension_deg(0.0) + 180.0);
        clock
    }

    pub fn sun_longitude_deg(&self, t_s: f64) -> f64 {
        wrap_deg(self.sun_longitude0_deg + 360.0 * t_s / (TROPICAL_YEAR_DAYS * SECONDS_PER_DAY))
    }

    pub fn sun_right_ascension_deg(&self, t_s: f64) -> f64 {
        let d = self.sun_direction(t_s);
        wrap_deg(d.y().atan2(d.x()).to_degrees())
    }

    /// Unit vector towards the sun in the inertial frame.
    pub fn sun_direction(&self, t_s: f64) -> Vec3 {
        let lon = self.sun_longitude_deg(t_s).to_radians();
        let eps = OBLIQUITY_DEG.to_radians();
        let (sl, cl) = lon.sin_cos();
        Vec3::new(cl, eps.cos() * sl, eps.sin() * sl)
    }

    /// Greenwich rotation angle in radians.
    pub fn earth_rotation_rad(&self, t_s: f64) -> f64 {
        (self.earth_angle0_deg + EARTH_ROTATION_DEG_PER_DAY * t_s / SECONDS_PER_DAY).to_radians()
    }

    /// Calendar month (1..=12) at simulation time `t_s`.
    pub fn month(&self, t_s: f64) -> u32 {
        let start = self.epoch_date.and_hms_opt(0, 0, 0).expect("midnight is valid");
        let at = start + chrono::Duration::seconds(t_s.floor() as i64);
        at.month()
    }
}

impl Default for SimClock {
    fn default() -> Self {
        SimClock::new(NaiveDate::from_ymd_opt(2020, 3, 20).unwrap())
    }
}

/// Sun direction at simulation time `t_s` for the given clock.
pub fn sun_direction(clock: &SimClock, t_s: f64) -> Vec3 {
    clock.sun_direction(t_s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitState {
    pub altitude_km: f64,
    pub inclination_deg: f64,
    pub raan_deg: f64,
    /// Angle from the ascending node at `epoch_s`.
    pub arg_latitude_deg: f64,
    pub epoch_s: f64,
    /// Secular nodal drift; zero for a pure two-body orbit.
    #[serde(default)]
    pub raan_rate_deg_s: f64,
    #[serde(default)]
    pub plane: usize,
}

impl OrbitState {
    pub fn new(altitude_km: f64, inclination_deg: f64, raan_deg: f64, arg_latitude_deg: f64) -> Self {
        OrbitState {
            altitude_km,
            inclination_deg,
            raan_deg: wrap_deg(raan_deg),
            arg_latitude_deg: wrap_deg(arg_latitude_deg),
            epoch_s: 0.0,
            raan_rate_deg_s: 0.0,
            plane: 0,
        }
    }

    pub fn radius_km(&self) -> f64 {
        EARTH_RADIUS_KM + self.altitude_km
    }

    pub fn mean_motion_rad_s(&self) -> f64 {
        (MU_EARTH_KM3_S2 / self.radius_km().powi(3)).sqrt()
    }

    pub fn period_s(&self) -> f64 {
        std::f64::consts::TAU / self.mean_motion_rad_s()
    }

    pub fn with_j2_precession(mut self) -> Self {
        self.raan_rate_deg_s = j2_raan_rate_deg_s(self.altitude_km, self.inclination_deg);
        self
    }

    pub fn arg_latitude_at(&self, t_s: f64) -> f64 {
        self.arg_latitude_deg.to_radians() + self.mean_motion_rad_s() * (t_s - self.epoch_s)
    }

    pub fn raan_at(&self, t_s: f64) -> f64 {
        (self.raan_deg + self.raan_rate_deg_s * (t_s - self.epoch_s)).to_radians()
    }
}

/// Inertial position (km) of a circular orbit at time `t_s`.
pub fn propagate(orbit: &OrbitState, t_s: f64) -> Vec3 {
    let r = orbit.radius_km();
    let (su, cu) = orbit.arg_latitude_at(t_s).sin_cos();
    let (sn, cn) = orbit.raan_at(t_s).sin_cos();
    let (si, ci) = orbit.inclination_deg.to_radians().sin_cos();
    Vec3::new(r * (cn * cu - sn * su * ci), r * (sn * cu + cn * su * ci), r * (su * si))
}

/// Nodal precession rate from J2 for a circular orbit.
pub fn j2_raan_rate_deg_s(altitude_km: f64, inclination_deg: f64) -> f64 {
    let a = EARTH_RADIUS_KM + altitude_km;
    let n = (MU_EARTH_KM3_S2 / a.powi(3)).sqrt();
    let rate = -1.5 * n * J2 * (EARTH_RADIUS_KM / a).powi(2) * inclination_deg.to_radians().cos();
    rate.to_degrees()
}

/// Precession rate that keeps the orbit plane fixed relative to the mean sun.
pub fn sun_synchronous_rate_deg_s() -> f64 {
    360.0 / (TROPICAL_YEAR_DAYS * SECONDS_PER_DAY)
}

/// Inclination that makes a circular orbit at `altitude_km` sun-synchronous.
pub fn sun_synchronous_inclination_deg(altitude_km: f64) -> Result<f64> {
    let (lo, hi) = SSO_ALTITUDE_RANGE_KM;
    if !(lo..=hi).contains(&altitude_km) {
        return Err(Error::NoSunSynchronousSolution { altitude_km });
    }
    let a = EARTH_RADIUS_KM + altitude_km;
    let n = (MU_EARTH_KM3_S2 / a.powi(3)).sqrt();
    let target = sun_synchronous_rate_deg_s().to_radians();
    let cos_i = -target / (1.5 * n * J2 * (EARTH_RADIUS_KM / a).powi(2));
    if !(-1.0..=1.0).contains(&cos_i) {
        return Err(Error::NoSunSynchronousSolution { altitude_km });
    }
    Ok(cos_i.acos().to_degrees())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstellationSpec {
    pub n_planes: usize,
    pub sats_per_plane: usize,
    pub altitude_km: f64,
    /// Ignored when `sun_synchronous` is set.
    #[serde(default)]
    pub inclination_deg: f64,
    #[serde(default)]
    pub sun_synchronous: bool,
    #[serde(default)]
    pub raan0_deg: f64,
    /// Local time of the ascending node; only used for sun-synchronous layouts.
    #[serde(default)]
    pub ltan_hours: f64,
    #[serde(default = "default_true")]
    pub j2_precession: bool,
}

fn default_true() -> bool {
    true
}

impl ConstellationSpec {
    pub fn total_satellites(&self) -> usize {
        self.n_planes * self.sats_per_plane
    }

    /// Parses the table notation used for constellation columns, e.g.
    /// `"60 deg 3p/2s"`, `"SSO 1p/6s"`, `"30deg 2p/3s"`.
    pub fn from_notation(notation: &str, altitude_km: f64) -> Result<Self> {
        let bad = || Error::InvalidNotation(notation.to_string());
        let compact: String = notation.split_whitespace().collect::<String>().to_ascii_lowercase();
        let (sun_synchronous, inclination_deg, layout) = if let Some(rest) = compact.strip_prefix("sso") {
            (true, 0.0, rest)
        } else {
            let (inc, rest) = compact.split_once("deg").ok_or_else(bad)?;
            (false, inc.parse::<f64>().map_err(|_| bad())?, rest)
        };
        let (planes, sats) = layout.split_once('/').ok_or_else(bad)?;
        let n_planes: usize = planes.strip_suffix('p').ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let sats_per_plane: usize = sats.strip_suffix('s').ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let spec = ConstellationSpec {
            n_planes,
            sats_per_plane,
            altitude_km,
            inclination_deg,
            sun_synchronous,
            raan0_deg: 0.0,
            ltan_hours: 0.0,
            j2_precession: true,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_planes == 0 || self.sats_per_plane == 0 {
            return Err(Error::invalid("constellation", "n_planes and sats_per_plane must be >= 1"));
        }
        if !(self.altitude_km > 0.0) {
            return Err(Error::invalid("constellation.altitude_km", "must be > 0"));
        }
        if !self.sun_synchronous && !(0.0..=180.0).contains(&self.inclination_deg) {
            return Err(Error::invalid("constellation.inclination_deg", "must lie in [0, 180]"));
        }
        if self.sun_synchronous {
            sun_synchronous_inclination_deg(self.altitude_km)?;
        }
        Ok(())
    }
}

/// Lays out `n_planes x sats_per_plane` circular orbits. Satellite ids follow
/// the returned order (plane-major).
pub fn generate_constellation(spec: &ConstellationSpec, clock: &SimClock) -> Result<Vec<OrbitState>> {
    spec.validate()?;
    let (inclination, raan0) = if spec.sun_synchronous {
        let inc = sun_synchronous_inclination_deg(spec.altitude_km)?;
        let raan = clock.sun_right_ascension_deg(0.0) + (spec.ltan_hours - 12.0) * 15.0;
        (inc, raan)
    } else {
        (spec.inclination_deg, spec.raan0_deg)
    };
    let mut out = Vec::with_capacity(spec.total_satellites());
    for p in 0..spec.n_planes {
        let raan = raan0 + p as f64 * 360.0 / spec.n_planes as f64;
        for s in 0..spec.sats_per_plane {
            let u = s as f64 * 360.0 / spec.sats_per_plane as f64;
            let mut orbit = OrbitState::new(spec.altitude_km, inclination, raan, u);
            orbit.plane = p;
            if spec.j2_precession {
                orbit = orbit.with_j2_precession();
            }
            out.push(orbit);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundStation {
    pub name: String,
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub min_elevation_deg: f64,
}

impl GroundStation {
    pub fn new(name: impl Into<String>, lat_deg: f64, lon_deg: f64) -> Self {
        GroundStation {
            name: name.into(),
            lat_deg,
            lon_deg,
            min_elevation_deg: DEFAULT_MIN_ELEVATION_DEG,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.lat_deg) || !(-180.0..=180.0).contains(&self.lon_deg) {
            return Err(Error::invalid(
                format!("station {}", self.name),
                "latitude must be in [-90, 90] and longitude in [-180, 180]",
            ));
        }
        if !(self.min_elevation_deg > 0.0 && self.min_elevation_deg < 90.0) {
            return Err(Error::invalid(
                format!("station {}", self.name),
                "min_elevation_deg must lie in (0, 90)",
            ));
        }
        Ok(())
    }

    /// Earth-fixed unit vector of the local vertical.
    pub fn up_ecef(&self) -> Vec3 {
        let (sl, cl) = self.lat_deg.to_radians().sin_cos();
        let (so, co) = self.lon_deg.to_radians().sin_cos();
        Vec3::new(cl * co, cl * so, sl)
    }

    pub fn up_eci(&self, clock: &SimClock, t_s: f64) -> Vec3 {
        self.up_ecef().rotate_z(clock.earth_rotation_rad(t_s))
    }
}

/// Reads a station list with header `name,lat_deg,lon_deg,min_elevation_deg`.
pub fn read_stations<R: std::io::Read>(reader: R) -> Result<Vec<GroundStation>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["name", "lat_deg", "lon_deg", "min_elevation_deg"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Format(format!(
            "station file header must be `{}`, found `{}`",
            expected.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let st: GroundStation = row?;
        st.validate()?;
        out.push(st);
    }
    Ok(out)
}

pub fn write_stations<W: std::io::Write>(writer: W, stations: &[GroundStation]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for st in stations {
        w.serialize(st)?;
    }
    w.flush()?;
    Ok(())
}

/// Elevation (deg) and slant range (km) of an Earth-fixed satellite position.
fn look_angles_ecef(up: &Vec3, sat_ecef: &Vec3) -> (f64, f64) {
    let d = *sat_ecef - *up * EARTH_RADIUS_KM;
    let range = d.norm();
    let sin_el = (d.dot(up) / range).clamp(-1.0, 1.0);
    (sin_el.asin().to_degrees(), range)
}

/// Elevation (deg) and slant range (km) of an inertial satellite position.
pub fn station_topocentric(station: &GroundStation, sat_pos: &Vec3, clock: &SimClock, t_s: f64) -> (f64, f64) {
    let sat_ecef = sat_pos.rotate_z(-clock.earth_rotation_rad(t_s));
    look_angles_ecef(&station.up_ecef(), &sat_ecef)
}

/// Elevation seen from the ground for a satellite at `altitude_km` and slant
/// range `range_km` (spherical Earth).
pub fn elevation_for_range_deg(altitude_km: f64, range_km: f64) -> f64 {
    let r = EARTH_RADIUS_KM + altitude_km;
    let s = (r * r - EARTH_RADIUS_KM * EARTH_RADIUS_KM - range_km * range_km) / (2.0 * EARTH_RADIUS_KM * range_km);
    s.clamp(-1.0, 1.0).asin().to_degrees()
}

/// Cylindrical shadow test.
pub fn is_sat_eclipsed(sat_pos: &Vec3, sun_dir: &Vec3) -> bool {
    let along = sat_pos.dot(sun_dir);
    if along >= 0.0 {
        return false;
    }
    let perp = *sat_pos - *sun_dir * along;
    perp.norm() < EARTH_RADIUS_KM
}

pub fn solar_elevation_deg(station: &GroundStation, sun_dir: &Vec3, clock: &SimClock, t_s: f64) -> f64 {
    station.up_eci(clock, t_s).dot(sun_dir).clamp(-1.0, 1.0).asin().to_degrees()
}

pub fn is_night_sun_elevation(sun_elevation_deg: f64) -> bool {
    sun_elevation_deg < NIGHT_SUN_ELEVATION_DEG
}

pub fn is_station_night(station: &GroundStation, sun_dir: &Vec3, clock: &SimClock, t_s: f64) -> bool {
    is_night_sun_elevation(solar_elevation_deg(station, sun_dir, clock, t_s))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassSample {
    pub time_s: f64,
    pub elevation_deg: f64,
    pub range_km: f64,
    pub sat_eclipsed: bool,
    pub station_night: bool,
}

impl PassSample {
    pub fn is_dark(&self) -> bool {
        self.sat_eclipsed && self.station_night
    }
}

/// A contiguous visibility window of one satellite over one station. Each
/// sample stands for the interval `[time_s, time_s + step_s)`, so `t_end_s`
/// is one step past the last sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PassEvent {
    pub sat_id: usize,
    pub station_id: usize,
    pub t_start_s: f64,
    pub t_end_s: f64,
    pub step_s: f64,
    /// Identity of the geometric pass this (possibly truncated) event came from.
    pub pass_id: u64,
    pub samples: Vec<PassSample>,
}

impl PassEvent {
    /// Builds an event from samples; returns `None` when `samples` is empty.
    pub fn from_samples(sat_id: usize, station_id: usize, step_s: f64, pass_id: u64, samples: Vec<PassSample>) -> Option<Self> {
        let first = samples.first()?.time_s;
        let last = samples.last()?.time_s;
        Some(PassEvent {
            sat_id,
            station_id,
            t_start_s: first,
            t_end_s: last + step_s,
            step_s,
            pass_id,
            samples,
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 * self.step_s
    }

    pub fn max_elevation_deg(&self) -> f64 {
        self.samples.iter().map(|s| s.elevation_deg).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Stable identity for a geometric pass.
pub fn pass_identity(sat_id: usize, station_id: usize, t_start_s: f64) -> u64 {
    let mut h = crate::weather::splitmix64(sat_id as u64 ^ 0x5A17_0000_0000_0000);
    h = crate::weather::splitmix64(h ^ station_id as u64);
    crate::weather::splitmix64(h ^ t_start_s.to_bits())
}

pub fn pass_order(a: &PassEvent, b: &PassEvent) -> Ordering {
    a.t_start_s
        .total_cmp(&b.t_start_s)
        .then(a.sat_id.cmp(&b.sat_id))
        .then(a.station_id.cmp(&b.station_id))
}

fn passes_for_satellite(
    sat_id: usize,
    orbit: &OrbitState,
    stations: &[GroundStation],
    clock: &SimClock,
    t0_s: f64,
    t1_s: f64,
    step_s: f64,
) -> Vec<PassEvent> {
    let ups: Vec<Vec3> = stations.iter().map(GroundStation::up_ecef).collect();
    let mut open: Vec<Vec<PassSample>> = vec![Vec::new(); stations.len()];
    let mut out = Vec::new();
    let n_steps = ((t1_s - t0_s) / step_s + 1e-9).floor() as u64;
    let close = |sid: usize, samples: Vec<PassSample>, out: &mut Vec<PassEvent>| {
        let start = samples[0].time_s;
        let id = pass_identity(sat_id, sid, start);
        out.extend(PassEvent::from_samples(sat_id, sid, step_s, id, samples));
    };
    for k in 0..=n_steps {
        let t = t0_s + k as f64 * step_s;
        let pos = propagate(orbit, t);
        let sat_ecef = pos.rotate_z(-clock.earth_rotation_rad(t));
        let mut sun: Option<(Vec3, bool)> = None;
        for (sid, st) in stations.iter().enumerate() {
            let (el, range) = look_angles_ecef(&ups[sid], &sat_ecef);
            if el >= st.min_elevation_deg {
                let (sun_dir, eclipsed) = *sun.get_or_insert_with(|| {
                    let d = clock.sun_direction(t);
                    (d, is_sat_eclipsed(&pos, &d))
                });
                open[sid].push(PassSample {
                    time_s: t,
                    elevation_deg: el,
                    range_km: range,
                    sat_eclipsed: eclipsed,
                    station_night: is_station_night(st, &sun_dir, clock, t),
                });
            } else if !open[sid].is_empty() {
                close(sid, std::mem::take(&mut open[sid]), &mut out);
            }
        }
    }
    for (sid, samples) in open.into_iter().enumerate() {
        if !samples.is_empty() {
            close(sid, samples, &mut out);
        }
    }
    out
}

/// Samples every `step_s` over `[t0_s, t1_s]` and returns the runs of samples
/// at or above each station's mask, sorted by (start, satellite, station).
pub fn find_passes(
    orbits: &[OrbitState],
    stations: &[GroundStation],
    clock: &SimClock,
    t0_s: f64,
    t1_s: f64,
    step_s: f64,
) -> Result<Vec<PassEvent>> {
    if !(step_s > 0.0) || !(t1_s > t0_s) {
        return Err(Error::invalid("find_passes", "requires step_s > 0 and t1 > t0"));
    }
    let mut passes: Vec<PassEvent> = orbits
        .par_iter()
        .enumerate()
        .flat_map_iter(|(sat_id, orbit)| passes_for_satellite(sat_id, orbit, stations, clock, t0_s, t1_s, step_s))
        .collect();
    passes.sort_by(pass_order);
    Ok(passes)
}
