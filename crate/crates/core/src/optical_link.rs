//! Downlink and crosslink channel transmittance.
//!
//! Losses are kept in dB and composed into a single transmittance `eta`
//! that already includes detector efficiency.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kv::{write_kv, KvDoc};

const DB_PER_NEPER_POWER: f64 = 10.0 / std::f64::consts::LN_10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkParams {
    pub wavelength_nm: f64,
    pub tx_aperture_m: f64,
    pub rx_aperture_m: f64,
    pub beam_quality_m2: f64,
    /// Constant pointing bias.
    pub pointing_error_urad: f64,
    pub zenith_atm_loss_db: f64,
    pub optics_rx_loss_db: f64,
    pub detector_efficiency: f64,
}

impl LinkParams {
    const KEYS: [&'static str; 8] = [
        "wavelength_nm",
        "tx_aperture_m",
        "rx_aperture_m",
        "beam_quality_m2",
        "pointing_error_urad",
        "zenith_atm_loss_db",
        "optics_rx_loss_db",
        "detector_efficiency",
    ];

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("wavelength_nm", self.wavelength_nm),
            ("tx_aperture_m", self.tx_aperture_m),
            ("rx_aperture_m", self.rx_aperture_m),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::invalid(format!("link.{name}"), "must be > 0"));
            }
        }
        let non_negative = [
            ("pointing_error_urad", self.pointing_error_urad),
            ("zenith_atm_loss_db", self.zenith_atm_loss_db),
            ("optics_rx_loss_db", self.optics_rx_loss_db),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("link.{name}"), "must be >= 0"));
            }
        }
        if !(self.beam_quality_m2 >= 1.0) {
            return Err(Error::invalid("link.beam_quality_m2", "must be >= 1"));
        }
        if !(self.detector_efficiency > 0.0 && self.detector_efficiency <= 1.0) {
            return Err(Error::invalid("link.detector_efficiency", "must lie in (0, 1]"));
        }
        Ok(())
    }

    fn values(&self) -> [f64; 8] {
        [
            self.wavelength_nm,
            self.tx_aperture_m,
            self.rx_aperture_m,
            self.beam_quality_m2,
            self.pointing_error_urad,
            self.zenith_atm_loss_db,
            self.optics_rx_loss_db,
            self.detector_efficiency,
        ]
    }

    /// Parses the flat `key = value` link file format.
    pub fn from_kv_str(text: &str, origin: &str) -> Result<Self> {
        let mut doc = KvDoc::parse(text, origin)?;
        let mut v = [0.0; 8];
        for (slot, key) in v.iter_mut().zip(Self::KEYS) {
            *slot = doc.take_f64(key)?;
        }
        doc.check_unknown()?;
        let p = LinkParams {
            wavelength_nm: v[0],
            tx_aperture_m: v[1],
            rx_aperture_m: v[2],
            beam_quality_m2: v[3],
            pointing_error_urad: v[4],
            zenith_atm_loss_db: v[5],
            optics_rx_loss_db: v[6],
            detector_efficiency: v[7],
        };
        p.validate().map_err(|e| doc.locate(e))?;
        Ok(p)
    }

    pub fn to_kv_string(&self) -> String {
        let pairs: Vec<(&str, f64)> = Self::KEYS.iter().copied().zip(self.values()).collect();
        write_kv(&pairs)
    }

    /// Far-field half-angle divergence of the transmitted beam (rad).
    pub fn divergence_rad(&self) -> f64 {
        self.beam_quality_m2 * 2.0 * self.wavelength_nm * 1e-9 / (std::f64::consts::PI * self.tx_aperture_m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    pub range_km: f64,
    pub elevation_deg: f64,
    pub loss_diffraction_db: f64,
    pub loss_atm_db: f64,
    pub loss_pointing_db: f64,
    pub loss_rx_db: f64,
    pub transmittance_eta: f64,
}

impl LinkBudget {
    pub fn total_loss_db(&self) -> f64 {
        self.loss_diffraction_db + self.loss_atm_db + self.loss_pointing_db + self.loss_rx_db
    }
}

/// Geometric capture loss of the receive aperture.
pub fn diffraction_loss_db(p: &LinkParams, range_km: f64) -> f64 {
    let spot = p.tx_aperture_m + range_km * 1e3 * p.divergence_rad();
    let captured = (p.rx_aperture_m / spot).powi(2).min(1.0);
    -10.0 * captured.log10()
}

/// Flat-slab atmosphere: the zenith loss scales with the cosecant of elevation.
pub fn atmospheric_loss_db(p: &LinkParams, elevation_deg: f64) -> Result<f64> {
    if !(elevation_deg > 0.0) {
        return Err(Error::BelowHorizon(elevation_deg));
    }
    let el = elevation_deg.min(90.0).to_radians();
    Ok(p.zenith_atm_loss_db / el.sin())
}

pub fn pointing_loss_db(p: &LinkParams) -> f64 {
    let ratio = p.pointing_error_urad * 1e-6 / p.divergence_rad();
    DB_PER_NEPER_POWER * 2.0 * ratio * ratio
}

pub fn channel_transmittance(p: &LinkParams, range_km: f64, elevation_deg: f64) -> Result<LinkBudget> {
    let loss_atm_db = atmospheric_loss_db(p, elevation_deg)?;
    Ok(compose(p, range_km, elevation_deg, loss_atm_db))
}

/// Space-to-space channel: diffraction, pointing and receiver losses only.
pub fn crosslink_transmittance(p: &LinkParams, range_km: f64) -> LinkBudget {
    compose(p, range_km, 90.0, 0.0)
}

fn compose(p: &LinkParams, range_km: f64, elevation_deg: f64, loss_atm_db: f64) -> LinkBudget {
    let loss_diffraction_db = diffraction_loss_db(p, range_km);
    let loss_pointing_db = pointing_loss_db(p);
    let loss_rx_db = p.optics_rx_loss_db;
    let total = loss_diffraction_db + loss_atm_db + loss_pointing_db + loss_rx_db;
    LinkBudget {
        range_km,
        elevation_deg,
        loss_diffraction_db,
        loss_atm_db,
        loss_pointing_db,
        loss_rx_db,
        transmittance_eta: 10f64.powf(-total / 10.0) * p.detector_efficiency,
    }
}
