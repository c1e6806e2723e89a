//! Asymptotic weak + vacuum decoy-state BB84.
//!
//! Gains and error rates follow the usual Poissonian-source channel model
//! `Q = Y0 + 1 - exp(-eta mu)`, single-photon yield and error are bounded from
//! the signal and weak-decoy statistics, and the secret fraction is the
//! GLLP-style `Q1 (1 - H2(e1)) - f Q H2(E)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PassEvent;
use crate::kv::{write_kv, KvDoc};
use crate::optical_link::{channel_transmittance, LinkParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoyParams {
    /// Signal mean photon number.
    pub mu: f64,
    /// Weak decoy mean photon number.
    pub nu: f64,
    pub pulse_rate_hz: f64,
    /// Basis-reconciliation factor.
    pub q_sift: f64,
    /// Background/dark yield per pulse.
    pub y0: f64,
    pub e_detector: f64,
    /// Error-correction inefficiency.
    pub f_ec: f64,
    pub p_signal: f64,
    pub p_decoy: f64,
    pub p_vacuum: f64,
}

impl DecoyParams {
    const KEYS: [&'static str; 10] = [
        "mu",
        "nu",
        "pulse_rate_hz",
        "q_sift",
        "y0",
        "e_detector",
        "f_ec",
        "p_signal",
        "p_decoy",
        "p_vacuum",
    ];

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu < self.mu) {
            return Err(Error::invalid("decoy.nu", "must satisfy 0 < nu < mu"));
        }
        if !(self.pulse_rate_hz > 0.0) {
            return Err(Error::invalid("decoy.pulse_rate_hz", "must be > 0"));
        }
        if !(self.q_sift > 0.0 && self.q_sift <= 1.0) {
            return Err(Error::invalid("decoy.q_sift", "must lie in (0, 1]"));
        }
        if !(self.y0 >= 0.0 && self.y0 < 1.0) {
            return Err(Error::invalid("decoy.y0", "must lie in [0, 1)"));
        }
        if !(self.e_detector >= 0.0 && self.e_detector < 0.5) {
            return Err(Error::invalid("decoy.e_detector", "must lie in [0, 0.5)"));
        }
        if !(self.f_ec >= 1.0) {
            return Err(Error::invalid("decoy.f_ec", "must be >= 1"));
        }
        let probs = [self.p_signal, self.p_decoy, self.p_vacuum];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("decoy.p_signal", "p_signal + p_decoy + p_vacuum must equal 1"));
        }
        Ok(())
    }

    fn values(&self) -> [f64; 10] {
        [
            self.mu,
            self.nu,
            self.pulse_rate_hz,
            self.q_sift,
            self.y0,
            self.e_detector,
            self.f_ec,
            self.p_signal,
            self.p_decoy,
            self.p_vacuum,
        ]
    }

    pub fn from_kv_str(text: &str, origin: &str) -> Result<Self> {
        let mut doc = KvDoc::parse(text, origin)?;
        let mut v = [0.0; 10];
        for (slot, key) in v.iter_mut().zip(Self::KEYS) {
            *slot = doc.take_f64(key)?;
        }
        doc.check_unknown()?;
        let d = DecoyParams {
            mu: v[0],
            nu: v[1],
            pulse_rate_hz: v[2],
            q_sift: v[3],
            y0: v[4],
            e_detector: v[5],
            f_ec: v[6],
            p_signal: v[7],
            p_decoy: v[8],
            p_vacuum: v[9],
        };
        d.validate().map_err(|e| doc.locate(e))?;
        Ok(d)
    }

    pub fn to_kv_string(&self) -> String {
        let pairs: Vec<(&str, f64)> = Self::KEYS.iter().copied().zip(self.values()).collect();
        write_kv(&pairs)
    }
}

/// Overall gain `Q` and QBER `E` for pulses of mean photon number `intensity`.
pub fn gain_and_qber(d: &DecoyParams, eta: f64, intensity: f64) -> (f64, f64) {
    let detected = -(-eta * intensity).exp_m1();
    let q = d.y0 + detected;
    if q <= 0.0 {
        return (0.0, 0.5);
    }
    let e = (0.5 * d.y0 + d.e_detector * detected) / q;
    (q, e.clamp(0.0, 0.5))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinglePhotonBounds {
    pub y1_lower: f64,
    pub e1_upper: f64,
    /// False when the statistics give a non-positive single-photon yield.
    pub feasible: bool,
}

/// Vacuum + weak decoy bounds. The signal QBER does not enter the bound; it
/// is accepted so callers can pass the four observed statistics together.
pub fn single_photon_bounds(d: &DecoyParams, q_mu: f64, _e_mu: f64, q_nu: f64, e_nu: f64) -> SinglePhotonBounds {
    let (mu, nu) = (d.mu, d.nu);
    let y1 =
        mu / (mu * nu - nu * nu) * (q_nu * nu.exp() - q_mu * mu.exp() * (nu * nu) / (mu * mu) - (mu * mu - nu * nu) / (mu * mu) * d.y0);
    if !(y1 > 0.0) {
        return SinglePhotonBounds {
            y1_lower: 0.0,
            e1_upper: 0.5,
            feasible: false,
        };
    }
    let y1 = y1.min(1.0);
    let e1 = (e_nu * q_nu * nu.exp() - 0.5 * d.y0) / (y1 * nu);
    SinglePhotonBounds {
        y1_lower: y1,
        e1_upper: e1.clamp(0.0, 0.5),
        feasible: true,
    }
}

pub fn binary_entropy(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::OutOfUnitInterval(x));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(0.0);
    }
    Ok(-x * x.log2() - (1.0 - x) * (1.0 - x).log2())
}

fn h2(x: f64) -> f64 {
    binary_entropy(x.clamp(0.0, 1.0)).expect("clamped into [0, 1]")
}

/// Per-emitted-pulse rates. Only signal pulses contribute key.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseRates {
    pub secret: f64,
    pub sifted: f64,
    /// Detections (before sifting) per emitted pulse.
    pub detections: f64,
    /// QBER of signal pulses.
    pub qber: f64,
}

pub fn secret_rate_per_pulse(d: &DecoyParams, eta: f64) -> PulseRates {
    let (q_mu, e_mu) = gain_and_qber(d, eta, d.mu);
    let (q_nu, e_nu) = gain_and_qber(d, eta, d.nu);
    let bounds = single_photon_bounds(d, q_mu, e_mu, q_nu, e_nu);
    let secret = if bounds.feasible {
        let q1 = bounds.y1_lower * d.mu * (-d.mu).exp();
        let fraction = q1 * (1.0 - h2(bounds.e1_upper)) - d.f_ec * q_mu * h2(e_mu);
        d.q_sift * d.p_signal * fraction.max(0.0)
    } else {
        0.0
    };
    PulseRates {
        secret,
        sifted: d.q_sift * d.p_signal * q_mu,
        detections: d.p_signal * q_mu,
        qber: e_mu,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PassYield {
    pub sifted_bits: u64,
    pub secret_bits: u64,
    /// Detection-weighted mean QBER.
    pub mean_qber: f64,
    pub duration_s: f64,
    pub detection_events: u64,
}

/// Un-floored pass totals, used where yields are scaled before rounding.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PassTotals {
    pub sifted: f64,
    pub secret: f64,
    pub detections: f64,
    pub qber_weighted: f64,
    pub duration_s: f64,
}

impl PassTotals {
    pub fn scaled(&self, k: f64) -> PassTotals {
        PassTotals {
            sifted: self.sifted * k,
            secret: self.secret * k,
            detections: self.detections * k,
            qber_weighted: self.qber_weighted * k,
            duration_s: self.duration_s,
        }
    }

    pub fn to_yield(&self) -> PassYield {
        let mean_qber = if self.sifted > 0.0 { self.qber_weighted / self.sifted } else { 0.0 };
        PassYield {
            sifted_bits: self.sifted.floor() as u64,
            secret_bits: self.secret.floor() as u64,
            mean_qber,
            duration_s: self.duration_s,
            detection_events: self.detections.floor() as u64,
        }
    }
}

pub fn pass_totals(d: &DecoyParams, p: &LinkParams, pass: &PassEvent) -> Result<PassTotals> {
    let mut t = PassTotals {
        duration_s: pass.duration_s(),
        ..PassTotals::default()
    };
    let pulses = d.pulse_rate_hz * pass.step_s;
    for s in &pass.samples {
        let eta = channel_transmittance(p, s.range_km, s.elevation_deg)?.transmittance_eta;
        let r = secret_rate_per_pulse(d, eta);
        t.sifted += r.sifted * pulses;
        t.secret += r.secret * pulses;
        t.detections += r.detections * pulses;
        t.qber_weighted += r.qber * r.sifted * pulses;
    }
    Ok(t)
}

/// Sums per-sample rates over the pass and floors the totals.
pub fn integrate_pass(d: &DecoyParams, p: &LinkParams, pass: &PassEvent) -> Result<PassYield> {
    Ok(pass_totals(d, p, pass)?.to_yield())
}
