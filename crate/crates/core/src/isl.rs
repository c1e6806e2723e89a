//! Intra-plane crosslinks: ring topology, eclipse-gated key budgets and
//! neighbour redistribution of ground keys.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{is_sat_eclipsed, propagate, OrbitState, SimClock};
use crate::key_network::KeyLedger;
use crate::optical_link::{crosslink_transmittance, LinkParams};
use crate::qkd_rate::{secret_rate_per_pulse, DecoyParams};

pub const TRANSFER_LOG_HEADER: [&str; 6] = ["plane", "sat_from", "sat_to", "station", "bits", "sweep"];
pub const DEFAULT_KNEE_THRESHOLD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransferMode {
    /// Key leaves the sending satellite.
    #[default]
    Move,
    /// Key is duplicated on the receiving satellite.
    Copy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IslPair {
    pub plane: usize,
    pub sat_a: usize,
    pub sat_b: usize,
    pub range_km: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaneRing {
    pub plane: usize,
    /// Satellites in ascending argument of latitude.
    pub sats: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IslTopology {
    pub planes: Vec<PlaneRing>,
    /// Neighbour pairs in ring order, plane by plane.
    pub pairs: Vec<IslPair>,
}

impl IslTopology {
    /// Three or more satellites close a ring, two form a single link and a
    /// lone satellite has no neighbours.
    pub fn build(orbits: &[OrbitState]) -> Self {
        let mut by_plane: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, o) in orbits.iter().enumerate() {
            by_plane.entry(o.plane).or_default().push(i);
        }
        let mut topo = IslTopology::default();
        for (plane, mut sats) in by_plane {
            sats.sort_by(|&a, &b| {
                let ua = orbits[a].arg_latitude_deg.rem_euclid(360.0);
                let ub = orbits[b].arg_latitude_deg.rem_euclid(360.0);
                ua.total_cmp(&ub).then(a.cmp(&b))
            });
            let n = sats.len();
            let links = match n {
                0 | 1 => 0,
                2 => 1,
                _ => n,
            };
            for k in 0..links {
                let (a, b) = (sats[k], sats[(k + 1) % n]);
                let gap = (orbits[b].arg_latitude_deg - orbits[a].arg_latitude_deg).rem_euclid(360.0);
                let r = orbits[a].radius_km();
                topo.pairs.push(IslPair {
                    plane,
                    sat_a: a,
                    sat_b: b,
                    range_km: 2.0 * r * (gap.to_radians() / 2.0).sin(),
                });
            }
            topo.planes.push(PlaneRing { plane, sats });
        }
        topo
    }
}

/// Secret key rate of a crosslink at fixed range (bit/s).
pub fn crosslink_rate_bps(link: &LinkParams, decoy: &DecoyParams, range_km: f64) -> f64 {
    let eta = crosslink_transmittance(link, range_km).transmittance_eta;
    secret_rate_per_pulse(decoy, eta).secret * decoy.pulse_rate_hz
}

/// Eclipsed seconds shared by both ends of a link over `[t0_s, t1_s)`.
pub fn shared_eclipse_s(a: &OrbitState, b: &OrbitState, clock: &SimClock, t0_s: f64, t1_s: f64, step_s: f64) -> f64 {
    let n = ((t1_s - t0_s) / step_s - 1e-9).ceil().max(0.0) as u64;
    let mut dark = 0u64;
    for k in 0..n {
        let t = t0_s + k as f64 * step_s;
        let sun = clock.sun_direction(t);
        if is_sat_eclipsed(&propagate(a, t), &sun) && is_sat_eclipsed(&propagate(b, t), &sun) {
            dark += 1;
        }
    }
    dark as f64 * step_s
}

/// Credits every neighbour pair with the crosslink key generated while both
/// ends are in shadow. Returns the bits credited per pair.
#[allow(clippy::too_many_arguments)]
pub fn isl_key_generation(
    ledger: &mut KeyLedger,
    topology: &IslTopology,
    orbits: &[OrbitState],
    clock: &SimClock,
    link: &LinkParams,
    decoy: &DecoyParams,
    t0_s: f64,
    t1_s: f64,
    step_s: f64,
) -> Result<Vec<(IslPair, u64)>> {
    if !(step_s > 0.0) {
        return Err(Error::invalid("isl step_s", "must be > 0"));
    }
    let credited: Vec<(IslPair, u64)> = topology
        .pairs
        .par_iter()
        .map(|p| {
            let dark = shared_eclipse_s(&orbits[p.sat_a], &orbits[p.sat_b], clock, t0_s, t1_s, step_s);
            (*p, (dark * crosslink_rate_bps(link, decoy, p.range_km)).floor() as u64)
        })
        .collect();
    for (p, bits) in &credited {
        ledger.credit_isl(p.sat_a, p.sat_b, *bits);
    }
    Ok(credited)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transfer {
    pub plane: usize,
    pub sat_from: usize,
    pub sat_to: usize,
    pub station: usize,
    pub bits: u64,
    pub sweep: usize,
}

pub fn write_transfer_log_csv<W: Write>(writer: W, transfers: &[Transfer], station_names: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRANSFER_LOG_HEADER)?;
    for t in transfers {
        let name = station_names.get(t.station).cloned().unwrap_or_else(|| t.station.to_string());
        w.write_record([
            t.plane.to_string(),
            t.sat_from.to_string(),
            t.sat_to.to_string(),
            name,
            t.bits.to_string(),
            t.sweep.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn station_order(ledger: &KeyLedger, pairs: &[IslPair], stations: &[usize], names: &[String]) -> Vec<usize> {
    let mut scored: Vec<(u64, usize)> = stations
        .iter()
        .map(|&g| {
            let imbalance = pairs
                .iter()
                .map(|p| ledger.balance(p.sat_a, g).abs_diff(ledger.balance(p.sat_b, g)))
                .sum();
            (imbalance, g)
        })
        .collect();
    let name = |g: usize| names.get(g).map(String::as_str).unwrap_or("");
    scored.sort_by(|x, y| y.0.cmp(&x.0).then_with(|| name(x.1).cmp(name(y.1))).then(x.1.cmp(&y.1)));
    scored.into_iter().map(|s| s.1).collect()
}

/// Neighbour levelling of ground keys around each ring.
///
/// Every sweep visits the links in ring order, each in both directions, and
/// for every station moves half the balance difference (capped by the link's
/// remaining crosslink budget) from the richer to the poorer satellite.
/// Sweeps repeat until nothing moves. Each relocated bit spends one bit of
/// crosslink key.
pub fn redistribute(ledger: &mut KeyLedger, topology: &IslTopology, station_names: &[String], mode: TransferMode) -> Vec<Transfer> {
    let mut stations: Vec<usize> = ledger.balances().map(|((_, g), _)| g).collect();
    stations.sort_unstable();
    stations.dedup();
    let mut log = Vec::new();
    for ring in &topology.planes {
        let pairs: Vec<IslPair> = topology.pairs.iter().filter(|p| p.plane == ring.plane).copied().collect();
        let mut sweep = 0;
        loop {
            sweep += 1;
            let order = station_order(ledger, &pairs, &stations, station_names);
            let mut moved = false;
            for p in &pairs {
                for (s, t) in [(p.sat_a, p.sat_b), (p.sat_b, p.sat_a)] {
                    for &g in &order {
                        let (bs, bt) = (ledger.balance(s, g), ledger.balance(t, g));
                        if bs <= bt + 1 {
                            continue;
                        }
                        let x = ((bs - bt) / 2).min(ledger.isl_budget(s, t));
                        if x == 0 {
                            continue;
                        }
                        ledger.set_balance(t, g, bt + x);
                        if mode == TransferMode::Move {
                            ledger.set_balance(s, g, bs - x);
                        }
                        ledger.debit_isl(s, t, x);
                        log.push(Transfer {
                            plane: ring.plane,
                            sat_from: s,
                            sat_to: t,
                            station: g,
                            bits: x,
                            sweep,
                        });
                        moved = true;
                    }
                }
            }
            if !moved {
                break;
            }
        }
    }
    log
}

/// First swept size whose per-satellite relative gain over the previous size
/// drops below `threshold`. `values[i]` is the metric for `ns[i]` satellites.
pub fn knee_point(ns: &[usize], values: &[f64], threshold: f64) -> Option<usize> {
    marginal_gains(ns, values)
        .into_iter()
        .zip(ns.iter().skip(1))
        .find(|(g, _)| g.is_some_and(|g| g < threshold))
        .map(|(_, &n)| n)
}

/// `(M_i - M_{i-1}) / M_{i-1} / (N_i - N_{i-1})`; `None` when undefined.
pub fn marginal_gains(ns: &[usize], values: &[f64]) -> Vec<Option<f64>> {
    ns.windows(2)
        .zip(values.windows(2))
        .map(|(n, v)| {
            if v[0] > 0.0 && n[1] > n[0] {
                Some((v[1] - v[0]) / v[0] / (n[1] - n[0]) as f64)
            } else {
                None
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::EARTH_RADIUS_KM;
    use proptest::prelude::*;

    fn ring(n: usize) -> Vec<OrbitState> {
        (0..n)
            .map(|k| {
                let mut o = OrbitState::new(500.0, 97.4, 0.0, 360.0 * k as f64 / n as f64);
                o.plane = 0;
                o
            })
            .collect()
    }

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|k| format!("G{k}")).collect()
    }

    #[test]
    fn topology_shapes() {
        assert!(IslTopology::build(&ring(1)).pairs.is_empty());
        assert_eq!(IslTopology::build(&ring(2)).pairs.len(), 1);
        let t = IslTopology::build(&ring(6));
        assert_eq!(t.pairs.len(), 6);
        let mut degree = [0; 6];
        for p in &t.pairs {
            degree[p.sat_a] += 1;
            degree[p.sat_b] += 1;
        }
        assert!(degree.iter().all(|&d| d == 2));
    }

    #[test]
    fn ring_order_follows_argument_of_latitude() {
        let mut orbits = ring(4);
        orbits.swap(1, 3);
        let t = IslTopology::build(&orbits);
        let u: Vec<f64> = t.planes[0].sats.iter().map(|&s| orbits[s].arg_latitude_deg).collect();
        assert_eq!(u, vec![0.0, 90.0, 180.0, 270.0]);
    }

    #[test]
    fn six_sat_chord() {
        let t = IslTopology::build(&ring(6));
        for p in &t.pairs {
            assert!((p.range_km - 2.0 * (EARTH_RADIUS_KM + 500.0) * (std::f64::consts::PI / 6.0).sin()).abs() < 1e-6);
            assert!((p.range_km - 6871.0).abs() < 1e-6);
        }
    }

    #[test]
    fn two_sat_levelling() {
        let t = IslTopology::build(&ring(2));
        let mut l = KeyLedger::new();
        l.credit(0, 0, 10);
        l.credit_isl(0, 1, 100);
        redistribute(&mut l, &t, &names(1), TransferMode::Move);
        assert_eq!((l.balance(0, 0), l.balance(1, 0)), (5, 5));
        assert_eq!(l.isl_budget(0, 1), 95);

        let mut l = KeyLedger::new();
        l.credit(0, 0, 10);
        l.credit_isl(0, 1, 2);
        redistribute(&mut l, &t, &names(1), TransferMode::Move);
        assert_eq!((l.balance(0, 0), l.balance(1, 0)), (8, 2));
        assert_eq!(l.isl_budget(0, 1), 0);
    }

    #[test]
    fn three_ring_equal_split() {
        // sweep 1: 0->1 moves 4 (5,4,0); 1->2 moves 2 (5,2,2); 0->2 moves 1 (4,2,3)
        // sweep 2: 0->1 moves 1 (3,3,3); sweep 3 is idle
        let t = IslTopology::build(&ring(3));
        let mut l = KeyLedger::new();
        l.credit(0, 0, 9);
        for p in &t.pairs {
            l.credit_isl(p.sat_a, p.sat_b, 1000);
        }
        let log = redistribute(&mut l, &t, &names(1), TransferMode::Move);
        assert_eq!((l.balance(0, 0), l.balance(1, 0), l.balance(2, 0)), (3, 3, 3));
        let steps: Vec<(usize, usize, u64, usize)> = log.iter().map(|x| (x.sat_from, x.sat_to, x.bits, x.sweep)).collect();
        assert_eq!(steps, vec![(0, 1, 4, 1), (1, 2, 2, 1), (0, 2, 1, 1), (0, 1, 1, 2)]);
    }

    #[test]
    fn copy_mode_raises_towards_maximum() {
        let t = IslTopology::build(&ring(2));
        let mut l = KeyLedger::new();
        l.credit(0, 0, 10);
        l.credit_isl(0, 1, 100);
        redistribute(&mut l, &t, &names(1), TransferMode::Copy);
        assert_eq!(l.balance(0, 0), 10);
        assert_eq!(l.balance(1, 0), 9);
        assert_eq!(l.isl_budget(0, 1), 91);
    }

    #[test]
    fn lone_satellite_untouched() {
        let t = IslTopology::build(&ring(1));
        let mut l = KeyLedger::new();
        l.credit(0, 0, 10);
        let before = l.clone();
        assert!(redistribute(&mut l, &t, &names(1), TransferMode::Move).is_empty());
        assert_eq!(l, before);
    }

    #[test]
    fn sunlit_window_generates_nothing() {
        // at t = 0 the sun lies along +x; a satellite parked near +x stays lit for minutes
        let clock = SimClock::default();
        let mut orbits = ring(2);
        let sun = clock.sun_direction(0.0);
        let lon = sun.y().atan2(sun.x()).to_degrees();
        orbits[0] = OrbitState::new(500.0, 0.0, 0.0, lon);
        orbits[1] = OrbitState::new(500.0, 0.0, 0.0, lon + 10.0);
        orbits[1].plane = 0;
        assert_eq!(shared_eclipse_s(&orbits[0], &orbits[1], &clock, 0.0, 300.0, 10.0), 0.0);
    }

    #[test]
    fn budget_matches_eclipse_fraction_times_rate() {
        let clock = SimClock::default();
        let orbits = ring(12);
        let t = IslTopology::build(&orbits);
        let link = LinkParams {
            wavelength_nm: 850.0,
            tx_aperture_m: 0.15,
            rx_aperture_m: 0.15,
            beam_quality_m2: 1.2,
            pointing_error_urad: 0.5,
            zenith_atm_loss_db: 0.0,
            optics_rx_loss_db: 3.0,
            detector_efficiency: 0.5,
        };
        let d = DecoyParams {
            y0: 1e-7,
            ..crate::qkd_rate::tests::decoy()
        };
        let mut l = KeyLedger::new();
        let period = orbits[0].period_s();
        let got = isl_key_generation(&mut l, &t, &orbits, &clock, &link, &d, 0.0, period, 10.0).unwrap();
        let dark = shared_eclipse_s(&orbits[0], &orbits[1], &clock, 0.0, period, 10.0);
        let rate = crosslink_rate_bps(&link, &d, t.pairs[0].range_km);
        assert!(dark > 0.0 && dark < period);
        assert_eq!(got[0].1, (dark * rate).floor() as u64);
        assert_eq!(l.isl_budget(t.pairs[0].sat_b, t.pairs[0].sat_a), got[0].1);
        assert!(got[0].1 > 0);
    }

    #[test]
    fn knee_detection() {
        let ns = [1, 2, 3, 4, 5];
        let v = [10.0, 15.0, 17.0, 17.2, 17.25];
        assert_eq!(knee_point(&ns, &v, 0.02), Some(4));
        assert_eq!(knee_point(&ns, &[1.0, 2.0, 3.0, 4.0, 5.0], 0.02), None);
        let g = marginal_gains(&[2, 4], &[10.0, 12.0]);
        assert!((g[0].unwrap() - 0.1).abs() < 1e-12);
    }

    fn instance() -> impl Strategy<Value = (usize, Vec<Vec<u64>>, u64)> {
        (2usize..7, 1usize..4).prop_flat_map(|(n, g)| (Just(n), prop::collection::vec(prop::collection::vec(0u64..60, n), g), 0u64..80))
    }

    fn load(n: usize, bal: &[Vec<u64>], budget: u64) -> (IslTopology, KeyLedger) {
        let t = IslTopology::build(&ring(n));
        let mut l = KeyLedger::new();
        for (g, row) in bal.iter().enumerate() {
            for (s, &b) in row.iter().enumerate() {
                l.credit(s, g, b);
            }
        }
        for p in &t.pairs {
            l.credit_isl(p.sat_a, p.sat_b, budget);
        }
        (t, l)
    }

    proptest! {
        #[test]
        fn move_conserves_station_totals_and_spends_budget((n, bal, budget) in instance()) {
            let (t, mut l) = load(n, &bal, budget);
            let totals: Vec<u64> = (0..bal.len()).map(|g| l.station_total(g)).collect();
            let budget_before = l.total_isl_budget();
            let log = redistribute(&mut l, &t, &names(bal.len()), TransferMode::Move);
            for (g, total) in totals.iter().enumerate() {
                prop_assert_eq!(l.station_total(g), *total);
            }
            let moved: u64 = log.iter().map(|x| x.bits).sum();
            prop_assert_eq!(budget_before - l.total_isl_budget(), moved);
            prop_assert!(l.total_isl_budget() <= budget_before);
        }

        #[test]
        fn unlimited_budget_reaches_neighbour_fixed_point((n, bal, _b) in instance()) {
            let (t, mut l) = load(n, &bal, 1_000_000);
            redistribute(&mut l, &t, &names(bal.len()), TransferMode::Move);
            for g in 0..bal.len() {
                for p in &t.pairs {
                    prop_assert!(l.balance(p.sat_a, g).abs_diff(l.balance(p.sat_b, g)) <= 1);
                }
                let v: Vec<u64> = (0..n).map(|s| l.balance(s, g)).collect();
                let spread = v.iter().max().unwrap() - v.iter().min().unwrap();
                prop_assert!(spread <= (n / 2) as u64);
            }
        }

        #[test]
        fn idempotent_once_converged((n, bal, budget) in instance()) {
            let (t, mut l) = load(n, &bal, budget);
            redistribute(&mut l, &t, &names(bal.len()), TransferMode::Move);
            let settled = l.clone();
            prop_assert!(redistribute(&mut l, &t, &names(bal.len()), TransferMode::Move).is_empty());
            prop_assert_eq!(l, settled);
        }
    }
}
