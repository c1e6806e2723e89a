//! End-to-end runs: geometry, contact planning, key generation, crosslink
//! redistribution and the figure of merit, plus parameter sweeps.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fom::{fom_table, FomResult};
use crate::geometry::{find_passes, generate_constellation, OrbitState, SimClock, SECONDS_PER_DAY};
use crate::isl::{isl_key_generation, knee_point, marginal_gains, redistribute, write_transfer_log_csv, IslTopology, Transfer};
use crate::key_network::KeyLedger;
use crate::scenario::{Cadence, Scenario};
use crate::scheduler::{build_plan, execute_plan, pass_cloud_prob, ContactPlan};

#[derive(Debug, Clone)]
pub struct SimResult {
    pub orbits: Vec<OrbitState>,
    pub plan: ContactPlan,
    /// Ground keys as generated, before any crosslink transfer.
    pub ledger_before_isl: KeyLedger,
    pub ledger: KeyLedger,
    /// (day, ledger) snapshots at the configured checkpoint interval.
    pub checkpoints: Vec<(u32, KeyLedger)>,
    pub isl_credits: Vec<(usize, usize, u64)>,
    pub transfers: Vec<Transfer>,
    pub fom: FomResult,
}

fn window(s: &Scenario) -> (f64, f64) {
    (0.0, s.duration_days() as f64 * SECONDS_PER_DAY)
}

/// Runs the whole chain in memory.
pub fn simulate(s: &Scenario) -> Result<SimResult> {
    let clock = SimClock::new(s.epoch);
    let orbits = generate_constellation(&s.constellation, &clock)?;
    let (t0, t1) = window(s);
    let step = s.step_s();
    let passes = find_passes(&orbits, &s.stations, &clock, t0, t1 - 0.5 * step, step)?;
    let mut plan = build_plan(&passes, &s.stations, &s.cloud, &clock)?;
    let executed = execute_plan(&mut plan, &s.stations, &s.link, &s.decoy, &s.cloud, &clock, s.seed(), s.cloud_mode)?;

    let isl = if s.isl_enabled { s.isl.as_ref() } else { None };
    let topology = IslTopology::build(&orbits);
    let names = s.station_names();
    let checkpoint_every = s.file.output.ledger_checkpoint_days;

    let mut ledger = KeyLedger::new();
    let mut before = KeyLedger::new();
    let mut checkpoints = Vec::new();
    let mut credits = std::collections::BTreeMap::<(usize, usize), u64>::new();
    let mut transfers = Vec::new();
    let mut next = executed.iter().peekable();
    let mut generate = |ledger: &mut KeyLedger, a: f64, b: f64| -> Result<()> {
        if let Some(setup) = isl {
            for (p, bits) in isl_key_generation(ledger, &topology, &orbits, &clock, &setup.link, &setup.decoy, a, b, step)? {
                *credits.entry((p.sat_a, p.sat_b)).or_default() += bits;
            }
        }
        Ok(())
    };
    for day in 1..=s.duration_days() {
        let day_end = day as f64 * SECONDS_PER_DAY;
        while let Some(e) = next.next_if(|e| e.t_start_s < day_end) {
            ledger.credit(e.sat_id, e.station_id, e.outcome.secret_bits);
            before.credit(e.sat_id, e.station_id, e.outcome.secret_bits);
        }
        if let Some(setup) = isl.filter(|i| i.cadence == Cadence::Daily) {
            generate(&mut ledger, day_end - SECONDS_PER_DAY, day_end)?;
            transfers.extend(redistribute(&mut ledger, &topology, &names, setup.mode));
        }
        if checkpoint_every > 0 && day % checkpoint_every == 0 {
            checkpoints.push((day, ledger.clone()));
        }
    }
    if let Some(setup) = isl.filter(|i| i.cadence == Cadence::End) {
        generate(&mut ledger, t0, t1)?;
        transfers.extend(redistribute(&mut ledger, &topology, &names, setup.mode));
    }
    let fom = fom_table(&ledger, &names)?;
    Ok(SimResult {
        orbits,
        plan,
        ledger_before_isl: before,
        ledger,
        checkpoints,
        isl_credits: credits.into_iter().map(|((a, b), v)| (a, b, v)).collect(),
        transfers,
        fom,
    })
}

fn create(dir: &Path, name: &str) -> Result<fs::File> {
    let path = dir.join(name);
    fs::File::create(&path).map_err(|e| Error::file(path, e))
}

/// Writes every artifact of a finished run into `dir`.
pub fn write_outputs(s: &Scenario, r: &SimResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let names = s.station_names();
    r.plan.write_csv(create(dir, "contact_plan.csv")?, &s.stations)?;
    r.ledger.write_snapshot_csv(create(dir, "ledger.csv")?, &names)?;
    for (day, l) in &r.checkpoints {
        l.write_snapshot_csv(create(dir, &format!("ledger_day{day:04}.csv"))?, &names)?;
    }
    r.fom.write_csv(create(dir, "fom.csv")?, &names)?;
    if s.isl_enabled && s.isl.is_some() {
        let remaining: std::collections::BTreeMap<(usize, usize), u64> = r.ledger.isl_budgets().collect();
        let mut w = csv::Writer::from_writer(create(dir, "isl_budget.csv")?);
        w.write_record(["sat_a", "sat_b", "credited_bits", "remaining_bits"])?;
        for &(a, b, bits) in &r.isl_credits {
            let left = remaining.get(&(a.min(b), a.max(b))).copied().unwrap_or(0);
            w.write_record([a.to_string(), b.to_string(), bits.to_string(), left.to_string()])?;
        }
        w.flush()?;
        write_transfer_log_csv(create(dir, "isl_transfers.csv")?, &r.transfers, &names)?;
    }
    Ok(())
}

/// Simulates and writes outputs to the scenario's output directory.
pub fn run(s: &Scenario) -> Result<SimResult> {
    let r = simulate(s)?;
    write_outputs(s, &r, &s.output_dir)?;
    Ok(r)
}

/// Night-time access weighted by the clear-sky probability, summed over the
/// resolved contact plan (seconds).
pub fn usable_access_s(s: &Scenario) -> Result<f64> {
    let clock = SimClock::new(s.epoch);
    let orbits = generate_constellation(&s.constellation, &clock)?;
    let (t0, t1) = window(s);
    let passes = find_passes(&orbits, &s.stations, &clock, t0, t1 - 0.5 * s.step_s(), s.step_s())?;
    let plan = build_plan(&passes, &s.stations, &s.cloud, &clock)?;
    plan.executed()
        .map(|e| Ok(e.pass.duration_s() * (1.0 - pass_cloud_prob(&e.pass, &s.stations, &s.cloud, &clock)?)))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Inclination,
    NSats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMetric {
    /// Usable access time in hours.
    Access,
    /// Network-average embassy message size in bits.
    Fom,
}

/// One swept setting; `SunSynchronous` selects the sun-synchronous layout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepValue {
    Number(f64),
    SunSynchronous,
}

impl std::str::FromStr for SweepValue {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("sso") {
            return Ok(SweepValue::SunSynchronous);
        }
        s.trim()
            .parse::<f64>()
            .map(SweepValue::Number)
            .map_err(|_| Error::invalid("sweep value", format!("`{s}` is neither a number nor `sso`")))
    }
}

impl std::fmt::Display for SweepValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SweepValue::Number(v) => write!(f, "{v}"),
            SweepValue::SunSynchronous => f.write_str("sso"),
        }
    }
}

/// A copy of `s` with one constellation parameter replaced.
pub fn variant(s: &Scenario, axis: SweepAxis, value: SweepValue) -> Result<Scenario> {
    let mut v = s.clone();
    match (axis, value) {
        (SweepAxis::Inclination, SweepValue::SunSynchronous) => v.constellation.sun_synchronous = true,
        (SweepAxis::Inclination, SweepValue::Number(i)) => {
            v.constellation.sun_synchronous = false;
            v.constellation.inclination_deg = i;
        }
        (SweepAxis::NSats, SweepValue::Number(n)) if n >= 1.0 && n.fract() == 0.0 => v.constellation.sats_per_plane = n as usize,
        (SweepAxis::NSats, other) => return Err(Error::invalid("sweep value", format!("`{other}` is not a satellite count"))),
    }
    v.constellation.validate()?;
    Ok(v)
}

pub fn evaluate(s: &Scenario, metric: SweepMetric) -> Result<f64> {
    match metric {
        SweepMetric::Access => Ok(usable_access_s(s)? / 3600.0),
        SweepMetric::Fom => Ok(simulate(s)?.fom.network_average),
    }
}

pub fn sweep(s: &Scenario, axis: SweepAxis, values: &[SweepValue], metric: SweepMetric) -> Result<Vec<(SweepValue, f64)>> {
    if values.is_empty() {
        return Err(Error::invalid("sweep values", "at least one value is required"));
    }
    values.iter().map(|&v| Ok((v, evaluate(&variant(s, axis, v)?, metric)?))).collect()
}

pub fn write_sweep_csv<W: Write>(writer: W, axis: SweepAxis, metric: SweepMetric, rows: &[(SweepValue, f64)]) -> Result<()> {
    let x = match axis {
        SweepAxis::Inclination => "inclination_deg",
        SweepAxis::NSats => "sats_per_plane",
    };
    let y = match metric {
        SweepMetric::Access => "usable_access_h",
        SweepMetric::Fom => "avg_message_bits",
    };
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([x, y])?;
    for (v, m) in rows {
        w.write_record([v.to_string(), format!("{m:.6}")])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SizeSweep {
    pub rows: Vec<(usize, f64)>,
    /// Per-satellite relative gain between consecutive rows.
    pub gains: Vec<Option<f64>>,
    pub knee: Option<usize>,
}

/// Average message size against satellites per plane with crosslinks on.
pub fn optimum_constellation_sweep(s: &Scenario, ns: &[usize], threshold: f64) -> Result<SizeSweep> {
    if ns.is_empty() {
        return Err(Error::invalid("n_range", "must not be empty"));
    }
    if s.isl.is_none() {
        return Err(Error::invalid(
            "isl",
            "the size sweep needs `link_file` and `decoy_file` for the crosslink terminal",
        ));
    }
    let mut rows = Vec::new();
    for &n in ns {
        let mut v = variant(s, SweepAxis::NSats, SweepValue::Number(n as f64))?;
        v.isl_enabled = true;
        rows.push((n, simulate(&v)?.fom.network_average));
    }
    let xs: Vec<usize> = rows.iter().map(|r| r.0).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.1).collect();
    Ok(SizeSweep {
        gains: marginal_gains(&xs, &ys),
        knee: knee_point(&xs, &ys, threshold),
        rows,
    })
}

pub fn write_size_sweep_csv<W: Write>(writer: W, sweep: &SizeSweep) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["sats_per_plane", "avg_message_bits", "marginal_gain_per_sat", "knee"])?;
    for (i, (n, m)) in sweep.rows.iter().enumerate() {
        let gain = i
            .checked_sub(1)
            .and_then(|k| sweep.gains[k])
            .map(|g| format!("{g:.6}"))
            .unwrap_or_default();
        let knee = u8::from(sweep.knee == Some(*n));
        w.write_record([n.to_string(), format!("{m:.3}"), gain, knee.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
