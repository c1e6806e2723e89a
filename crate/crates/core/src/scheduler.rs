//! Contact planning: dark-sky filtering, single-terminal overlap resolution
//! and per-pass execution against the cloud draw.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{pass_order, GroundStation, PassEvent, PassSample, SimClock};
use crate::optical_link::LinkParams;
use crate::qkd_rate::{pass_totals, DecoyParams, PassYield};
use crate::weather::{draw_is_clear, CloudGrid, CloudMode};

pub const CONTACT_PLAN_HEADER: [&str; 9] = [
    "sat",
    "station",
    "t_start",
    "t_end",
    "executed",
    "reason",
    "sifted_bits",
    "secret_bits",
    "qber",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SkipReason {
    Daylight,
    SatSunlit,
    Cloudy,
    Preempted,
}

impl SkipReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            SkipReason::Daylight => "daylight",
            SkipReason::SatSunlit => "sat_sunlit",
            SkipReason::Cloudy => "cloudy",
            SkipReason::Preempted => "preempted",
        }
    }
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedPass {
    pub pass: PassEvent,
    pub executed: bool,
    pub reason: Option<SkipReason>,
    /// Filled by [`execute_plan`]; zero for skipped passes.
    pub outcome: PassYield,
}

impl PlannedPass {
    fn scheduled(pass: PassEvent) -> Self {
        PlannedPass {
            pass,
            executed: true,
            reason: None,
            outcome: PassYield::default(),
        }
    }

    fn skipped(pass: PassEvent, reason: SkipReason) -> Self {
        PlannedPass {
            pass,
            executed: false,
            reason: Some(reason),
            outcome: PassYield::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContactPlan {
    pub entries: Vec<PlannedPass>,
}

impl ContactPlan {
    pub fn executed(&self) -> impl Iterator<Item = &PlannedPass> {
        self.entries.iter().filter(|e| e.executed)
    }

    pub fn sort(&mut self) {
        self.entries
            .sort_by(|a, b| pass_order(&a.pass, &b.pass).then(a.executed.cmp(&b.executed).reverse()));
    }

    pub fn write_csv<W: Write>(&self, writer: W, stations: &[GroundStation]) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(CONTACT_PLAN_HEADER)?;
        for e in &self.entries {
            let station = stations.get(e.pass.station_id).map(|s| s.name.as_str()).unwrap_or("?");
            w.write_record([
                e.pass.sat_id.to_string(),
                station.to_string(),
                e.pass.t_start_s.to_string(),
                e.pass.t_end_s.to_string(),
                u8::from(e.executed).to_string(),
                e.reason.map(|r| r.as_str()).unwrap_or("").to_string(),
                e.outcome.sifted_bits.to_string(),
                e.outcome.secret_bits.to_string(),
                format!("{:.6}", e.outcome.mean_qber),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn split_runs(pass: &PassEvent, keep: impl Fn(&PassSample) -> bool) -> Vec<PassEvent> {
    let step = pass.step_s;
    let mut runs: Vec<Vec<PassSample>> = Vec::new();
    let mut last_kept: Option<f64> = None;
    for s in &pass.samples {
        if !keep(s) {
            last_kept = None;
            continue;
        }
        match (last_kept, runs.last_mut()) {
            (Some(prev), Some(run)) if (s.time_s - prev - step).abs() < 1e-6 * step => run.push(*s),
            _ => runs.push(vec![*s]),
        }
        last_kept = Some(s.time_s);
    }
    runs.into_iter()
        .filter_map(|r| PassEvent::from_samples(pass.sat_id, pass.station_id, step, pass.pass_id, r))
        .collect()
}

/// Contiguous runs of samples where the satellite is eclipsed and the station
/// is in night. Empty when no such sample exists.
pub fn filter_eclipse(pass: &PassEvent) -> Vec<PassEvent> {
    split_runs(pass, PassSample::is_dark)
}

/// Why a pass with no dark samples was dropped.
pub fn darkness_reason(pass: &PassEvent) -> SkipReason {
    if pass.samples.iter().any(|s| s.station_night) {
        SkipReason::SatSunlit
    } else {
        SkipReason::Daylight
    }
}

/// Applies [`filter_eclipse`] to every pass. Dropped passes are kept as
/// skipped entries so the contact plan records why they did not run.
pub fn plan_dark_passes(passes: &[PassEvent]) -> (Vec<PassEvent>, Vec<PlannedPass>) {
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for p in passes {
        let runs = filter_eclipse(p);
        if runs.is_empty() {
            dropped.push(PlannedPass::skipped(p.clone(), darkness_reason(p)));
        } else {
            kept.extend(runs);
        }
    }
    (kept, dropped)
}

fn slot(t_s: f64, step_s: f64) -> i64 {
    (t_s / step_s).round() as i64
}

/// Overlap resolution for the passes of a single satellite.
///
/// `p_cloud[i]` is the cloud probability used to rank `passes[i]`. Within each
/// maximal group of overlapping passes, passes claim their sample slots in
/// ascending (p_cloud, station name, start) order; a losing pass keeps each
/// unclaimed contiguous remainder as its own fragment.
pub fn resolve_overlaps_with(passes: &[PassEvent], p_cloud: &[f64], names: &[String]) -> ContactPlan {
    assert_eq!(passes.len(), p_cloud.len());
    let mut order: Vec<usize> = (0..passes.len()).collect();
    order.sort_by(|&a, &b| pass_order(&passes[a], &passes[b]));
    let mut plan = ContactPlan::default();
    let mut i = 0;
    while i < order.len() {
        let mut group = vec![order[i]];
        let mut group_end = passes[order[i]].t_end_s;
        let mut j = i + 1;
        while j < order.len() && passes[order[j]].t_start_s < group_end {
            group_end = group_end.max(passes[order[j]].t_end_s);
            group.push(order[j]);
            j += 1;
        }
        i = j;
        if group.len() == 1 {
            plan.entries.push(PlannedPass::scheduled(passes[group[0]].clone()));
            continue;
        }
        let name = |k: usize| names.get(passes[k].station_id).map(String::as_str).unwrap_or("");
        group.sort_by(|&a, &b| {
            p_cloud[a]
                .total_cmp(&p_cloud[b])
                .then_with(|| name(a).cmp(name(b)))
                .then(passes[a].t_start_s.total_cmp(&passes[b].t_start_s))
                .then(passes[a].station_id.cmp(&passes[b].station_id))
        });
        let mut claimed: HashSet<i64> = HashSet::new();
        for k in group {
            let p = &passes[k];
            let step = p.step_s;
            let free: Vec<bool> = p.samples.iter().map(|s| !claimed.contains(&slot(s.time_s, step))).collect();
            if free.iter().all(|&f| f) {
                plan.entries.push(PlannedPass::scheduled(p.clone()));
            } else {
                let frags = split_runs(p, |s| !claimed.contains(&slot(s.time_s, step)));
                if frags.is_empty() {
                    plan.entries.push(PlannedPass::skipped(p.clone(), SkipReason::Preempted));
                }
                plan.entries.extend(frags.into_iter().map(PlannedPass::scheduled));
            }
            claimed.extend(p.samples.iter().map(|s| slot(s.time_s, step)));
        }
    }
    plan.sort();
    plan
}

/// Cloud probability of a pass's station in the month the pass starts.
pub fn pass_cloud_prob(pass: &PassEvent, stations: &[GroundStation], grid: &CloudGrid, clock: &SimClock) -> Result<f64> {
    let st = stations
        .get(pass.station_id)
        .ok_or_else(|| Error::invalid("pass station_id", format!("{} out of range", pass.station_id)))?;
    grid.station_cloud_prob(st, clock.month(pass.t_start_s))
}

/// Resolves overlaps for passes of one satellite, ranking by the cloud grid.
pub fn resolve_overlaps(passes: &[PassEvent], stations: &[GroundStation], grid: &CloudGrid, clock: &SimClock) -> Result<ContactPlan> {
    let p: Vec<f64> = passes
        .iter()
        .map(|p| pass_cloud_prob(p, stations, grid, clock))
        .collect::<Result<_>>()?;
    let names: Vec<String> = stations.iter().map(|s| s.name.clone()).collect();
    Ok(resolve_overlaps_with(passes, &p, &names))
}

/// Filters and resolves passes of any number of satellites; satellites are
/// planned independently and merged in pass order.
pub fn build_plan(passes: &[PassEvent], stations: &[GroundStation], grid: &CloudGrid, clock: &SimClock) -> Result<ContactPlan> {
    let (dark, dropped) = plan_dark_passes(passes);
    let mut sats: Vec<usize> = dark.iter().map(|p| p.sat_id).collect();
    sats.sort_unstable();
    sats.dedup();
    let plans: Vec<ContactPlan> = sats
        .par_iter()
        .map(|&s| {
            let mine: Vec<PassEvent> = dark.iter().filter(|p| p.sat_id == s).cloned().collect();
            resolve_overlaps(&mine, stations, grid, clock)
        })
        .collect::<Result<_>>()?;
    let mut plan = ContactPlan { entries: dropped };
    for p in plans {
        plan.entries.extend(p.entries);
    }
    plan.sort();
    Ok(plan)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecutedPass {
    pub sat_id: usize,
    pub station_id: usize,
    pub t_start_s: f64,
    pub outcome: PassYield,
}

/// Draws the cloud for every scheduled pass, integrates the clear ones and
/// records outcomes in the plan. In expected mode no pass is dropped and the
/// yield is scaled by the clear-sky probability instead.
#[allow(clippy::too_many_arguments)]
pub fn execute_plan(
    plan: &mut ContactPlan,
    stations: &[GroundStation],
    link: &LinkParams,
    decoy: &DecoyParams,
    grid: &CloudGrid,
    clock: &SimClock,
    seed: u64,
    mode: CloudMode,
) -> Result<Vec<ExecutedPass>> {
    let outcomes: Vec<Option<PassYield>> = plan
        .entries
        .par_iter()
        .map(|e| -> Result<Option<PassYield>> {
            if !e.executed {
                return Ok(None);
            }
            let p = pass_cloud_prob(&e.pass, stations, grid, clock)?;
            match mode {
                CloudMode::Bernoulli => {
                    if draw_is_clear(p, seed, e.pass.pass_id) {
                        Ok(Some(pass_totals(decoy, link, &e.pass)?.to_yield()))
                    } else {
                        Ok(None)
                    }
                }
                CloudMode::Expected => Ok(Some(pass_totals(decoy, link, &e.pass)?.scaled(1.0 - p).to_yield())),
            }
        })
        .collect::<Result<_>>()?;
    let mut executed = Vec::new();
    for (e, o) in plan.entries.iter_mut().zip(outcomes) {
        if !e.executed {
            continue;
        }
        match o {
            Some(y) => {
                e.outcome = y;
                executed.push(ExecutedPass {
                    sat_id: e.pass.sat_id,
                    station_id: e.pass.station_id,
                    t_start_s: e.pass.t_start_s,
                    outcome: y,
                });
            }
            None => {
                e.executed = false;
                e.reason = Some(SkipReason::Cloudy);
            }
        }
    }
    Ok(executed)
}
