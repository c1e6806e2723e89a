//! Embassy figure of merit: the largest message a station can one-time-pad
//! broadcast to every other station through the satellites' key stores.

use std::collections::VecDeque;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::key_network::KeyLedger;

pub const FOM_HEADER: [&str; 3] = ["station", "message_bits", "binding_partner"];

/// Dinic max-flow on integer capacities.
#[derive(Debug, Clone)]
pub struct FlowNetwork {
    head: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<u64>,
}

impl FlowNetwork {
    pub fn new(nodes: usize) -> Self {
        FlowNetwork {
            head: vec![Vec::new(); nodes],
            to: Vec::new(),
            cap: Vec::new(),
        }
    }

    pub fn add_edge(&mut self, from: usize, to: usize, cap: u64) {
        self.head[from].push(self.to.len());
        self.to.push(to);
        self.cap.push(cap);
        self.head[to].push(self.to.len());
        self.to.push(from);
        self.cap.push(0);
    }

    fn levels(&self, s: usize) -> Vec<Option<usize>> {
        let mut level = vec![None; self.head.len()];
        level[s] = Some(0);
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &e in &self.head[u] {
                let v = self.to[e];
                if self.cap[e] > 0 && level[v].is_none() {
                    level[v] = Some(level[u].unwrap() + 1);
                    queue.push_back(v);
                }
            }
        }
        level
    }

    fn augment(&mut self, u: usize, t: usize, pushed: u64, level: &[Option<usize>], next: &mut [usize]) -> u64 {
        if u == t {
            return pushed;
        }
        while next[u] < self.head[u].len() {
            let e = self.head[u][next[u]];
            let v = self.to[e];
            if self.cap[e] > 0 && level[v] == level[u].map(|l| l + 1) {
                let got = self.augment(v, t, pushed.min(self.cap[e]), level, next);
                if got > 0 {
                    self.cap[e] -= got;
                    self.cap[e ^ 1] += got;
                    return got;
                }
            }
            next[u] += 1;
        }
        0
    }

    pub fn max_flow(&mut self, s: usize, t: usize) -> u64 {
        let mut flow = 0;
        loop {
            let level = self.levels(s);
            if level[t].is_none() {
                return flow;
            }
            let mut next = vec![0; self.head.len()];
            loop {
                let f = self.augment(s, t, u64::MAX, &level, &mut next);
                if f == 0 {
                    break;
                }
                flow += f;
            }
        }
    }
}

/// Whether every recipient can receive `m` bits: each satellite splits the
/// source's key among recipients, never beyond a recipient's own key there.
pub fn broadcast_feasible(ledger: &KeyLedger, source: usize, recipients: &[usize], m: u64) -> bool {
    if m == 0 {
        return true;
    }
    let sats: Vec<usize> = ledger.satellites().into_iter().collect();
    let (s_node, t_node) = (0, 1 + sats.len() + recipients.len());
    let mut net = FlowNetwork::new(t_node + 1);
    for (i, &s) in sats.iter().enumerate() {
        let src = ledger.balance(s, source);
        if src == 0 {
            continue;
        }
        net.add_edge(s_node, 1 + i, src);
        for (j, &b) in recipients.iter().enumerate() {
            let cap = ledger.balance(s, b);
            if cap > 0 {
                net.add_edge(1 + i, 1 + sats.len() + j, cap);
            }
        }
    }
    for j in 0..recipients.len() {
        net.add_edge(1 + sats.len() + j, t_node, m);
    }
    net.max_flow(s_node, t_node) == m * recipients.len() as u64
}

/// Largest `m` with [`broadcast_feasible`], by binary search.
pub fn embassy_message_size(ledger: &KeyLedger, source: usize, recipients: &[usize]) -> u64 {
    if recipients.is_empty() {
        return 0;
    }
    let source_total: u64 = ledger.satellites().into_iter().map(|s| ledger.balance(s, source)).sum();
    let pair_cap = recipients.iter().map(|&b| ledger.pairwise_capacity(source, b)).min().unwrap_or(0);
    let (mut lo, mut hi) = (0u64, pair_cap.min(source_total / recipients.len() as u64));
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        if broadcast_feasible(ledger, source, recipients, mid) {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    lo
}

#[derive(Debug, Clone, PartialEq)]
pub struct FomRow {
    pub station: usize,
    pub message_bits: u64,
    /// Recipient sharing the least pairwise key with this station.
    pub binding_partner: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FomResult {
    pub rows: Vec<FomRow>,
    pub network_average: f64,
}

impl FomResult {
    pub fn write_csv<W: Write>(&self, writer: W, station_names: &[String]) -> Result<()> {
        let name = |g: usize| station_names.get(g).cloned().unwrap_or_else(|| g.to_string());
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(FOM_HEADER)?;
        for r in &self.rows {
            w.write_record([name(r.station), r.message_bits.to_string(), name(r.binding_partner)])?;
        }
        w.write_record(["average".to_string(), format!("{:.3}", self.network_average), String::new()])?;
        w.flush()?;
        Ok(())
    }
}

/// Message size for every station broadcasting to all others, evaluated
/// independently on the same ledger.
pub fn fom_table(ledger: &KeyLedger, station_names: &[String]) -> Result<FomResult> {
    let n = station_names.len();
    if n < 2 {
        return Err(Error::invalid("fom_table", "needs at least two stations"));
    }
    let rows: Vec<FomRow> = (0..n)
        .into_par_iter()
        .map(|a| {
            let recipients: Vec<usize> = (0..n).filter(|&b| b != a).collect();
            let binding_partner = *recipients
                .iter()
                .min_by(|&&x, &&y| {
                    ledger
                        .pairwise_capacity(a, x)
                        .cmp(&ledger.pairwise_capacity(a, y))
                        .then_with(|| station_names[x].cmp(&station_names[y]))
                })
                .unwrap();
            FomRow {
                station: a,
                message_bits: embassy_message_size(ledger, a, &recipients),
                binding_partner,
            }
        })
        .collect();
    let network_average = rows.iter().map(|r| r.message_bits as f64).sum::<f64>() / n as f64;
    Ok(FomResult { rows, network_average })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ledger(rows: &[(usize, usize, u64)]) -> KeyLedger {
        let mut l = KeyLedger::new();
        for &(s, g, b) in rows {
            l.credit(s, g, b);
        }
        l
    }

    #[test]
    fn max_flow_small_graph() {
        let mut n = FlowNetwork::new(4);
        n.add_edge(0, 1, 3);
        n.add_edge(0, 2, 2);
        n.add_edge(1, 2, 5);
        n.add_edge(1, 3, 2);
        n.add_edge(2, 3, 3);
        assert_eq!(n.max_flow(0, 3), 5);
    }

    #[test]
    fn single_satellite_split() {
        // source 5, recipients hold 3 and 9; any integer split of 5 leaves min <= 2
        let l = ledger(&[(0, 0, 5), (0, 1, 3), (0, 2, 9)]);
        assert_eq!(embassy_message_size(&l, 0, &[1, 2]), 2);
    }

    #[test]
    fn two_satellites_serve_one_recipient_each() {
        let l = ledger(&[(0, 0, 4), (0, 1, 4), (0, 2, 4), (1, 0, 4), (1, 1, 4), (1, 2, 4)]);
        assert_eq!(embassy_message_size(&l, 0, &[1, 2]), 4);
    }

    #[test]
    fn single_recipient_is_pairwise_capacity() {
        let l = ledger(&[(0, 0, 7), (0, 1, 3), (1, 0, 2), (1, 1, 9), (2, 1, 4)]);
        assert_eq!(embassy_message_size(&l, 0, &[1]), l.pairwise_capacity(0, 1));
    }

    #[test]
    fn empty_ledger_is_zero() {
        assert_eq!(embassy_message_size(&KeyLedger::new(), 0, &[1, 2]), 0);
    }

    #[test]
    fn symmetric_pair_table() {
        let l = ledger(&[(0, 0, 6), (0, 1, 6)]);
        let t = fom_table(&l, &["A".into(), "B".into()]).unwrap();
        assert_eq!(t.rows[0].message_bits, t.rows[1].message_bits);
        assert_eq!(t.network_average, 6.0);
        assert!(fom_table(&l, &["A".into()]).is_err());
    }

    #[test]
    fn binding_partner_is_poorest_link() {
        let l = ledger(&[(0, 0, 10), (0, 1, 8), (0, 2, 1), (0, 3, 5)]);
        let names: Vec<String> = ["A", "B", "C", "D"].iter().map(|s| s.to_string()).collect();
        let t = fom_table(&l, &names).unwrap();
        assert_eq!(t.rows[0].binding_partner, 2);
        assert_eq!(t.rows[0].message_bits, 1);
        let mut buf = Vec::new();
        t.write_csv(&mut buf, &names).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("station,message_bits,binding_partner\nA,1,C\n"));
        assert!(text.lines().last().unwrap().starts_with("average,"));
    }

    #[test]
    fn crediting_poorest_never_lowers_any_entry() {
        let mut l = ledger(&[(0, 0, 10), (0, 1, 8), (0, 2, 1), (1, 2, 3), (1, 0, 4)]);
        let names: Vec<String> = ["A", "B", "C"].iter().map(|s| s.to_string()).collect();
        let before = fom_table(&l, &names).unwrap();
        l.credit(0, 2, 5);
        let after = fom_table(&l, &names).unwrap();
        for (x, y) in before.rows.iter().zip(&after.rows) {
            assert!(y.message_bits >= x.message_bits);
        }
    }
}
