//! Trusted-node key ledger: per (satellite, station) balances, XOR pairing
//! capacity, atomic consumption and crosslink budgets.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use crate::error::{Error, Result};

pub const SNAPSHOT_HEADER: [&str; 3] = ["sat", "station", "bits"];

/// Order in which satellites are debited when a pair consumes key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DebitStrategy {
    /// Satellites with the largest common balance are drained first.
    #[default]
    GreedyLargest,
    /// The request is spread evenly over all satellites holding common key.
    RoundRobin,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Consumption {
    pub t_s: f64,
    pub sat: usize,
    pub station_a: usize,
    pub station_b: usize,
    pub bits: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyLedger {
    balances: BTreeMap<(usize, usize), u64>,
    isl_budget: BTreeMap<(usize, usize), u64>,
    consumed_log: Vec<Consumption>,
}

fn isl_key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

impl KeyLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn credit(&mut self, sat: usize, station: usize, bits: u64) {
        if bits > 0 {
            *self.balances.entry((sat, station)).or_insert(0) += bits;
        }
    }

    pub fn balance(&self, sat: usize, station: usize) -> u64 {
        self.balances.get(&(sat, station)).copied().unwrap_or(0)
    }

    /// Overwrites a balance; used by crosslink redistribution.
    pub fn set_balance(&mut self, sat: usize, station: usize, bits: u64) {
        if bits == 0 {
            self.balances.remove(&(sat, station));
        } else {
            self.balances.insert((sat, station), bits);
        }
    }

    /// Non-zero balances in (sat, station) order.
    pub fn balances(&self) -> impl Iterator<Item = ((usize, usize), u64)> + '_ {
        self.balances.iter().map(|(k, v)| (*k, *v))
    }

    pub fn satellites(&self) -> BTreeSet<usize> {
        self.balances.keys().map(|k| k.0).collect()
    }

    pub fn station_total(&self, station: usize) -> u64 {
        self.balances.iter().filter(|(k, _)| k.1 == station).map(|(_, v)| *v).sum()
    }

    pub fn pairwise_capacity(&self, a: usize, b: usize) -> u64 {
        self.common_balances(a, b).iter().map(|c| c.1).sum()
    }

    fn common_balances(&self, a: usize, b: usize) -> Vec<(usize, u64)> {
        self.satellites()
            .into_iter()
            .map(|s| (s, self.balance(s, a).min(self.balance(s, b))))
            .filter(|c| c.1 > 0)
            .collect()
    }

    /// Deletes `bits` of key from both stations, spread over satellites as
    /// `strategy` dictates. Fails without touching the ledger when the pair
    /// lacks capacity.
    pub fn consume_pair(&mut self, t_s: f64, a: usize, b: usize, bits: u64, strategy: DebitStrategy) -> Result<()> {
        if a == b {
            return Err(Error::invalid("consume_pair", "stations must differ"));
        }
        if bits == 0 {
            return Ok(());
        }
        let mut common = self.common_balances(a, b);
        let capacity: u64 = common.iter().map(|c| c.1).sum();
        if bits > capacity {
            return Err(Error::InsufficientKey {
                station_a: a,
                station_b: b,
                requested: bits,
                capacity,
            });
        }
        let plan = match strategy {
            DebitStrategy::GreedyLargest => {
                common.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
                let mut left = bits;
                let mut plan = Vec::new();
                for (s, c) in common {
                    if left == 0 {
                        break;
                    }
                    let take = c.min(left);
                    plan.push((s, take));
                    left -= take;
                }
                plan
            }
            DebitStrategy::RoundRobin => {
                let mut taken = vec![0u64; common.len()];
                let mut left = bits;
                while left > 0 {
                    let open = common.iter().zip(&taken).filter(|(c, t)| c.1 > **t).count() as u64;
                    let share = (left / open).max(1);
                    for (c, t) in common.iter().zip(taken.iter_mut()) {
                        let take = (c.1 - *t).min(share).min(left);
                        *t += take;
                        left -= take;
                    }
                }
                common.iter().zip(taken).filter(|(_, t)| *t > 0).map(|(c, t)| (c.0, t)).collect()
            }
        };
        for (s, take) in plan {
            self.set_balance(s, a, self.balance(s, a) - take);
            self.set_balance(s, b, self.balance(s, b) - take);
            self.consumed_log.push(Consumption {
                t_s,
                sat: s,
                station_a: a,
                station_b: b,
                bits: take,
            });
        }
        Ok(())
    }

    pub fn consumed_log(&self) -> &[Consumption] {
        &self.consumed_log
    }

    pub fn credit_isl(&mut self, sat_a: usize, sat_b: usize, bits: u64) {
        if bits > 0 {
            *self.isl_budget.entry(isl_key(sat_a, sat_b)).or_insert(0) += bits;
        }
    }

    pub fn isl_budget(&self, sat_a: usize, sat_b: usize) -> u64 {
        self.isl_budget.get(&isl_key(sat_a, sat_b)).copied().unwrap_or(0)
    }

    pub fn total_isl_budget(&self) -> u64 {
        self.isl_budget.values().sum()
    }

    /// Spends crosslink key; callers must not exceed the budget.
    pub fn debit_isl(&mut self, sat_a: usize, sat_b: usize, bits: u64) {
        let e = self.isl_budget.entry(isl_key(sat_a, sat_b)).or_insert(0);
        assert!(*e >= bits, "crosslink budget overdrawn");
        *e -= bits;
    }

    pub fn isl_budgets(&self) -> impl Iterator<Item = ((usize, usize), u64)> + '_ {
        self.isl_budget.iter().map(|(k, v)| (*k, *v))
    }

    pub fn write_snapshot_csv<W: Write>(&self, writer: W, station_names: &[String]) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(SNAPSHOT_HEADER)?;
        for ((s, g), bits) in self.balances() {
            let name = station_names.get(g).cloned().unwrap_or_else(|| g.to_string());
            w.write_record([s.to_string(), name, bits.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ledger(rows: &[(usize, usize, u64)]) -> KeyLedger {
        let mut l = KeyLedger::new();
        for &(s, g, b) in rows {
            l.credit(s, g, b);
        }
        l
    }

    #[test]
    fn credits_accumulate() {
        let mut l = KeyLedger::new();
        l.credit(0, 0, 0);
        assert_eq!(l, KeyLedger::new());
        l.credit(0, 0, 5);
        l.credit(0, 0, 7);
        assert_eq!(l.balance(0, 0), 12);
    }

    #[test]
    fn capacity_examples() {
        assert_eq!(ledger(&[(0, 0, 5), (0, 1, 3)]).pairwise_capacity(0, 1), 3);
        assert_eq!(ledger(&[(0, 0, 5), (1, 1, 7)]).pairwise_capacity(0, 1), 0);
        let l = ledger(&[(0, 0, 4), (0, 1, 9), (1, 0, 2), (1, 1, 2), (2, 1, 5)]);
        assert_eq!(l.pairwise_capacity(0, 1), 6);
        assert_eq!(l.pairwise_capacity(1, 0), 6);
    }

    #[test]
    fn consuming_everything_and_nothing() {
        let mut l = ledger(&[(0, 0, 4), (0, 1, 9), (1, 0, 2), (1, 1, 2)]);
        let before = l.clone();
        l.consume_pair(0.0, 0, 1, 0, DebitStrategy::GreedyLargest).unwrap();
        assert_eq!(l, before);
        l.consume_pair(1.0, 0, 1, 6, DebitStrategy::GreedyLargest).unwrap();
        assert_eq!(l.pairwise_capacity(0, 1), 0);
        assert_eq!(l.balance(0, 1), 5);
    }

    #[test]
    fn rejected_consume_is_atomic() {
        let mut l = ledger(&[(0, 0, 4), (0, 1, 9), (1, 0, 2), (1, 1, 2)]);
        let before = l.clone();
        let err = l.consume_pair(0.0, 0, 1, 7, DebitStrategy::GreedyLargest).unwrap_err();
        assert!(matches!(
            err,
            Error::InsufficientKey {
                capacity: 6,
                requested: 7,
                ..
            }
        ));
        assert_eq!(l, before);
    }

    #[test]
    fn greedy_drains_largest_first() {
        let mut l = ledger(&[(0, 0, 3), (0, 1, 3), (1, 0, 8), (1, 1, 6), (2, 0, 5), (2, 1, 9)]);
        l.consume_pair(0.0, 0, 1, 9, DebitStrategy::GreedyLargest).unwrap();
        let log: Vec<(usize, u64)> = l.consumed_log().iter().map(|c| (c.sat, c.bits)).collect();
        assert_eq!(log, vec![(1, 6), (2, 3)]);
        // feasibility check against exhaustive allocation of 9 bits over caps (3, 6, 5)
        let caps = [3u64, 6, 5];
        let feasible = (0..=caps[0]).any(|x| (0..=caps[1]).any(|y| x + y <= 9 && 9 - x - y <= caps[2]));
        assert!(feasible);
        assert_eq!(l.balance(1, 0), 2);
        assert_eq!(l.balance(2, 1), 6);
    }

    #[test]
    fn round_robin_spreads_evenly() {
        let mut l = ledger(&[(0, 0, 3), (0, 1, 3), (1, 0, 8), (1, 1, 6), (2, 0, 5), (2, 1, 9)]);
        l.consume_pair(0.0, 0, 1, 9, DebitStrategy::RoundRobin).unwrap();
        let log: Vec<(usize, u64)> = l.consumed_log().iter().map(|c| (c.sat, c.bits)).collect();
        assert_eq!(log, vec![(0, 3), (1, 3), (2, 3)]);
    }

    #[test]
    fn isl_budget_is_symmetric() {
        let mut l = KeyLedger::new();
        l.credit_isl(3, 1, 10);
        l.credit_isl(1, 3, 5);
        assert_eq!(l.isl_budget(3, 1), 15);
        l.debit_isl(1, 3, 4);
        assert_eq!(l.isl_budget(3, 1), 11);
        assert_eq!(l.total_isl_budget(), 11);
    }

    #[test]
    fn snapshot_csv() {
        let l = ledger(&[(1, 0, 7), (0, 1, 3)]);
        let mut buf = Vec::new();
        l.write_snapshot_csv(&mut buf, &["A".into(), "B".into()]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "sat,station,bits\n0,B,3\n1,A,7\n");
    }

    #[derive(Debug, Clone)]
    enum Op {
        Credit(usize, usize, u64),
        Consume(usize, usize, u64, bool),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (0..3usize, 0..4usize, 0..50u64).prop_map(|(s, g, b)| Op::Credit(s, g, b)),
            (0..4usize, 0..4usize, 0..40u64, any::<bool>()).prop_map(|(a, b, x, rr)| Op::Consume(a, b, x, rr)),
        ]
    }

    proptest! {
        #[test]
        fn conservation_and_atomicity(ops in prop::collection::vec(op(), 1..60)) {
            let mut l = KeyLedger::new();
            let mut credits = BTreeMap::<(usize, usize), u64>::new();
            let mut debits = BTreeMap::<(usize, usize), u64>::new();
            for o in ops {
                match o {
                    Op::Credit(s, g, b) => {
                        let cap_before: Vec<u64> = (0..4).flat_map(|a| (0..4).map(move |b| (a, b))).filter(|(a, b)| a != b).map(|(a, b)| l.pairwise_capacity(a, b)).collect();
                        l.credit(s, g, b);
                        *credits.entry((s, g)).or_default() += b;
                        let cap_after: Vec<u64> = (0..4).flat_map(|a| (0..4).map(move |b| (a, b))).filter(|(a, b)| a != b).map(|(a, b)| l.pairwise_capacity(a, b)).collect();
                        prop_assert!(cap_before.iter().zip(&cap_after).all(|(x, y)| y >= x));
                    }
                    Op::Consume(a, b, x, rr) => {
                        if a == b { continue; }
                        prop_assert_eq!(l.pairwise_capacity(a, b), l.pairwise_capacity(b, a));
                        let strategy = if rr { DebitStrategy::RoundRobin } else { DebitStrategy::GreedyLargest };
                        let before = l.clone();
                        let log_len = l.consumed_log().len();
                        match l.consume_pair(0.0, a, b, x, strategy) {
                            Ok(()) => {
                                let mut total = 0;
                                for c in &l.consumed_log()[log_len..] {
                                    *debits.entry((c.sat, a)).or_default() += c.bits;
                                    *debits.entry((c.sat, b)).or_default() += c.bits;
                                    total += c.bits;
                                }
                                prop_assert_eq!(total, x);
                            }
                            Err(_) => prop_assert_eq!(&l, &before),
                        }
                    }
                }
            }
            for s in 0..3 {
                for g in 0..4 {
                    let c = credits.get(&(s, g)).copied().unwrap_or(0);
                    let d = debits.get(&(s, g)).copied().unwrap_or(0);
                    prop_assert_eq!(l.balance(s, g), c - d);
                }
            }
        }
    }
}
