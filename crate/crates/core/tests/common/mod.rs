#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use qkdsat::key_network::KeyLedger;
use qkdsat::scenario::{load_scenario, Scenario};
use qkdsat::weather::CloudGrid;

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}

pub fn bundled(name: &str) -> Scenario {
    load_scenario(data_dir().join("scenarios").join(name)).expect("bundled scenario loads")
}

/// Bundled scenario with a shorter window and a uniform sky.
pub fn short_clear(name: &str, days: u32) -> Scenario {
    let mut s = bundled(name);
    s.file.simulation.duration_days = days;
    s.cloud = Arc::new(CloudGrid::uniform(0.0, 1.0).unwrap());
    s
}

/// Exact single-photon yield and error rate of a Poissonian source through a
/// channel of transmittance `eta`: `Y_n = Y0 + 1 - (1 - eta)^n`, so
/// `Y_1 = Y0 + eta`, and `e_1 Y_1 = Y0 / 2 + e_det eta`.
pub fn exact_single_photon(eta: f64, y0: f64, e_det: f64) -> (f64, f64) {
    let y1 = y0 + eta;
    (y1, (0.5 * y0 + e_det * eta) / y1)
}

/// Gain and QBER for intensity `mu`, summed photon-number by photon-number.
pub fn poisson_gain_qber(eta: f64, y0: f64, e_det: f64, mu: f64) -> (f64, f64) {
    let (mut q, mut eq) = (0.0, 0.0);
    let mut pn = (-mu).exp();
    for n in 0..200 {
        if n > 0 {
            pn *= mu / n as f64;
        }
        let transmit = 1.0 - (1.0 - eta).powi(n);
        q += pn * (y0 + transmit);
        eq += pn * (0.5 * y0 + e_det * transmit);
    }
    (q, eq / q)
}

fn allocations(caps: &[u64], budget: u64, current: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
    if current.len() == caps.len() {
        out.push(current.clone());
        return;
    }
    let used: u64 = current.iter().sum();
    for x in 0..=caps[current.len()].min(budget - used) {
        current.push(x);
        allocations(caps, budget, current, out);
        current.pop();
    }
}

/// Largest message `source` can send to each of `recipients`, by enumerating
/// every integer split of every satellite's source key and keeping the set of
/// reachable per-recipient totals (closed downwards).
pub fn brute_force_message_size(ledger: &KeyLedger, source: usize, recipients: &[usize]) -> u64 {
    let k = recipients.len();
    if k == 0 {
        return 0;
    }
    let sats: Vec<usize> = ledger.satellites().into_iter().collect();
    let bounds: Vec<usize> = recipients
        .iter()
        .map(|&b| {
            sats.iter()
                .map(|&s| ledger.balance(s, b).min(ledger.balance(s, source)))
                .sum::<u64>() as usize
                + 1
        })
        .collect();
    let cells: usize = bounds.iter().product();
    let index = |v: &[u64]| v.iter().zip(&bounds).fold(0usize, |acc, (&x, &b)| acc * b + x as usize);
    let coords = |mut i: usize| {
        let mut v = vec![0u64; k];
        for d in (0..k).rev() {
            v[d] = (i % bounds[d]) as u64;
            i /= bounds[d];
        }
        v
    };
    let is_maximal = |reach: &[bool], v: &[u64]| {
        (0..k).all(|d| {
            let mut w = v.to_vec();
            w[d] += 1;
            w[d] as usize >= bounds[d] || !reach[index(&w)]
        })
    };
    let mut reach = vec![false; cells];
    reach[0] = true;
    for &s in &sats {
        let caps: Vec<u64> = recipients.iter().map(|&b| ledger.balance(s, b)).collect();
        let mut splits = Vec::new();
        allocations(&caps, ledger.balance(s, source), &mut Vec::new(), &mut splits);
        let mut next = vec![false; cells];
        let frontier: Vec<usize> = (0..cells).filter(|&i| reach[i] && is_maximal(&reach, &coords(i))).collect();
        for i in frontier {
            let v = coords(i);
            for x in &splits {
                let w: Vec<u64> = v.iter().zip(x).zip(&bounds).map(|((a, b), &m)| (a + b).min(m as u64 - 1)).collect();
                next[index(&w)] = true;
            }
        }
        close_downwards(&mut next, &bounds);
        reach = next;
    }
    (0..cells)
        .filter(|&i| reach[i])
        .map(|i| coords(i).into_iter().min().unwrap())
        .max()
        .unwrap_or(0)
}

fn close_downwards(reach: &mut [bool], bounds: &[usize]) {
    let mut stride = 1;
    for &b in bounds.iter().rev() {
        for i in (0..reach.len()).rev() {
            if (i / stride) % b + 1 < b && reach[i + stride] {
                reach[i] = true;
            }
        }
        stride *= b;
    }
}
