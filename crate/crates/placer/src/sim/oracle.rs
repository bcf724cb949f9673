//! Naive reference scheduler for equivalence testing.
//!
//! Implements the exact semantics of [`super::simulate`] with none of its
//! incremental bookkeeping: at every candidate event time the whole state
//! (arrivals, channel queues, ready sets) is recomputed from scratch by
//! scanning all nodes and edges, and peak memory is found by sampling every
//! interval birth instead of sweeping. Deliberately quadratic; capped at 12
//! nodes so tests can enumerate placements exhaustively against it.

use std::collections::BTreeSet;

use super::{colocation_ok, DeviceTopology, Placement, SimReport, Violation};
use crate::error::{Error, Result};
use crate::graph::Graph;

const MAX_NODES: usize = 12;

pub fn oracle_simulate(g: &Graph, p: &Placement, topo: &DeviceTopology) -> Result<SimReport> {
    if g.len() > MAX_NODES {
        return Err(Error::Contract(format!(
            "oracle_simulate is capped at {MAX_NODES} nodes, got {}",
            g.len()
        )));
    }
    if p.len() != g.len() {
        return Err(Error::Contract(format!(
            "placement length {} != node count {}",
            p.len(),
            g.len()
        )));
    }
    let d = topo.num_devices();
    if let Some(v) = p.0.iter().position(|&dev| dev >= d) {
        return Err(Error::Contract(format!(
            "node {v} placed on device {} but topology has {d}",
            p.0[v]
        )));
    }
    if !colocation_ok(g, p) {
        return Ok(SimReport {
            valid: false,
            violation: Some(Violation::Colocation),
            makespan: 0.0,
            per_device_busy: vec![0.0; d],
            per_device_peak_mem: vec![0; d],
            cross_device_bytes: 0,
        });
    }

    let n = g.len();
    let mut op_start: Vec<Option<f64>> = vec![None; n];
    let mut op_finish: Vec<Option<f64>> = vec![None; n];
    // started transfers: (producer, consumer, start, end)
    let mut xfers: Vec<(usize, usize, f64, f64)> = Vec::new();
    let mut times: BTreeSet<u64> = BTreeSet::new();
    times.insert(0.0f64.to_bits());
    let mut visited: BTreeSet<u64> = BTreeSet::new();

    while let Some(tb) = times.pop_first() {
        if !visited.insert(tb) {
            continue;
        }
        let t = f64::from_bits(tb);
        // stabilize at t: keep rescanning until no action fires
        loop {
            let mut acted = false;

            // start one transfer per idle channel, smallest (ready, u, v)
            for a in 0..d {
                for b in 0..d {
                    if a == b {
                        continue;
                    }
                    let busy_until = xfers
                        .iter()
                        .filter(|&&(u, v, _, _)| (p.device(u), p.device(v)) == (a, b))
                        .map(|&(_, _, _, end)| end)
                        .fold(0.0f64, f64::max);
                    if busy_until > t {
                        continue;
                    }
                    let mut best: Option<(f64, usize, usize)> = None;
                    for &(u, v) in g.edges() {
                        if (p.device(u), p.device(v)) != (a, b) {
                            continue;
                        }
                        if xfers.iter().any(|&(xu, xv, _, _)| (xu, xv) == (u, v)) {
                            continue;
                        }
                        let Some(fu) = op_finish[u] else { continue };
                        if fu > t {
                            continue;
                        }
                        let cand = (fu, u, v);
                        if best.is_none_or(|cur| (cand.0.to_bits(), cand.1, cand.2)
                            < (cur.0.to_bits(), cur.1, cur.2))
                        {
                            best = Some(cand);
                        }
                    }
                    if let Some((ready, u, v)) = best {
                        let start = busy_until.max(ready);
                        // the transfer duration is one quantity; group it before
                        // adding to start so the sum tree matches the semantics
                        let end = start
                            + (g.node(u).output_bytes as f64 / topo.bandwidth()[a][b]
                                + topo.latency()[a][b]);
                        xfers.push((u, v, start, end));
                        times.insert(end.to_bits());
                        acted = true;
                    }
                }
            }

            // start one op per idle device, smallest (ready, id)
            for dev in 0..d {
                let busy_until = (0..n)
                    .filter(|&v| p.device(v) == dev && op_start[v].is_some())
                    .map(|v| op_finish[v].unwrap())
                    .fold(0.0f64, f64::max);
                if busy_until > t {
                    continue;
                }
                let mut best: Option<(f64, usize)> = None;
                for v in 0..n {
                    if p.device(v) != dev || op_start[v].is_some() {
                        continue;
                    }
                    let Some(ready) = ready_time(g, p, v, &op_finish, &xfers) else { continue };
                    if ready > t {
                        continue;
                    }
                    if best.is_none_or(|cur| (ready.to_bits(), v) < (cur.0.to_bits(), cur.1)) {
                        best = Some((ready, v));
                    }
                }
                if let Some((ready, v)) = best {
                    let start = busy_until.max(ready);
                    let finish = start + g.node(v).compute_cost * topo.speed()[p.device(v)];
                    op_start[v] = Some(start);
                    op_finish[v] = Some(finish);
                    times.insert(finish.to_bits());
                    acted = true;
                }
            }

            if !acted {
                break;
            }
        }
    }

    if op_finish.iter().any(Option::is_none) {
        return Err(Error::Cycle(format!(
            "graph {} could not be fully scheduled; it contains a cycle",
            g.name()
        )));
    }
    let start: Vec<f64> = op_start.iter().map(|s| s.unwrap()).collect();
    let finish: Vec<f64> = op_finish.iter().map(|f| f.unwrap()).collect();

    let mut makespan = 0.0f64;
    let mut cross_device_bytes = 0u64;
    for v in 0..n {
        makespan = makespan.max(finish[v]);
        for &u in g.preds(v) {
            if p.device(u) != p.device(v) {
                cross_device_bytes += g.node(u).output_bytes;
            }
        }
    }
    // busy time sums durations in execution order (start, then id)
    let mut exec_order: Vec<usize> = (0..n).collect();
    exec_order.sort_by(|&a, &b| (start[a].to_bits(), a).cmp(&(start[b].to_bits(), b)));
    let mut per_device_busy = vec![0.0f64; d];
    for v in exec_order {
        per_device_busy[p.device(v)] += g.node(v).compute_cost * topo.speed()[p.device(v)];
    }

    let per_device_peak_mem = naive_peaks(g, p, d, &start, &finish, &xfers);
    let oom = per_device_peak_mem
        .iter()
        .zip(topo.mem_capacity())
        .any(|(&peak, &cap)| peak > cap);

    Ok(SimReport {
        valid: !oom,
        violation: oom.then_some(Violation::OutOfMemory),
        makespan,
        per_device_busy,
        per_device_peak_mem,
        cross_device_bytes,
    })
}

/// Latest input arrival of `v`, or None while any input is still unknown.
fn ready_time(
    g: &Graph,
    p: &Placement,
    v: usize,
    op_finish: &[Option<f64>],
    xfers: &[(usize, usize, f64, f64)],
) -> Option<f64> {
    let mut ready = 0.0f64;
    for &u in g.preds(v) {
        let arrival = if p.device(u) == p.device(v) {
            op_finish[u]?
        } else {
            xfers
                .iter()
                .find(|&&(xu, xv, _, _)| (xu, xv) == (u, v))
                .map(|&(_, _, _, end)| end)?
        };
        ready = ready.max(arrival);
    }
    Some(ready)
}

/// Peak memory by brute force: evaluate the live set at every interval
/// birth. Intervals are half-open `[birth, death)`.
fn naive_peaks(
    g: &Graph,
    p: &Placement,
    d: usize,
    start: &[f64],
    finish: &[f64],
    xfers: &[(usize, usize, f64, f64)],
) -> Vec<u64> {
    let mut peaks = vec![0u64; d];
    for dev in 0..d {
        let mut intervals: Vec<(f64, f64, u64)> = Vec::new();
        let mut baseline = 0u64;
        for u in 0..g.len() {
            if p.device(u) == dev {
                baseline += g.node(u).memory_bytes;
                let mut death = finish[u];
                for &v in g.succs(u) {
                    death = death.max(finish[v]);
                }
                intervals.push((start[u], death, g.node(u).output_bytes));
            }
        }
        for &(u, v, _, end) in xfers {
            if p.device(v) == dev {
                intervals.push((end, finish[v], g.node(u).output_bytes));
            }
        }
        let mut peak = 0u64;
        for &(birth, _, _) in &intervals {
            let live: u64 = intervals
                .iter()
                .filter(|&&(b, e, bytes)| bytes > 0 && b <= birth && birth < e)
                .map(|&(_, _, bytes)| bytes)
                .sum();
            peak = peak.max(live);
        }
        peaks[dev] = baseline + peak;
    }
    peaks
}
