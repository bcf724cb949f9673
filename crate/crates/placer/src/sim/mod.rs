//! Deterministic step-time simulator.
//!
//! Scores a (graph, placement, topology) triple with list scheduling:
//! each device runs one op at a time, picking the ready op with the smallest
//! (ready time, node id); cross-device edges occupy a serialized per
//! ordered-device-pair channel that overlaps with compute. Peak memory
//! comes from liveness intervals: an output lives on its producer's device
//! from the producer's start until its last consumer finishes, cross-device
//! consumers hold an extra copy from transfer arrival until they finish, and
//! each op's `memory_bytes` is resident for the whole step.
//!
//! Identical inputs produce bit-identical reports. The naive reference
//! implementation in [`oracle`] recomputes the same semantics independently
//! and is held to exact equality in tests.

pub mod oracle;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Device pool with per-device speed and memory plus pairwise link costs.
///
/// `speed[d]` multiplies `compute_cost` (lower is faster). Bandwidth and
/// latency are indexed `[src][dst]`; diagonal entries are ignored because
/// same-device edges are free.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceTopology {
    num_devices: usize,
    mem_capacity: Vec<u64>,
    speed: Vec<f64>,
    bandwidth: Vec<Vec<f64>>,
    latency: Vec<Vec<f64>>,
}

pub const TOPOLOGY_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TopologyFile {
    version: u32,
    num_devices: usize,
    mem_capacity: Vec<u64>,
    speed: Vec<f64>,
    bandwidth: Vec<Vec<f64>>,
    latency: Vec<Vec<f64>>,
}

impl DeviceTopology {
    pub fn new(
        mem_capacity: Vec<u64>,
        speed: Vec<f64>,
        bandwidth: Vec<Vec<f64>>,
        latency: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let d = speed.len();
        if d == 0 {
            return Err(Error::Contract("topology needs at least one device".into()));
        }
        if mem_capacity.len() != d
            || bandwidth.len() != d
            || latency.len() != d
            || bandwidth.iter().any(|r| r.len() != d)
            || latency.iter().any(|r| r.len() != d)
        {
            return Err(Error::Contract(format!(
                "topology arrays must all be sized for {d} devices"
            )));
        }
        if speed.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Contract("device speed must be positive and finite".into()));
        }
        for a in 0..d {
            for b in 0..d {
                if a == b {
                    continue;
                }
                let bw = bandwidth[a][b];
                if !(bw > 0.0 && bw.is_finite()) {
                    return Err(Error::Contract(format!(
                        "bandwidth[{a}][{b}] must be positive and finite"
                    )));
                }
                if bandwidth[a][b] != bandwidth[b][a] {
                    return Err(Error::Contract(format!(
                        "bandwidth must be symmetric; [{a}][{b}] != [{b}][{a}]"
                    )));
                }
                let lat = latency[a][b];
                if !(lat >= 0.0 && lat.is_finite()) {
                    return Err(Error::Contract(format!(
                        "latency[{a}][{b}] must be nonnegative and finite"
                    )));
                }
            }
        }
        Ok(DeviceTopology { num_devices: d, mem_capacity, speed, bandwidth, latency })
    }

    /// All devices identical, with one bandwidth and latency for every link.
    pub fn homogeneous(
        num_devices: usize,
        mem_capacity: u64,
        speed: f64,
        bandwidth: f64,
        latency: f64,
    ) -> Result<Self> {
        Self::new(
            vec![mem_capacity; num_devices],
            vec![speed; num_devices],
            vec![vec![bandwidth; num_devices]; num_devices],
            vec![vec![latency; num_devices]; num_devices],
        )
    }

    pub fn num_devices(&self) -> usize {
        self.num_devices
    }

    pub fn mem_capacity(&self) -> &[u64] {
        &self.mem_capacity
    }

    pub fn speed(&self) -> &[f64] {
        &self.speed
    }

    pub fn bandwidth(&self) -> &[Vec<f64>] {
        &self.bandwidth
    }

    pub fn latency(&self) -> &[Vec<f64>] {
        &self.latency
    }

    /// Transfer duration for `bytes` across the `src -> dst` link.
    pub fn transfer_time(&self, src: usize, dst: usize, bytes: u64) -> f64 {
        if src == dst {
            0.0
        } else {
            bytes as f64 / self.bandwidth[src][dst] + self.latency[src][dst]
        }
    }

    pub fn to_json(&self) -> String {
        let file = TopologyFile {
            version: TOPOLOGY_SCHEMA_VERSION,
            num_devices: self.num_devices,
            mem_capacity: self.mem_capacity.clone(),
            speed: self.speed.clone(),
            bandwidth: self.bandwidth.clone(),
            latency: self.latency.clone(),
        };
        serde_json::to_string_pretty(&file).expect("topology serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TopologyFile = serde_json::from_str(text).map_err(|e| {
            Error::Parse(format!("topology JSON at line {} column {}: {e}", e.line(), e.column()))
        })?;
        if file.version != TOPOLOGY_SCHEMA_VERSION {
            return Err(Error::Parse(format!(
                "unsupported topology schema version {} (expected {TOPOLOGY_SCHEMA_VERSION})",
                file.version
            )));
        }
        if file.num_devices != file.speed.len() {
            return Err(Error::Parse(format!(
                "num_devices {} does not match speed array length {}",
                file.num_devices,
                file.speed.len()
            )));
        }
        Self::new(file.mem_capacity, file.speed, file.bandwidth, file.latency)
    }
}

/// Device assignment per node, indexed by node id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Placement(pub Vec<usize>);

impl Placement {
    pub fn single_device(n: usize, dev: usize) -> Self {
        Placement(vec![dev; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn device(&self, v: usize) -> usize {
        self.0[v]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    Colocation,
    OutOfMemory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub valid: bool,
    pub violation: Option<Violation>,
    pub makespan: f64,
    pub per_device_busy: Vec<f64>,
    pub per_device_peak_mem: Vec<u64>,
    pub cross_device_bytes: u64,
}

impl SimReport {
    fn invalid(violation: Violation, num_devices: usize) -> Self {
        SimReport {
            valid: false,
            violation: Some(violation),
            makespan: 0.0,
            per_device_busy: vec![0.0; num_devices],
            per_device_peak_mem: vec![0; num_devices],
            cross_device_bytes: 0,
        }
    }
}

fn check_inputs(g: &Graph, p: &Placement, topo: &DeviceTopology) -> Result<()> {
    if p.len() != g.len() {
        return Err(Error::Contract(format!(
            "placement length {} != node count {}",
            p.len(),
            g.len()
        )));
    }
    if let Some(v) = p.0.iter().position(|&dev| dev >= topo.num_devices) {
        return Err(Error::Contract(format!(
            "node {v} placed on device {} but topology has {}",
            p.0[v], topo.num_devices
        )));
    }
    Ok(())
}

/// True when every colocation group sits on a single device.
pub fn colocation_ok(g: &Graph, p: &Placement) -> bool {
    g.colocation_groups()
        .values()
        .all(|members| members.iter().all(|&m| p.device(m) == p.device(members[0])))
}

struct Channel {
    free: f64,
    // (ready time bits, producer, consumer): the serialization order
    pending: BTreeSet<(u64, usize, usize)>,
}

/// Simulate one training step. Colocation and memory problems are verdicts
/// in the report; malformed inputs are errors.
pub fn simulate(g: &Graph, p: &Placement, topo: &DeviceTopology) -> Result<SimReport> {
    check_inputs(g, p, topo)?;
    let d = topo.num_devices;
    if !colocation_ok(g, p) {
        return Ok(SimReport::invalid(Violation::Colocation, d));
    }

    let n = g.len();
    let durations: Vec<f64> =
        (0..n).map(|v| g.node(v).compute_cost * topo.speed[p.device(v)]).collect();

    let mut remaining: Vec<usize> = (0..n).map(|v| g.preds(v).len()).collect();
    let mut ready_time = vec![0.0f64; n];
    let mut start = vec![0.0f64; n];
    let mut finish = vec![f64::NAN; n];
    let mut done = vec![false; n];
    let mut queues: Vec<BTreeSet<(u64, usize)>> = vec![BTreeSet::new(); d];
    let mut device_free = vec![0.0f64; d];
    let mut channels: BTreeMap<(usize, usize), Channel> = BTreeMap::new();
    let mut cross_arrival: HashMap<(usize, usize), f64> = HashMap::new();
    // completion batches keyed by time bits (nonnegative doubles sort by bits)
    let mut completions: BTreeMap<u64, (Vec<usize>, Vec<(usize, usize, f64)>)> = BTreeMap::new();
    let mut unscheduled = n;

    for v in 0..n {
        if remaining[v] == 0 {
            queues[p.device(v)].insert((0.0f64.to_bits(), v));
        }
    }

    let mut t = 0.0f64;
    loop {
        // fixed point at time t: drain completions, pump channels, dispatch
        loop {
            let mut progress = false;

            if let Some((ops, xfers)) = completions.remove(&t.to_bits()) {
                progress = true;
                for u in ops {
                    done[u] = true;
                    for &v in g.succs(u) {
                        if p.device(u) == p.device(v) {
                            resolve_arrival(
                                v, finish[u], p, &mut remaining, &mut ready_time, &mut queues,
                            );
                        } else {
                            let key = (p.device(u), p.device(v));
                            channels
                                .entry(key)
                                .or_insert_with(|| Channel { free: 0.0, pending: BTreeSet::new() })
                                .pending
                                .insert((finish[u].to_bits(), u, v));
                        }
                    }
                }
                for (u, v, arrival) in xfers {
                    cross_arrival.insert((u, v), arrival);
                    resolve_arrival(v, arrival, p, &mut remaining, &mut ready_time, &mut queues);
                }
            }

            for (&(a, b), ch) in channels.iter_mut() {
                if ch.free <= t {
                    if let Some(&(rb, u, v)) = ch.pending.iter().next() {
                        ch.pending.remove(&(rb, u, v));
                        let ready = f64::from_bits(rb);
                        let xfer_start = ch.free.max(ready);
                        let end = xfer_start + topo.transfer_time(a, b, g.node(u).output_bytes);
                        ch.free = end;
                        if end == t {
                            // an instantaneous transfer delivers now, so the
                            // consumer competes for its device in this pass
                            cross_arrival.insert((u, v), end);
                            resolve_arrival(
                                v, end, p, &mut remaining, &mut ready_time, &mut queues,
                            );
                        } else {
                            completions.entry(end.to_bits()).or_default().1.push((u, v, end));
                        }
                        progress = true;
                    }
                }
            }

            for dev in 0..d {
                if device_free[dev] <= t {
                    if let Some(&(rb, v)) = queues[dev].iter().next() {
                        queues[dev].remove(&(rb, v));
                        let s = device_free[dev].max(f64::from_bits(rb));
                        let f = s + durations[v];
                        start[v] = s;
                        finish[v] = f;
                        device_free[dev] = f;
                        completions.entry(f.to_bits()).or_default().0.push(v);
                        unscheduled -= 1;
                        progress = true;
                    }
                }
            }

            if !progress {
                break;
            }
        }
        match completions.first_key_value() {
            Some((&tb, _)) => t = f64::from_bits(tb),
            None => break,
        }
    }

    if unscheduled > 0 || done.iter().any(|&x| !x) {
        return Err(Error::Cycle(format!(
            "graph {} could not be fully scheduled; it contains a cycle",
            g.name()
        )));
    }

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
    let per_device_busy = busy_times(d, &durations, &start, |v| p.device(v));

    let per_device_peak_mem = peak_memory(g, p, d, &start, &finish, &cross_arrival);
    let oom = per_device_peak_mem
        .iter()
        .zip(&topo.mem_capacity)
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

/// Per-device busy time, summed in execution order (ascending start, then
/// id). Execution-order summation guarantees `makespan >= max(busy)` holds
/// exactly: each finish is at least the running sum of durations so far.
pub(crate) fn busy_times(
    d: usize,
    durations: &[f64],
    start: &[f64],
    device_of: impl Fn(usize) -> usize,
) -> Vec<f64> {
    let mut order: Vec<usize> = (0..durations.len()).collect();
    order.sort_unstable_by_key(|&v| (start[v].to_bits(), v));
    let mut busy = vec![0.0f64; d];
    for v in order {
        busy[device_of(v)] += durations[v];
    }
    busy
}

fn resolve_arrival(
    v: usize,
    arrival: f64,
    p: &Placement,
    remaining: &mut [usize],
    ready_time: &mut [f64],
    queues: &mut [BTreeSet<(u64, usize)>],
) {
    ready_time[v] = ready_time[v].max(arrival);
    remaining[v] -= 1;
    if remaining[v] == 0 {
        queues[p.device(v)].insert((ready_time[v].to_bits(), v));
    }
}

/// Liveness-interval peak per device. Intervals are half-open `[birth,
/// death)`: at equal times, deaths are applied before births, and empty
/// intervals contribute nothing.
fn peak_memory(
    g: &Graph,
    p: &Placement,
    d: usize,
    start: &[f64],
    finish: &[f64],
    cross_arrival: &HashMap<(usize, usize), f64>,
) -> Vec<u64> {
    let n = g.len();
    let mut baseline = vec![0u64; d];
    // (time bits, kind 0 = death | 1 = birth, bytes)
    let mut events: Vec<Vec<(u64, u8, u64)>> = vec![Vec::new(); d];
    for u in 0..n {
        baseline[p.device(u)] += g.node(u).memory_bytes;
        let mut death = finish[u];
        for &v in g.succs(u) {
            death = death.max(finish[v]);
        }
        push_interval(&mut events[p.device(u)], start[u], death, g.node(u).output_bytes);
        for &pr in g.preds(u) {
            if p.device(pr) != p.device(u) {
                let arrival = cross_arrival[&(pr, u)];
                push_interval(&mut events[p.device(u)], arrival, finish[u], g.node(pr).output_bytes);
            }
        }
    }
    (0..d)
        .map(|dev| {
            let evs = &mut events[dev];
            evs.sort_unstable();
            let mut live = 0u64;
            let mut peak = 0u64;
            for &(_, kind, bytes) in evs.iter() {
                if kind == 0 {
                    live -= bytes;
                } else {
                    live += bytes;
                    peak = peak.max(live);
                }
            }
            baseline[dev] + peak
        })
        .collect()
}

fn push_interval(events: &mut Vec<(u64, u8, u64)>, birth: f64, death: f64, bytes: u64) {
    if bytes == 0 || !(birth < death) {
        return;
    }
    events.push((birth.to_bits(), 1, bytes));
    events.push((death.to_bits(), 0, bytes));
}

/// Longest path by `compute_cost x fastest speed`, ignoring transfers.
/// A lower bound on the makespan of every valid placement.
pub fn critical_path_bound(g: &Graph, topo: &DeviceTopology) -> Result<f64> {
    let min_speed = topo.speed.iter().cloned().fold(f64::INFINITY, f64::min);
    let order = g.topo_order()?;
    let mut lp = vec![0.0f64; g.len()];
    let mut best = 0.0f64;
    for &v in &order {
        let mut inbound = 0.0f64;
        for &u in g.preds(v) {
            inbound = inbound.max(lp[u]);
        }
        lp[v] = inbound + g.node(v).compute_cost * min_speed;
        best = best.max(lp[v]);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::OpNode;

    fn node(id: usize, cost: f64, out_bytes: u64, mem_bytes: u64) -> OpNode {
        OpNode {
            id,
            op_type: "op".into(),
            compute_cost: cost,
            output_bytes: out_bytes,
            memory_bytes: mem_bytes,
            colocation_group: None,
        }
    }

    fn big_topo(d: usize) -> DeviceTopology {
        DeviceTopology::homogeneous(d, u64::MAX, 1.0, 1.0, 0.0).unwrap()
    }

    #[test]
    fn chain_on_one_device_sums_costs() {
        let g = Graph::new(
            "chain",
            vec![node(0, 1.0, 0, 0), node(1, 2.0, 0, 0), node(2, 3.0, 0, 0)],
            vec![(0, 1), (1, 2)],
        );
        let r = simulate(&g, &Placement::single_device(3, 0), &big_topo(1)).unwrap();
        assert!(r.valid);
        assert_eq!(r.makespan, 6.0);
        assert_eq!(r.per_device_busy, vec![6.0]);
        assert_eq!(r.cross_device_bytes, 0);
    }

    #[test]
    fn independent_ops_overlap_perfectly() {
        let g = Graph::new("par", vec![node(0, 5.0, 0, 0), node(1, 5.0, 0, 0)], vec![]);
        let r = simulate(&g, &Placement(vec![0, 1]), &big_topo(2)).unwrap();
        assert_eq!(r.makespan, 5.0);
        assert_eq!(r.per_device_busy, vec![5.0, 5.0]);
    }

    #[test]
    fn diamond_with_transfers_traces_to_seven() {
        // A->{B,C}->D, unit costs, transfer time 2 each way (2 bytes at
        // bandwidth 1, latency 0). A, B, D on device 0; C on device 1.
        // A:[0,1], B:[1,2], A->C arrives 3, C:[3,4], C->D arrives 6, D:[6,7].
        let g = Graph::new(
            "diamond",
            (0..4).map(|i| node(i, 1.0, 2, 0)).collect(),
            vec![(0, 1), (0, 2), (1, 3), (2, 3)],
        );
        let topo = DeviceTopology::homogeneous(2, u64::MAX, 1.0, 1.0, 0.0).unwrap();
        let r = simulate(&g, &Placement(vec![0, 0, 1, 0]), &topo).unwrap();
        assert!(r.valid);
        assert_eq!(r.makespan, 7.0);
        assert_eq!(r.per_device_busy, vec![3.0, 1.0]);
        // cross edges: A->C and C->D, 2 bytes each
        assert_eq!(r.cross_device_bytes, 4);
    }

    #[test]
    fn latency_occupies_the_channel() {
        // one producer, two cross-device consumers: transfers serialize on
        // the (0,1) channel including latency: [1,3] then [3,5]
        let g = Graph::new(
            "fanout",
            vec![node(0, 1.0, 1, 0), node(1, 1.0, 0, 0), node(2, 1.0, 0, 0)],
            vec![(0, 1), (0, 2)],
        );
        let topo = DeviceTopology::homogeneous(2, u64::MAX, 1.0, 1.0, 1.0).unwrap();
        let r = simulate(&g, &Placement(vec![0, 1, 1]), &topo).unwrap();
        // node 1 starts at 3, node 2 waits for its own copy arriving at 5
        assert_eq!(r.makespan, 6.0);
    }

    #[test]
    fn colocation_violation_is_a_verdict() {
        let mut nodes = vec![node(0, 1.0, 0, 0), node(1, 1.0, 0, 0)];
        nodes[0].colocation_group = Some("g".into());
        nodes[1].colocation_group = Some("g".into());
        let g = Graph::new("co", nodes, vec![]);
        let r = simulate(&g, &Placement(vec![0, 1]), &big_topo(2)).unwrap();
        assert!(!r.valid);
        assert_eq!(r.violation, Some(Violation::Colocation));
        let ok = simulate(&g, &Placement(vec![1, 1]), &big_topo(2)).unwrap();
        assert!(ok.valid);
    }

    #[test]
    fn out_of_memory_is_a_verdict_with_real_metrics() {
        let g = Graph::new("m", vec![node(0, 1.0, 8, 100)], vec![]);
        let topo = DeviceTopology::homogeneous(1, 50, 1.0, 1.0, 0.0).unwrap();
        let r = simulate(&g, &Placement(vec![0]), &topo).unwrap();
        assert!(!r.valid);
        assert_eq!(r.violation, Some(Violation::OutOfMemory));
        assert_eq!(r.makespan, 1.0, "metrics still reported");
        assert_eq!(r.per_device_peak_mem, vec![108]);
    }

    #[test]
    fn malformed_inputs_are_contract_errors() {
        let g = Graph::new("g", vec![node(0, 1.0, 0, 0)], vec![]);
        assert!(matches!(
            simulate(&g, &Placement(vec![0, 0]), &big_topo(1)),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            simulate(&g, &Placement(vec![5]), &big_topo(2)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn memory_intervals_same_device() {
        // A(out 10, mem 100) -> B(out 20, mem 50) on one device:
        // baseline 150, A's output [0, 2), B's output [1, 2): peak 150+30
        let g = Graph::new(
            "mem",
            vec![node(0, 1.0, 10, 100), node(1, 1.0, 20, 50)],
            vec![(0, 1)],
        );
        let r = simulate(&g, &Placement::single_device(2, 0), &big_topo(1)).unwrap();
        assert_eq!(r.per_device_peak_mem, vec![180]);
    }

    #[test]
    fn memory_intervals_cross_device_copy() {
        // A on dev0 (out 10, mem 100), B on dev1 (out 20, mem 50),
        // transfer duration 1 (10 bytes at bandwidth 10). A:[0,1], arrival 2,
        // B:[2,3]. dev0 holds A's output until B finishes: peak 110.
        // dev1 holds the copy [2,3) plus B's output [2,3): peak 50+30.
        let g = Graph::new(
            "memx",
            vec![node(0, 1.0, 10, 100), node(1, 1.0, 20, 50)],
            vec![(0, 1)],
        );
        let topo = DeviceTopology::homogeneous(2, u64::MAX, 1.0, 10.0, 0.0).unwrap();
        let r = simulate(&g, &Placement(vec![0, 1]), &topo).unwrap();
        assert_eq!(r.makespan, 3.0);
        assert_eq!(r.per_device_peak_mem, vec![110, 80]);
    }

    #[test]
    fn faster_device_scales_duration() {
        let g = Graph::new("s", vec![node(0, 4.0, 0, 0)], vec![]);
        let topo = DeviceTopology::new(
            vec![u64::MAX, u64::MAX],
            vec![1.0, 0.5],
            vec![vec![1.0, 1.0], vec![1.0, 1.0]],
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
        )
        .unwrap();
        assert_eq!(simulate(&g, &Placement(vec![0]), &topo).unwrap().makespan, 4.0);
        assert_eq!(simulate(&g, &Placement(vec![1]), &topo).unwrap().makespan, 2.0);
    }

    #[test]
    fn critical_path_examples() {
        let chain = Graph::new(
            "chain",
            vec![node(0, 1.0, 0, 0), node(1, 2.0, 0, 0), node(2, 3.0, 0, 0)],
            vec![(0, 1), (1, 2)],
        );
        assert_eq!(critical_path_bound(&chain, &big_topo(2)).unwrap(), 6.0);
        let diamond = Graph::new(
            "diamond",
            (0..4).map(|i| node(i, 1.0, 0, 0)).collect(),
            vec![(0, 1), (0, 2), (1, 3), (2, 3)],
        );
        assert_eq!(critical_path_bound(&diamond, &big_topo(2)).unwrap(), 3.0);
    }

    #[test]
    fn zero_cost_ops_complete() {
        let g = Graph::new(
            "zeros",
            vec![node(0, 0.0, 0, 0), node(1, 0.0, 0, 0), node(2, 1.0, 0, 0)],
            vec![(0, 1), (1, 2)],
        );
        let r = simulate(&g, &Placement::single_device(3, 0), &big_topo(1)).unwrap();
        assert_eq!(r.makespan, 1.0);
    }

    #[test]
    fn cyclic_graph_is_a_cycle_error() {
        let g = Graph::new(
            "cyc",
            vec![node(0, 1.0, 0, 0), node(1, 1.0, 0, 0)],
            vec![(0, 1), (1, 0)],
        );
        assert!(matches!(
            simulate(&g, &Placement::single_device(2, 0), &big_topo(1)),
            Err(Error::Cycle(_))
        ));
    }

    #[test]
    fn topology_validation() {
        assert!(DeviceTopology::new(vec![], vec![], vec![], vec![]).is_err());
        // asymmetric bandwidth
        let err = DeviceTopology::new(
            vec![1, 1],
            vec![1.0, 1.0],
            vec![vec![0.0, 2.0], vec![3.0, 0.0]],
            vec![vec![0.0; 2]; 2],
        );
        assert!(matches!(err, Err(Error::Contract(_))));
        // negative latency
        let err = DeviceTopology::new(
            vec![1, 1],
            vec![1.0, 1.0],
            vec![vec![0.0, 2.0], vec![2.0, 0.0]],
            vec![vec![0.0, -1.0], vec![-1.0, 0.0]],
        );
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn topology_json_roundtrip() {
        let topo = DeviceTopology::homogeneous(3, 1 << 30, 1.0, 1e6, 0.25).unwrap();
        let text = topo.to_json();
        let back = DeviceTopology::from_json(&text).unwrap();
        assert_eq!(back, topo);
        assert!(matches!(DeviceTopology::from_json("{"), Err(Error::Parse(_))));
        let bad_version = text.replace("\"version\": 1", "\"version\": 2");
        assert!(matches!(DeviceTopology::from_json(&bad_version), Err(Error::Parse(_))));
    }

    #[test]
    fn report_json_serializes_violation_tags() {
        let r = SimReport::invalid(Violation::OutOfMemory, 2);
        let text = serde_json::to_string(&r).unwrap();
        assert!(text.contains("out_of_memory"));
    }
}
