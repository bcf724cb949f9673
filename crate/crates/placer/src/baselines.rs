//! Non-learned placers used as comparison anchors: a uniform-random
//! placement, everything on one device, contiguous topological blocks (a
//! stand-in for hand placement of layer ranges), a balanced min-cut
//! partitioner, and a hill-climbing local search on simulated step time.
//!
//! Every placer respects colocation groups by deciding devices per group
//! and copying the choice to all members.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::Graph;
use crate::sim::{colocation_ok, simulate, DeviceTopology, Placement};
use crate::{Error, Result};

/// Compute-balance slack allowed by `min_cut` refinement moves.
pub const BALANCE_TOLERANCE: f64 = 0.10;
/// Boundary-refinement sweeps run by `min_cut` before giving up.
pub const REFINE_PASSES: usize = 10;

/// A placer selection with its parameters, as accepted on the command line
/// and in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum PlacerSpec {
    Random { seed: u64 },
    SingleDevice { device: usize },
    TopoBlocks,
    MinCut { seed: u64 },
    /// Hill-climbing from a `topo_blocks` start; `budget` caps the number
    /// of simulator evaluations spent on candidate moves.
    LocalSearch { budget: usize },
}

/// Runs the selected placer.
pub fn run_placer(spec: &PlacerSpec, g: &Graph, topo: &DeviceTopology) -> Result<Placement> {
    match *spec {
        PlacerSpec::Random { seed } => Ok(random_placement(g, topo, seed)),
        PlacerSpec::SingleDevice { device } => single_device_placement(g, topo, device),
        PlacerSpec::TopoBlocks => topo_blocks(g, topo),
        PlacerSpec::MinCut { seed } => Ok(min_cut(g, topo, seed)),
        PlacerSpec::LocalSearch { budget } => {
            let init = topo_blocks(g, topo)?;
            local_search(g, topo, &init, budget)
        }
    }
}

/// Colocation units in ascending leader order: grouped nodes appear as one
/// unit, ungrouped nodes as singletons.
fn units(g: &Graph) -> Vec<Vec<usize>> {
    let groups = g.colocation_groups();
    let mut by_leader: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (_, members) in groups {
        by_leader.insert(members[0], members);
    }
    let leader = g.group_leader();
    for v in 0..g.len() {
        if leader[v] == v {
            by_leader.entry(v).or_insert_with(|| vec![v]);
        }
    }
    by_leader.into_values().collect()
}

/// Independent uniform device per colocation unit.
pub fn random_placement(g: &Graph, topo: &DeviceTopology, seed: u64) -> Placement {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = topo.num_devices();
    let mut devs = vec![0usize; g.len()];
    for unit in units(g) {
        let dev = rng.random_range(0..d);
        for v in unit {
            devs[v] = dev;
        }
    }
    Placement(devs)
}

/// Everything on the one named device.
pub fn single_device_placement(
    g: &Graph,
    topo: &DeviceTopology,
    device: usize,
) -> Result<Placement> {
    if device >= topo.num_devices() {
        return Err(Error::Contract(format!(
            "device {device} out of range for {} devices",
            topo.num_devices()
        )));
    }
    Ok(Placement::single_device(g.len(), device))
}

/// Topological order cut into `d` contiguous blocks of near-equal total
/// compute cost, block `i` on device `i`; colocated members then follow
/// their group leader. The greedy prefix cut closes block `i` once the
/// cumulative cost reaches `(i + 1) / d` of the total, so each block's sum
/// is within one op's cost of the ideal share.
pub fn topo_blocks(g: &Graph, topo: &DeviceTopology) -> Result<Placement> {
    let order = g.topo_order()?;
    let d = topo.num_devices();
    let total: f64 = g.nodes().iter().map(|n| n.compute_cost).sum();
    let mut devs = vec![0usize; g.len()];
    let mut block = 0usize;
    let mut acc = 0.0f64;
    for v in order {
        devs[v] = block;
        acc += g.node(v).compute_cost;
        if block + 1 < d && acc >= total * (block + 1) as f64 / d as f64 {
            block += 1;
        }
    }
    let leader = g.group_leader();
    for v in 0..g.len() {
        devs[v] = devs[leader[v]];
    }
    Ok(Placement(devs))
}

/// Total bytes crossing device boundaries under `p`, the objective
/// `min_cut` refines.
pub fn cut_bytes(g: &Graph, p: &Placement) -> u64 {
    g.edges()
        .iter()
        .filter(|&&(u, v)| p.device(u) != p.device(v))
        .map(|&(u, _)| g.node(u).output_bytes)
        .sum()
}

/// Balanced partition minimizing cross-device bytes: parts are grown by
/// breadth-first search to near-equal compute cost from seeded start
/// units, then boundary units move to another part whenever that strictly
/// reduces cut bytes without leaving the balance tolerance. Runs
/// [`REFINE_PASSES`] sweeps or stops at a fixed point.
pub fn min_cut(g: &Graph, topo: &DeviceTopology, seed: u64) -> Placement {
    let d = topo.num_devices();
    let n = g.len();
    if d == 1 || n == 0 {
        return Placement(vec![0; n]);
    }
    let units = units(g);
    let m = units.len();
    let mut unit_of = vec![0usize; n];
    for (i, unit) in units.iter().enumerate() {
        for &v in unit {
            unit_of[v] = i;
        }
    }
    let cost: Vec<f64> = units
        .iter()
        .map(|unit| unit.iter().map(|&v| g.node(v).compute_cost).sum())
        .collect();
    // symmetric unit adjacency weighted by bytes moved if the pair splits
    let mut weight: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    for &(u, v) in g.edges() {
        let (a, b) = (unit_of[u], unit_of[v]);
        if a != b {
            let key = (a.min(b), a.max(b));
            *weight.entry(key).or_default() += g.node(u).output_bytes;
        }
    }
    let mut adj: Vec<Vec<(usize, u64)>> = vec![Vec::new(); m];
    for (&(a, b), &w) in &weight {
        adj[a].push((b, w));
        adj[b].push((a, w));
    }

    let total: f64 = cost.iter().sum();
    let share = total / d as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut part_of = vec![usize::MAX; m];
    let mut sums = vec![0.0f64; d];
    let mut unassigned: BTreeSet<usize> = (0..m).collect();
    for part in 0..d {
        if unassigned.is_empty() {
            break;
        }
        let pick = rng.random_range(0..unassigned.len());
        let start = *unassigned.iter().nth(pick).unwrap();
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            if !unassigned.remove(&u) {
                continue;
            }
            part_of[u] = part;
            sums[part] += cost[u];
            for &(w, _) in &adj[u] {
                if unassigned.contains(&w) {
                    queue.push_back(w);
                }
            }
            if part + 1 < d && sums[part] >= share {
                break;
            }
        }
    }
    // disconnected leftovers go to whichever part is lightest
    while let Some(&u) = unassigned.iter().next() {
        unassigned.remove(&u);
        let part = (0..d)
            .min_by_key(|&p| (sums[p].to_bits(), p))
            .expect("at least one device");
        part_of[u] = part;
        sums[part] += cost[u];
    }

    let lo = share * (1.0 - BALANCE_TOLERANCE);
    let hi = share * (1.0 + BALANCE_TOLERANCE);
    for _ in 0..REFINE_PASSES {
        let mut moved = false;
        for u in 0..m {
            let from = part_of[u];
            let mut best: Option<(i64, usize)> = None;
            for to in 0..d {
                if to == from || sums[to] + cost[u] > hi || sums[from] - cost[u] < lo {
                    continue;
                }
                let delta: i64 = adj[u]
                    .iter()
                    .map(|&(w, bytes)| {
                        let b = bytes as i64;
                        (if part_of[w] != to { b } else { 0 })
                            - (if part_of[w] != from { b } else { 0 })
                    })
                    .sum();
                if delta < 0 && best.is_none_or(|cur| (delta, to) < cur) {
                    best = Some((delta, to));
                }
            }
            if let Some((_, to)) = best {
                sums[from] -= cost[u];
                sums[to] += cost[u];
                part_of[u] = to;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }

    let mut devs = vec![0usize; n];
    for (i, unit) in units.iter().enumerate() {
        for &v in unit {
            devs[v] = part_of[i];
        }
    }
    Placement(devs)
}

/// Hill-climbing over single-unit device moves: each sweep first
/// considers collapsing everything onto one device (single moves cannot
/// merge two communication-bound clusters, so without this escape the
/// climb stalls on transfer-dominated instances), then tries every
/// colocation unit on every other device, taking the best strict
/// makespan improvement that does not lose validity. Stops at a local
/// optimum or after `budget` simulator evaluations. The returned
/// placement's makespan never exceeds the initial one.
pub fn local_search(
    g: &Graph,
    topo: &DeviceTopology,
    init: &Placement,
    budget: usize,
) -> Result<Placement> {
    let d = topo.num_devices();
    if init.0.len() != g.len() {
        return Err(Error::Contract(format!(
            "initial placement covers {} nodes, graph has {}",
            init.0.len(),
            g.len()
        )));
    }
    if let Some(&dev) = init.0.iter().find(|&&dev| dev >= d) {
        return Err(Error::Contract(format!(
            "initial placement uses device {dev}, topology has {d}"
        )));
    }
    if !colocation_ok(g, init) {
        return Err(Error::Contract(
            "initial placement splits a colocation group".into(),
        ));
    }

    let units = units(g);
    let mut current = init.clone();
    let mut report = simulate(g, &current, topo)?;
    let mut evals = 0usize;
    loop {
        let mut improved = false;
        let mut collapse_best: Option<(u64, usize)> = None;
        for dev in 0..d {
            if current.0.iter().all(|&x| x == dev) {
                continue;
            }
            if evals >= budget {
                return Ok(current);
            }
            let cand = Placement::single_device(g.len(), dev);
            let r = simulate(g, &cand, topo)?;
            evals += 1;
            if r.makespan < report.makespan && r.valid >= report.valid {
                let key = (r.makespan.to_bits(), dev);
                if collapse_best.is_none_or(|cur| key < cur) {
                    collapse_best = Some(key);
                }
            }
        }
        if let Some((_, dev)) = collapse_best {
            current = Placement::single_device(g.len(), dev);
            report = simulate(g, &current, topo)?;
            improved = true;
        }
        for unit in &units {
            let from = current.device(unit[0]);
            let mut best: Option<(u64, usize)> = None;
            for to in 0..d {
                if to == from {
                    continue;
                }
                if evals >= budget {
                    return Ok(current);
                }
                let mut cand = current.clone();
                for &v in unit {
                    cand.0[v] = to;
                }
                let r = simulate(g, &cand, topo)?;
                evals += 1;
                if r.makespan < report.makespan && r.valid >= report.valid {
                    // (makespan bits, device) keeps the lowest device
                    // among equally good moves
                    let key = (r.makespan.to_bits(), to);
                    if best.is_none_or(|cur| key < cur) {
                        best = Some(key);
                    }
                }
            }
            if let Some((_, to)) = best {
                for &v in unit {
                    current.0[v] = to;
                }
                report = simulate(g, &current, topo)?;
                improved = true;
            }
        }
        if !improved {
            return Ok(current);
        }
    }
}
