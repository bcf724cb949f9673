#![allow(dead_code)]
//! Shared fixtures for the integration suites: small hand-built graph
//! shapes, seeded random graphs, and device topologies.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use placer::graph::{Graph, OpNode};
use placer::sim::{DeviceTopology, Placement};

pub fn node(id: usize, cost: f64, out_bytes: u64, mem_bytes: u64, group: Option<&str>) -> OpNode {
    OpNode {
        id,
        op_type: "op".into(),
        compute_cost: cost,
        output_bytes: out_bytes,
        memory_bytes: mem_bytes,
        colocation_group: group.map(str::to_string),
    }
}

/// Small fixed shapes covering chains, fan-in/out, skips, and colocation.
pub fn shapes() -> Vec<Graph> {
    let mut out = Vec::new();
    out.push(Graph::new(
        "chain5",
        (0..5).map(|i| node(i, 0.5 + i as f64, 2, 10, None)).collect(),
        (1..5).map(|i| (i - 1, i)).collect(),
    ));
    out.push(Graph::new(
        "diamond4",
        (0..4).map(|i| node(i, 1.0, 2, 0, None)).collect(),
        vec![(0, 1), (0, 2), (1, 3), (2, 3)],
    ));
    out.push(Graph::new(
        "fanout5",
        (0..5).map(|i| node(i, 1.0 + 0.25 * i as f64, 3, 5, None)).collect(),
        (1..5).map(|v| (0, v)).collect(),
    ));
    out.push(Graph::new(
        "fanin5",
        (0..5).map(|i| node(i, 0.7, 4, 0, None)).collect(),
        (0..4).map(|u| (u, 4)).collect(),
    ));
    out.push(Graph::new(
        "two_chains6",
        (0..6).map(|i| node(i, 1.0 + (i % 3) as f64, 2, 8, None)).collect(),
        vec![(0, 1), (1, 2), (3, 4), (4, 5)],
    ));
    out.push(Graph::new(
        "skip6",
        (0..6).map(|i| node(i, 0.5, 6, 0, None)).collect(),
        vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 2), (1, 4), (2, 5)],
    ));
    out.push(Graph::new(
        "coloc4",
        vec![
            node(0, 1.0, 2, 4, Some("a")),
            node(1, 2.0, 2, 4, Some("b")),
            node(2, 0.5, 2, 4, Some("a")),
            node(3, 1.5, 2, 4, Some("b")),
        ],
        vec![(0, 1), (2, 3)],
    ));
    out.push(Graph::new(
        "zero_cost4",
        vec![
            node(0, 0.0, 1, 0, None),
            node(1, 0.0, 1, 0, None),
            node(2, 1.0, 0, 0, None),
            node(3, 0.0, 0, 0, None),
        ],
        vec![(0, 1), (1, 2), (1, 3)],
    ));
    out
}

/// Seeded DAG on `n` nodes with mixed costs, sizes, and occasional groups.
pub fn random_small_graph(seed: u64, n: usize) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let costs = [0.0, 0.3, 0.7, 1.0, 1.3, 2.5];
    let bytes = [0u64, 2, 7, 64];
    let mems = [0u64, 10, 100];
    let groups = [None, None, None, Some("g0"), Some("g1")];
    let nodes: Vec<OpNode> = (0..n)
        .map(|i| {
            node(
                i,
                costs[rng.random_range(0..costs.len())],
                bytes[rng.random_range(0..bytes.len())],
                mems[rng.random_range(0..mems.len())],
                groups[rng.random_range(0..groups.len())],
            )
        })
        .collect();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.random_range(0.0..1.0) < 0.35 {
                edges.push((u, v));
            }
        }
    }
    Graph::new(format!("rand{seed}"), nodes, edges)
}

/// Two-device topologies: uniform, heterogeneous, and memory-tight.
pub fn topologies() -> Vec<DeviceTopology> {
    vec![
        DeviceTopology::homogeneous(2, u64::MAX, 1.0, 1.0, 0.0).unwrap(),
        DeviceTopology::new(
            vec![u64::MAX, u64::MAX],
            vec![1.0, 0.5],
            vec![vec![1.0, 2.0], vec![2.0, 1.0]],
            vec![vec![0.0, 0.25], vec![0.25, 0.0]],
        )
        .unwrap(),
        // tight memory so out_of_memory verdicts get exercised too
        DeviceTopology::homogeneous(2, 120, 1.0, 4.0, 0.5).unwrap(),
    ]
}

/// Every placement of `n` nodes on `d` devices, in mixed-radix order.
pub fn all_placements(n: usize, d: usize) -> impl Iterator<Item = Placement> {
    (0..d.pow(n as u32)).map(move |mut code| {
        let mut devs = vec![0; n];
        for slot in devs.iter_mut() {
            *slot = code % d;
            code /= d;
        }
        Placement(devs)
    })
}
