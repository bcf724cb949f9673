//! The fast simulator is held to exact, field-for-field agreement with the
//! naive reference scheduler on exhaustively enumerated small instances,
//! plus randomized structural properties of the schedule itself.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use placer::graph::generate::{generate, FamilySpec};
use placer::graph::{Graph, OpNode};
use placer::sim::oracle::oracle_simulate;
use placer::sim::{critical_path_bound, simulate, DeviceTopology, Placement};

mod common;
use common::{all_placements, node, random_small_graph, shapes, topologies};

#[test]
fn exhaustive_agreement_on_fixed_shapes_two_devices() {
    let mut checked = 0usize;
    for g in shapes() {
        for topo in topologies() {
            for p in all_placements(g.len(), 2) {
                let fast = simulate(&g, &p, &topo).unwrap();
                let slow = oracle_simulate(&g, &p, &topo).unwrap();
                assert_eq!(fast, slow, "graph {} placement {:?}", g.name(), p);
                checked += 1;
            }
        }
    }
    assert!(checked > 500, "exhaustive sweep actually ran ({checked} cases)");
}

#[test]
fn exhaustive_agreement_on_three_devices() {
    let topo = DeviceTopology::new(
        vec![u64::MAX, u64::MAX, 200],
        vec![1.0, 0.5, 2.0],
        vec![
            vec![1.0, 2.0, 0.5],
            vec![2.0, 1.0, 1.5],
            vec![0.5, 1.5, 1.0],
        ],
        vec![
            vec![0.0, 0.1, 0.3],
            vec![0.1, 0.0, 0.2],
            vec![0.3, 0.2, 0.0],
        ],
    )
    .unwrap();
    for g in [
        shapes().remove(1),
        random_small_graph(11, 5),
        random_small_graph(12, 5),
    ] {
        for p in all_placements(g.len(), 3) {
            let fast = simulate(&g, &p, &topo).unwrap();
            let slow = oracle_simulate(&g, &p, &topo).unwrap();
            assert_eq!(fast, slow, "graph {} placement {:?}", g.name(), p);
        }
    }
}

#[test]
fn exhaustive_agreement_on_random_graphs() {
    let topos = topologies();
    for seed in 0..20 {
        let g = random_small_graph(seed, 6);
        let topo = &topos[(seed % 3) as usize];
        for p in all_placements(6, 2) {
            let fast = simulate(&g, &p, topo).unwrap();
            let slow = oracle_simulate(&g, &p, topo).unwrap();
            assert_eq!(fast, slow, "graph {} placement {:?}", g.name(), p);
        }
    }
}

fn arb_graph() -> impl Strategy<Value = Graph> {
    (2usize..7, 2usize..6, 1u64..1000).prop_map(|(layers, width, seed)| {
        generate(
            &FamilySpec::LayeredRandom { layers, width, edge_prob: 0.3 },
            seed,
            1000,
        )
        .unwrap()
    })
}

fn arb_placement(n: usize, d: usize, seed: u64) -> Placement {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Placement((0..n).map(|_| rng.random_range(0..d)).collect())
}

proptest! {
    #[test]
    fn identical_inputs_give_bit_identical_reports(g in arb_graph(), pseed in 0u64..500) {
        let topo = DeviceTopology::homogeneous(3, u64::MAX, 1.0, 8.0, 0.1).unwrap();
        let p = arb_placement(g.len(), 3, pseed);
        let a = simulate(&g, &p, &topo).unwrap();
        let b = simulate(&g, &p, &topo).unwrap();
        prop_assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn single_device_makespan_equals_busy_exactly(g in arb_graph()) {
        let topo = DeviceTopology::homogeneous(2, u64::MAX, 1.0, 1.0, 0.0).unwrap();
        let r = simulate(&g, &Placement::single_device(g.len(), 0), &topo).unwrap();
        // no gaps and no transfers on one device: the finish chain is the
        // duration sum, bit for bit
        prop_assert_eq!(r.makespan, r.per_device_busy[0]);
        prop_assert_eq!(r.per_device_busy[1], 0.0);
        prop_assert_eq!(r.cross_device_bytes, 0);
        let id_order_sum: f64 = g.nodes().iter().map(|n| n.compute_cost).sum();
        prop_assert!((r.makespan - id_order_sum).abs() <= 1e-12 * id_order_sum.max(1.0));
    }

    #[test]
    fn single_device_makespan_ignores_bandwidth(g in arb_graph(), pseed in 0u64..100) {
        let slow = DeviceTopology::homogeneous(2, u64::MAX, 1.0, 0.01, 5.0).unwrap();
        let fast = DeviceTopology::homogeneous(2, u64::MAX, 1.0, 1e9, 0.0).unwrap();
        let dev = (pseed % 2) as usize;
        let p = Placement::single_device(g.len(), dev);
        let a = simulate(&g, &p, &slow).unwrap();
        let b = simulate(&g, &p, &fast).unwrap();
        prop_assert_eq!(a.makespan, b.makespan);
        prop_assert_eq!(a.cross_device_bytes, 0);
    }

    #[test]
    fn power_of_two_cost_scaling_is_exact(g in arb_graph(), k_exp in -2i32..5) {
        let k = 2.0f64.powi(k_exp);
        let scaled = Graph::new(
            g.name(),
            g.nodes()
                .iter()
                .map(|n| {
                    let mut n = n.clone();
                    n.compute_cost *= k;
                    n
                })
                .collect(),
            g.edges().to_vec(),
        );
        let topo = DeviceTopology::homogeneous(1, u64::MAX, 1.0, 1.0, 0.0).unwrap();
        let p = Placement::single_device(g.len(), 0);
        let base = simulate(&g, &p, &topo).unwrap();
        let big = simulate(&scaled, &p, &topo).unwrap();
        prop_assert_eq!(big.makespan, base.makespan * k);
    }

    #[test]
    fn makespan_sits_between_bounds(g in arb_graph(), pseed in 0u64..1000) {
        let topo = DeviceTopology::homogeneous(4, u64::MAX, 1.0, 16.0, 0.2).unwrap();
        let p = arb_placement(g.len(), 4, pseed);
        let r = simulate(&g, &p, &topo).unwrap();
        prop_assert!(r.valid);
        let lower = critical_path_bound(&g, &topo).unwrap();
        let mut upper = 0.0f64;
        for v in 0..g.len() {
            upper += g.node(v).compute_cost * topo.speed()[p.device(v)];
            for &u in g.preds(v) {
                if p.device(u) != p.device(v) {
                    upper += topo.transfer_time(p.device(u), p.device(v), g.node(u).output_bytes);
                }
            }
        }
        let slack = 1e-9 * upper.max(1.0);
        prop_assert!(lower <= r.makespan + slack, "lower {lower} > makespan {}", r.makespan);
        prop_assert!(r.makespan <= upper + slack, "makespan {} > upper {upper}", r.makespan);
        let max_busy = r.per_device_busy.iter().cloned().fold(0.0, f64::max);
        prop_assert!(r.makespan >= max_busy, "makespan {} < busy {max_busy}", r.makespan);
    }

    #[test]
    fn fast_and_oracle_agree_on_random_small_instances(
        seed in 0u64..2000,
        pseed in 0u64..64,
    ) {
        let g = random_small_graph(seed, 6);
        let topo = DeviceTopology::homogeneous(2, 300, 1.0, 2.0, 0.25).unwrap();
        let p = arb_placement(6, 2, pseed);
        let fast = simulate(&g, &p, &topo).unwrap();
        let slow = oracle_simulate(&g, &p, &topo).unwrap();
        prop_assert_eq!(fast, slow);
    }
}

#[test]
fn dyadic_costs_make_all_invariants_exact() {
    // costs that are multiples of 1/256 sum exactly in any order, so the
    // id-order sum, the execution-order sum, and the makespan all coincide
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let n = rng.random_range(3..20);
        let nodes: Vec<OpNode> = (0..n)
            .map(|i| node(i, rng.random_range(1..512) as f64 / 256.0, 0, 0, None))
            .collect();
        let mut edges = Vec::new();
        for v in 1..n {
            if rng.random_range(0.0..1.0) < 0.5 {
                edges.push((rng.random_range(0..v), v));
            }
        }
        let g = Graph::new("dyadic", nodes, edges);
        let topo = DeviceTopology::homogeneous(1, u64::MAX, 1.0, 1.0, 0.0).unwrap();
        let r = simulate(&g, &Placement::single_device(n, 0), &topo).unwrap();
        let id_sum: f64 = g.nodes().iter().map(|nd| nd.compute_cost).sum();
        assert_eq!(r.makespan, id_sum);
        assert_eq!(r.per_device_busy[0], id_sum);
    }
}
