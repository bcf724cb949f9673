//! Simulates a hand-built diamond graph under different placements and
//! prints the full report each time: makespan, per-device busy time,
//! peak memory, cross-device traffic, and the two ways a placement can
//! be invalid.
//!
//!     cargo run --example simulate_report

use placer::graph::{Graph, OpNode};
use placer::sim::{simulate, DeviceTopology, Placement};
use placer::trainer::reward_fn;

fn node(id: usize, op: &str, cost: f64, bytes: u64, group: Option<&str>) -> OpNode {
    OpNode {
        id,
        op_type: op.into(),
        compute_cost: cost,
        output_bytes: bytes,
        memory_bytes: bytes,
        colocation_group: group.map(Into::into),
    }
}

fn show(name: &str, g: &Graph, p: &Placement, topo: &DeviceTopology) -> placer::Result<()> {
    let r = simulate(g, p, topo)?;
    println!("{name}: devices {:?}", p.0);
    if r.valid {
        println!(
            "  makespan {:.3}  busy {:?}  peak mem {:?}  cross bytes {}",
            r.makespan, r.per_device_busy, r.per_device_peak_mem, r.cross_device_bytes
        );
    } else {
        println!("  invalid: {:?}", r.violation.expect("invalid reports carry a violation"));
    }
    println!("  reward {:.4}", reward_fn(&r));
    Ok(())
}

pub fn run() -> placer::Result<()> {
    // a diamond: one producer fans out to two parallel branches that join
    let g = Graph::new(
        "diamond",
        vec![
            node(0, "input", 1.0, 4096, None),
            node(1, "conv", 4.0, 4096, None),
            node(2, "conv", 4.0, 4096, None),
            node(3, "add", 1.0, 4096, Some("head")),
            node(4, "softmax", 0.5, 256, Some("head")),
        ],
        vec![(0, 1), (0, 2), (1, 3), (2, 3), (3, 4)],
    );
    assert!(g.validate().is_empty());
    let topo = DeviceTopology::homogeneous(2, 16 * 1024, 1.0, 8192.0, 0.05)?;

    show("everything on device 0", &g, &Placement::single_device(g.len(), 0), &topo)?;
    show("branches split", &g, &Placement(vec![0, 0, 1, 0, 0]), &topo)?;

    // colocated ops on different devices invalidate the placement
    show("colocation broken", &g, &Placement(vec![0, 0, 1, 0, 1]), &topo)?;

    // and so does exceeding a device's memory capacity
    let cramped = DeviceTopology::homogeneous(2, 8 * 1024, 1.0, 8192.0, 0.05)?;
    show("memory exceeded", &g, &Placement::single_device(g.len(), 0), &cramped)?;
    Ok(())
}

fn main() -> placer::Result<()> {
    run()
}
