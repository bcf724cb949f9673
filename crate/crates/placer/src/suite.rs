//! The desk-scale experiment suite: five fixed graph instances, one per
//! generator family, with matching device topologies and a lean network
//! configuration sized for single-core experiment runs.
//!
//! Experiments (training sanity, transfer, ablations) and the CLI both
//! build their workloads from here so results stay comparable across
//! entry points.

use crate::baselines::{run_placer, PlacerSpec};
use crate::gnn::GnnConfig;
use crate::graph::generate::{generate, FamilySpec, DEFAULT_NODE_BUDGET};
use crate::graph::Graph;
use crate::policy::{PolicyConfig, PolicyVariant};
use crate::sim::DeviceTopology;
use crate::trainer::{TrainConfig, TrainMode, Workload};
use crate::Result;

/// One suite workload: a family instance and its device count.
#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub spec: FamilySpec,
    pub seed: u64,
    pub devices: usize,
}

/// The five-family suite. Node counts sit in the 100-300 range: big
/// enough that placement structure matters, small enough that thousands
/// of simulated episodes fit in minutes.
pub fn desk_suite() -> Vec<SuiteEntry> {
    vec![
        SuiteEntry { spec: FamilySpec::RnnGrid { layers: 4, steps: 20 }, seed: 11, devices: 2 },
        SuiteEntry {
            spec: FamilySpec::Multibranch { blocks: 6, branches: 4, branch_len: 6 },
            seed: 12,
            devices: 4,
        },
        SuiteEntry {
            spec: FamilySpec::DilatedStack { stacks: 8, layers_per_stack: 16 },
            seed: 13,
            devices: 2,
        },
        SuiteEntry {
            spec: FamilySpec::LayeredRandom { layers: 12, width: 12, edge_prob: 0.25 },
            seed: 14,
            devices: 4,
        },
        SuiteEntry { spec: FamilySpec::EncoderDecoder { layers: 3, steps: 12 }, seed: 15, devices: 2 },
    ]
}

/// Device topology used across the suite: homogeneous devices with a
/// link speed that makes the generators' tensor sizes cost a noticeable
/// fraction of an op, so placement actually trades compute against
/// communication. At this bandwidth random placements pay heavily for
/// scattered edges while well-routed splits still beat one device on
/// most families, which is the regime the learned placers are meant to
/// exploit. Memory is ample; invalid placements come from colocation
/// mistakes, not routine memory pressure.
pub fn desk_topology(devices: usize) -> Result<DeviceTopology> {
    DeviceTopology::homogeneous(devices, 1 << 30, 1.0, 8192.0, 0.05)
}

/// Builds a suite entry's graph and topology as a training workload.
pub fn build(entry: &SuiteEntry) -> Result<Workload> {
    let g = generate(&entry.spec, entry.seed, DEFAULT_NODE_BUDGET)?;
    let topo = desk_topology(entry.devices)?;
    Ok(Workload::new(g, topo))
}

/// Network and PPO settings for desk runs: half-width networks and short
/// segments keep one rollout in the low milliseconds at suite sizes.
pub fn lean_config(seed: u64) -> TrainConfig {
    TrainConfig {
        mode: TrainMode::One,
        episodes: 2000,
        rollouts_per_update: 16,
        ppo_clip: 0.2,
        ppo_epochs: 4,
        minibatch: 8,
        learning_rate: 1e-3,
        entropy_coef: 0.01,
        grad_clip: 1.0,
        seed,
        gnn: GnnConfig { layers: 2, hidden: 32 },
        policy: PolicyConfig {
            layers: 2,
            heads: 4,
            hidden: 32,
            segment: 64,
            max_devices: 8,
            variant: PolicyVariant::Full,
        },
    }
}

/// Median makespan of `trials` random placements (colocation-respecting),
/// the reference point the learned placers are judged against. Counts
/// every trial's simulated makespan, valid or not; with the suite
/// topology invalid random placements do not occur.
pub fn random_median_makespan(
    g: &Graph,
    topo: &DeviceTopology,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let mut spans = Vec::with_capacity(trials);
    for i in 0..trials {
        let p = run_placer(&PlacerSpec::Random { seed: seed + i as u64 }, g, topo)?;
        spans.push(crate::sim::simulate(g, &p, topo)?.makespan);
    }
    spans.sort_by(|a, b| a.total_cmp(b));
    Ok(spans[spans.len() / 2])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_sizes_and_devices_are_in_the_contract_range() {
        let suite = desk_suite();
        assert_eq!(suite.len(), 5);
        let mut names = std::collections::BTreeSet::new();
        for entry in &suite {
            let w = build(entry).unwrap();
            assert!(
                (100..=300).contains(&w.graph.len()),
                "{} has {} nodes",
                w.graph.name(),
                w.graph.len()
            );
            assert!((2..=4).contains(&w.topo.num_devices()));
            assert!(w.graph.validate().is_empty(), "{} invalid", w.graph.name());
            names.insert(entry.spec.family_name().to_string());
        }
        assert_eq!(names.len(), 5, "families must be distinct");
    }

    #[test]
    fn suite_graphs_are_reproducible() {
        for entry in desk_suite() {
            let a = build(&entry).unwrap();
            let b = build(&entry).unwrap();
            assert_eq!(a.graph.to_json(), b.graph.to_json());
        }
    }

    #[test]
    fn lean_config_is_valid_and_fits_the_suite() {
        let cfg = lean_config(0);
        cfg.validate().unwrap();
        for entry in desk_suite() {
            assert!(entry.devices <= cfg.policy.max_devices);
        }
    }

    #[test]
    fn random_median_is_deterministic_and_positive() {
        let w = build(&desk_suite()[0]).unwrap();
        let a = random_median_makespan(&w.graph, &w.topo, 21, 5).unwrap();
        let b = random_median_makespan(&w.graph, &w.topo, 21, 5).unwrap();
        assert_eq!(a, b);
        assert!(a > 0.0);
    }
}
