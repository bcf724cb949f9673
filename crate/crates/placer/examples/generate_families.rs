//! Generates one instance of every synthetic graph family and prints its
//! shape: node and edge counts, colocation groups, and the number of
//! independent placement decisions the policy would make.
//!
//!     cargo run --example generate_families

use placer::graph::generate::{generate, FamilySpec, DEFAULT_NODE_BUDGET};

pub fn run() -> placer::Result<()> {
    let specs = [
        FamilySpec::RnnGrid { layers: 4, steps: 20 },
        FamilySpec::Multibranch { blocks: 6, branches: 4, branch_len: 6 },
        FamilySpec::DilatedStack { stacks: 8, layers_per_stack: 16 },
        FamilySpec::LayeredRandom { layers: 12, width: 12, edge_prob: 0.25 },
        FamilySpec::EncoderDecoder { layers: 3, steps: 12 },
    ];
    println!(
        "{:<16} {:>6} {:>6} {:>7} {:>10}",
        "family", "nodes", "edges", "groups", "decisions"
    );
    for spec in &specs {
        let g = generate(spec, 11, DEFAULT_NODE_BUDGET)?;
        assert!(g.validate().is_empty(), "generators emit valid graphs");
        println!(
            "{:<16} {:>6} {:>6} {:>7} {:>10}",
            spec.family_name(),
            g.len(),
            g.edges().len(),
            g.colocation_groups().len(),
            g.decision_nodes().len()
        );
    }

    // the stress family exists for scale runs; it takes an explicit size
    let big = placer::graph::generate::stress(2_000, 7)?;
    println!("{:<16} {:>6} {:>6} (scale testing)", "stress", big.len(), big.edges().len());
    Ok(())
}

fn main() -> placer::Result<()> {
    run()
}
