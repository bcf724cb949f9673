//! Synthetic workload generators.
//!
//! Five graph families provide desk-scale analogues of common model
//! topologies: recurrent grids, branchy vision blocks, dilated temporal
//! stacks, layered random DAGs, and encoder-decoder pairs with attention
//! cross edges. Every generator is a pure function of (family, params,
//! seed): identical inputs produce byte-identical serialized graphs.
//!
//! Closed-form node counts (tested against the constructions):
//!
//! - `rnn_grid(L, S)`: `S` embeds + `L*S` cells + `S` outputs = `S*(L+2)`
//! - `multibranch(B, K, M)`: 1 input + per block `K*M` branch nodes and one
//!   join = `1 + B*(K*M + 1)`; edges per block `K*(M+1)`
//! - `dilated_stack(S, L)`: 1 input + `S*L` convolutions + 1 skip sink
//! - `layered_random(L, W)`: `L*W`
//! - `encoder_decoder(L, S)`: two grids plus `S` attention and `S` output
//!   nodes = `S*(2L+4)`

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Graph, OpNode};
use crate::error::{Error, Result};

/// Default cap on generated graph size; the dedicated [`stress`] generator
/// is the only way past it.
pub const DEFAULT_NODE_BUDGET: usize = 1000;

/// Hard ceiling for [`stress`].
pub const STRESS_NODE_CAP: usize = 50_000;

/// Parameters for one graph family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FamilySpec {
    RnnGrid { layers: usize, steps: usize },
    Multibranch { blocks: usize, branches: usize, branch_len: usize },
    DilatedStack { stacks: usize, layers_per_stack: usize },
    LayeredRandom { layers: usize, width: usize, edge_prob: f64 },
    EncoderDecoder { layers: usize, steps: usize },
}

impl FamilySpec {
    pub fn family_name(&self) -> &'static str {
        match self {
            FamilySpec::RnnGrid { .. } => "rnn_grid",
            FamilySpec::Multibranch { .. } => "multibranch",
            FamilySpec::DilatedStack { .. } => "dilated_stack",
            FamilySpec::LayeredRandom { .. } => "layered_random",
            FamilySpec::EncoderDecoder { .. } => "encoder_decoder",
        }
    }

    /// Exact node count the construction will produce.
    pub fn node_count(&self) -> usize {
        match *self {
            FamilySpec::RnnGrid { layers, steps } => steps * (layers + 2),
            FamilySpec::Multibranch { blocks, branches, branch_len } => {
                1 + blocks * (branches * branch_len + 1)
            }
            FamilySpec::DilatedStack { stacks, layers_per_stack } => {
                stacks * layers_per_stack + 2
            }
            FamilySpec::LayeredRandom { layers, width, .. } => layers * width,
            FamilySpec::EncoderDecoder { layers, steps } => steps * (2 * layers + 4),
        }
    }

    fn check(&self) -> Result<()> {
        let ok = match *self {
            FamilySpec::RnnGrid { layers, steps } => layers >= 1 && steps >= 1,
            FamilySpec::Multibranch { blocks, branches, branch_len } => {
                blocks >= 1 && branches >= 1 && branch_len >= 1
            }
            FamilySpec::DilatedStack { stacks, layers_per_stack } => {
                stacks >= 1 && layers_per_stack >= 1
            }
            FamilySpec::LayeredRandom { layers, width, edge_prob } => {
                layers >= 2 && width >= 1 && (0.0..=1.0).contains(&edge_prob)
            }
            FamilySpec::EncoderDecoder { layers, steps } => layers >= 1 && steps >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid family parameters: {self:?}")))
        }
    }
}

struct Builder {
    nodes: Vec<OpNode>,
    edges: Vec<(usize, usize)>,
    rng: ChaCha8Rng,
}

impl Builder {
    fn new(seed: u64) -> Self {
        Builder { nodes: Vec::new(), edges: Vec::new(), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn node(
        &mut self,
        op_type: &str,
        cost: (f64, f64),
        out_bytes: (u64, u64),
        mem_bytes: (u64, u64),
        group: Option<&str>,
    ) -> usize {
        let id = self.nodes.len();
        self.nodes.push(OpNode {
            id,
            op_type: op_type.to_string(),
            compute_cost: self.rng.random_range(cost.0..cost.1),
            output_bytes: self.rng.random_range(out_bytes.0..out_bytes.1),
            memory_bytes: self.rng.random_range(mem_bytes.0..mem_bytes.1),
            colocation_group: group.map(str::to_string),
        });
        id
    }

    fn edge(&mut self, u: usize, v: usize) {
        self.edges.push((u, v));
    }

    fn finish(self, name: String) -> Graph {
        Graph::new(name, self.nodes, self.edges)
    }
}

/// Generate one graph. Exceeding `node_budget` is a parameter error,
/// reported before any construction work happens.
pub fn generate(spec: &FamilySpec, seed: u64, node_budget: usize) -> Result<Graph> {
    spec.check()?;
    let count = spec.node_count();
    if count > node_budget {
        return Err(Error::Parameter(format!(
            "{} with these parameters needs {count} nodes, over the budget of {node_budget}",
            spec.family_name()
        )));
    }
    let mut b = Builder::new(seed);
    match *spec {
        FamilySpec::RnnGrid { layers, steps } => build_rnn_grid(&mut b, layers, steps),
        FamilySpec::Multibranch { blocks, branches, branch_len } => {
            build_multibranch(&mut b, blocks, branches, branch_len)
        }
        FamilySpec::DilatedStack { stacks, layers_per_stack } => {
            build_dilated(&mut b, stacks, layers_per_stack)
        }
        FamilySpec::LayeredRandom { layers, width, edge_prob } => {
            build_layered(&mut b, layers, width, edge_prob)
        }
        FamilySpec::EncoderDecoder { layers, steps } => build_encdec(&mut b, layers, steps),
    }
    let name = graph_name(spec, seed);
    let g = b.finish(name);
    debug_assert!(g.validate().is_empty(), "generator produced invalid graph");
    Ok(g)
}

fn graph_name(spec: &FamilySpec, seed: u64) -> String {
    let params = match *spec {
        FamilySpec::RnnGrid { layers, steps } => format!("l{layers}_s{steps}"),
        FamilySpec::Multibranch { blocks, branches, branch_len } => {
            format!("b{blocks}_k{branches}_m{branch_len}")
        }
        FamilySpec::DilatedStack { stacks, layers_per_stack } => {
            format!("s{stacks}_l{layers_per_stack}")
        }
        FamilySpec::LayeredRandom { layers, width, .. } => format!("l{layers}_w{width}"),
        FamilySpec::EncoderDecoder { layers, steps } => format!("l{layers}_s{steps}"),
    };
    format!("{}_{params}_seed{seed}", spec.family_name())
}

/// Recurrent lattice: per step an embedding lookup feeds a column of cells;
/// cells connect layer-to-layer and step-to-step; the top cell of each step
/// feeds an output projection. Embeddings share a colocation group (one
/// table) and so do the output projections, mirroring weight sharing.
fn build_rnn_grid(b: &mut Builder, layers: usize, steps: usize) {
    let tops = build_rnn_grid_core(b, layers, steps, "rnn");
    for &top in &tops {
        let o = b.node(
            "output_proj",
            (0.4, 0.8),
            (2048, 8192),
            (1 << 20, 1 << 21),
            Some("output_proj"),
        );
        b.edge(top, o);
    }
}

/// Sequential blocks of parallel branches joined by a concat node. Branch
/// costs scale with the branch index so branches are deliberately unequal.
fn build_multibranch(b: &mut Builder, blocks: usize, branches: usize, branch_len: usize) {
    let mut head = b.node("input", (0.05, 0.1), (4096, 8192), (1, 2), None);
    for _ in 0..blocks {
        let mut ends = Vec::with_capacity(branches);
        for k in 0..branches {
            let scale = 1.0 + 0.5 * k as f64;
            let mut prev = head;
            for _ in 0..branch_len {
                let n = b.node(
                    "conv",
                    (0.4 * scale, 0.8 * scale),
                    (4096, 65536),
                    (1 << 14, 1 << 17),
                    None,
                );
                b.edge(prev, n);
                prev = n;
            }
            ends.push(prev);
        }
        let join = b.node("concat_join", (0.1, 0.4), (8192, 32768), (1, 2), None);
        for e in ends {
            b.edge(e, join);
        }
        head = join;
    }
}

/// Backbone chain of dilated convolutions. Layer `j` within a stack adds a
/// skip edge reaching `2^j` nodes back (omitted when that would duplicate
/// the chain edge); each stack output also feeds a shared skip sink.
fn build_dilated(b: &mut Builder, stacks: usize, layers_per_stack: usize) {
    let input = b.node("audio_in", (0.05, 0.1), (16384, 32768), (1, 2), None);
    let total = stacks * layers_per_stack;
    let mut chain = Vec::with_capacity(total);
    for i in 0..total {
        let n = b.node("dilated_conv", (0.6, 1.2), (8192, 16384), (1 << 14, 1 << 16), None);
        let prev = if i == 0 { input } else { chain[i - 1] };
        b.edge(prev, n);
        let dilation = 1usize << (i % layers_per_stack);
        if dilation >= 2 && i >= dilation {
            b.edge(chain[i - dilation], n);
        }
        chain.push(n);
    }
    let sink = b.node("skip_sum", (0.2, 0.5), (4096, 8192), (1, 2), None);
    for s in 0..stacks {
        b.edge(chain[s * layers_per_stack + layers_per_stack - 1], sink);
    }
}

const RANDOM_OPS: &[&str] = &["dense", "conv", "norm", "act", "reduce"];

/// Random DAG with edges only between consecutive layers. Every non-input
/// node keeps at least one predecessor so no dead islands appear.
fn build_layered(b: &mut Builder, layers: usize, width: usize, edge_prob: f64) {
    let mut prev_layer: Vec<usize> = Vec::new();
    for l in 0..layers {
        let mut cur = Vec::with_capacity(width);
        for _ in 0..width {
            let op = RANDOM_OPS[b.rng.random_range(0..RANDOM_OPS.len())];
            let n = b.node(op, (0.3, 1.8), (2048, 32768), (1 << 12, 1 << 16), None);
            if l > 0 {
                let mut any = false;
                for &u in &prev_layer {
                    if b.rng.random_range(0.0..1.0) < edge_prob {
                        b.edge(u, n);
                        any = true;
                    }
                }
                if !any {
                    let u = prev_layer[b.rng.random_range(0..prev_layer.len())];
                    b.edge(u, n);
                }
            }
            cur.push(n);
        }
        prev_layer = cur;
    }
}

/// Two recurrent grids coupled through per-step attention nodes: each
/// attention node reads every encoder top cell plus its own decoder top
/// cell, then feeds the step's output projection.
fn build_encdec(b: &mut Builder, layers: usize, steps: usize) {
    let enc_tops = build_rnn_grid_core(b, layers, steps, "src");
    let dec_tops = build_rnn_grid_core(b, layers, steps, "tgt");
    for t in 0..steps {
        let att = b.node("attention", (0.5, 1.0), (8192, 16384), (1 << 14, 1 << 15), None);
        for &e in &enc_tops {
            b.edge(e, att);
        }
        b.edge(dec_tops[t], att);
        let out = b.node(
            "output_proj",
            (0.4, 0.8),
            (2048, 8192),
            (1 << 20, 1 << 21),
            Some("output_proj"),
        );
        b.edge(att, out);
    }
}

/// The lattice part of the recurrent family without output projections;
/// returns the top-layer cell of each step.
fn build_rnn_grid_core(b: &mut Builder, layers: usize, steps: usize, prefix: &str) -> Vec<usize> {
    let embed_group = format!("{prefix}_embed");
    let embeds: Vec<usize> = (0..steps)
        .map(|_| {
            b.node(
                &format!("{prefix}_embed"),
                (0.1, 0.3),
                (4096, 16384),
                (1 << 22, 1 << 23),
                Some(&embed_group),
            )
        })
        .collect();
    let mut cells = vec![vec![0; steps]; layers];
    for l in 0..layers {
        for t in 0..steps {
            cells[l][t] = b.node(
                &format!("{prefix}_cell"),
                (0.8, 1.6),
                (8192, 32768),
                (1 << 16, 1 << 18),
                None,
            );
        }
    }
    for t in 0..steps {
        b.edge(embeds[t], cells[0][t]);
        for l in 0..layers {
            if l > 0 {
                b.edge(cells[l - 1][t], cells[l][t]);
            }
            if t > 0 {
                b.edge(cells[l][t - 1], cells[l][t]);
            }
        }
    }
    (0..steps).map(|t| cells[layers - 1][t]).collect()
}

/// Large layered-random graph for scalability tests only. Width is fixed at
/// 64; the last layer is trimmed so the node count is exact.
pub fn stress(nodes: usize, seed: u64) -> Result<Graph> {
    if nodes < 2 || nodes > STRESS_NODE_CAP {
        return Err(Error::Parameter(format!(
            "stress size {nodes} outside 2..={STRESS_NODE_CAP}"
        )));
    }
    let width = 64usize.min(nodes / 2).max(1);
    let mut b = Builder::new(seed);
    let mut prev_layer: Vec<usize> = Vec::new();
    while b.nodes.len() < nodes {
        let take = width.min(nodes - b.nodes.len());
        let mut cur = Vec::with_capacity(take);
        for _ in 0..take {
            let op = RANDOM_OPS[b.rng.random_range(0..RANDOM_OPS.len())];
            let n = b.node(op, (0.3, 1.8), (2048, 32768), (1 << 12, 1 << 16), None);
            if !prev_layer.is_empty() {
                // about two predecessors on average
                let p = 2.0 / prev_layer.len() as f64;
                let mut any = false;
                for &u in &prev_layer {
                    if b.rng.random_range(0.0..1.0) < p {
                        b.edge(u, n);
                        any = true;
                    }
                }
                if !any {
                    let u = prev_layer[b.rng.random_range(0..prev_layer.len())];
                    b.edge(u, n);
                }
            }
            cur.push(n);
        }
        prev_layer = cur;
    }
    Ok(b.finish(format!("stress_{nodes}_seed{seed}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_specs() -> Vec<FamilySpec> {
        vec![
            FamilySpec::RnnGrid { layers: 2, steps: 3 },
            FamilySpec::RnnGrid { layers: 3, steps: 8 },
            FamilySpec::Multibranch { blocks: 2, branches: 3, branch_len: 2 },
            FamilySpec::Multibranch { blocks: 4, branches: 4, branch_len: 3 },
            FamilySpec::DilatedStack { stacks: 2, layers_per_stack: 4 },
            FamilySpec::LayeredRandom { layers: 5, width: 6, edge_prob: 0.3 },
            FamilySpec::EncoderDecoder { layers: 2, steps: 4 },
        ]
    }

    #[test]
    fn rnn_grid_2x3_has_six_cells_plus_io() {
        let g = generate(&FamilySpec::RnnGrid { layers: 2, steps: 3 }, 0, 1000).unwrap();
        let cells = g.nodes().iter().filter(|n| n.op_type == "rnn_cell").count();
        assert_eq!(cells, 6);
        assert_eq!(g.len(), 3 * (2 + 2));
    }

    #[test]
    fn identical_inputs_give_identical_bytes() {
        for spec in all_specs() {
            let a = generate(&spec, 42, 1000).unwrap().to_json();
            let b = generate(&spec, 42, 1000).unwrap().to_json();
            assert_eq!(a, b, "{spec:?} not deterministic");
        }
        let a = stress(500, 9).unwrap().to_json();
        let b = stress(500, 9).unwrap().to_json();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_differ() {
        let spec = FamilySpec::RnnGrid { layers: 2, steps: 3 };
        let a = generate(&spec, 1, 1000).unwrap().to_json();
        let b = generate(&spec, 2, 1000).unwrap().to_json();
        assert_ne!(a, b);
    }

    #[test]
    fn multibranch_counts_match_closed_form() {
        for (blocks, branches, branch_len) in [(1, 1, 1), (2, 3, 2), (3, 4, 5), (5, 2, 3)] {
            let spec = FamilySpec::Multibranch { blocks, branches, branch_len };
            let g = generate(&spec, 7, 1000).unwrap();
            assert_eq!(g.len(), 1 + blocks * (branches * branch_len + 1));
            assert_eq!(g.edges().len(), blocks * branches * (branch_len + 1));
        }
    }

    #[test]
    fn node_count_formula_matches_construction_for_all_families() {
        for spec in all_specs() {
            let g = generate(&spec, 3, 1000).unwrap();
            assert_eq!(g.len(), spec.node_count(), "{spec:?}");
        }
    }

    #[test]
    fn all_generated_graphs_validate() {
        for spec in all_specs() {
            for seed in [0, 1, 99] {
                let g = generate(&spec, seed, 1000).unwrap();
                assert!(g.validate().is_empty(), "{spec:?} seed {seed}: {:?}", g.validate());
                g.topo_order().unwrap();
            }
        }
    }

    #[test]
    fn budget_exceeded_is_parameter_error() {
        let spec = FamilySpec::RnnGrid { layers: 10, steps: 50 };
        let err = generate(&spec, 0, 100).unwrap_err();
        assert!(matches!(err, Error::Parameter(_)));
    }

    #[test]
    fn invalid_params_are_parameter_errors() {
        assert!(matches!(
            generate(&FamilySpec::RnnGrid { layers: 0, steps: 3 }, 0, 1000),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            generate(
                &FamilySpec::LayeredRandom { layers: 3, width: 2, edge_prob: 1.5 },
                0,
                1000
            ),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn encoder_decoder_attention_reads_all_encoder_tops() {
        let (layers, steps) = (2, 4);
        let g = generate(&FamilySpec::EncoderDecoder { layers, steps }, 5, 1000).unwrap();
        let att: Vec<usize> = g
            .nodes()
            .iter()
            .filter(|n| n.op_type == "attention")
            .map(|n| n.id)
            .collect();
        assert_eq!(att.len(), steps);
        for &a in &att {
            assert_eq!(g.preds(a).len(), steps + 1);
        }
    }

    #[test]
    fn dilated_stack_has_skips_and_sink() {
        let g = generate(&FamilySpec::DilatedStack { stacks: 2, layers_per_stack: 3 }, 1, 1000)
            .unwrap();
        let sink = g.nodes().iter().find(|n| n.op_type == "skip_sum").unwrap().id;
        assert_eq!(g.preds(sink).len(), 2, "one edge per stack output");
        // Chain indices 0..6 with layer j = i % 3 and dilation 2^j. Skips
        // need dilation >= 2 and i >= dilation: i=4 (d=2, from 2) and i=5
        // (d=4, from 1). Chain edges: input->0 plus five internal.
        let expected_chain = 6;
        let expected_skips = 2;
        let expected_sink = 2;
        assert_eq!(g.edges().len(), expected_chain + expected_skips + expected_sink);
    }

    #[test]
    fn stress_hits_exact_count_and_validates() {
        let g = stress(1000, 3).unwrap();
        assert_eq!(g.len(), 1000);
        assert!(g.validate().is_empty());
        g.topo_order().unwrap();
        assert!(matches!(stress(STRESS_NODE_CAP + 1, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn family_spec_serde_roundtrip() {
        for spec in all_specs() {
            let text = serde_json::to_string(&spec).unwrap();
            let back: FamilySpec = serde_json::from_str(&text).unwrap();
            assert_eq!(back, spec);
        }
    }
}
