//! Dataflow-graph data model and serialization.
//!
//! A graph is a DAG of operations with per-node cost and memory metadata.
//! Construction never fails: [`Graph::validate`] returns the full list of
//! violations as a verdict, so tools can report every problem at once.
//! Operations that require a well-formed graph (like [`Graph::topo_order`])
//! surface hard errors instead.

pub mod features;
pub mod generate;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One operation in a dataflow graph. Ids are positional: `nodes[i].id == i`
/// in a valid graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpNode {
    pub id: usize,
    pub op_type: String,
    pub compute_cost: f64,
    pub output_bytes: u64,
    pub memory_bytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub colocation_group: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Graph {
    name: String,
    nodes: Vec<OpNode>,
    edges: Vec<(usize, usize)>,
    preds: Vec<Vec<usize>>,
    succs: Vec<Vec<usize>>,
}

impl PartialEq for Graph {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.nodes == other.nodes && self.edges == other.edges
    }
}

impl Graph {
    /// Build a graph from parts. Malformed input (self-edges, duplicates,
    /// out-of-range endpoints, cycles) is representable; adjacency lists
    /// silently skip unusable edges so [`Graph::validate`] can enumerate the
    /// problems afterwards.
    pub fn new(name: impl Into<String>, nodes: Vec<OpNode>, edges: Vec<(usize, usize)>) -> Self {
        let n = nodes.len();
        let mut preds = vec![Vec::new(); n];
        let mut succs = vec![Vec::new(); n];
        let mut seen = HashSet::new();
        for &(u, v) in &edges {
            if u >= n || v >= n || u == v || !seen.insert((u, v)) {
                continue;
            }
            succs[u].push(v);
            preds[v].push(u);
        }
        for list in preds.iter_mut().chain(succs.iter_mut()) {
            list.sort_unstable();
        }
        Graph { name: name.into(), nodes, edges, preds, succs }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: usize) -> &OpNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[OpNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Predecessors of `v`, ascending.
    pub fn preds(&self, v: usize) -> &[usize] {
        &self.preds[v]
    }

    /// Successors of `v`, ascending.
    pub fn succs(&self, v: usize) -> &[usize] {
        &self.succs[v]
    }

    /// All violations of graph well-formedness, in a stable order. An empty
    /// list means the graph is valid.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        let n = self.nodes.len();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id != i {
                out.push(format!("node at position {i} has id {}; ids must be contiguous", node.id));
            }
            if !(node.compute_cost >= 0.0 && node.compute_cost.is_finite()) {
                out.push(format!("node {i}: compute_cost {} is not a finite nonnegative number", node.compute_cost));
            }
        }
        let mut seen = HashSet::new();
        for &(u, v) in &self.edges {
            if u >= n || v >= n {
                out.push(format!("edge ({u}, {v}) references a nonexistent node"));
                continue;
            }
            if u == v {
                out.push(format!("edge ({u}, {v}) is a self-edge"));
                continue;
            }
            if !seen.insert((u, v)) {
                out.push(format!("edge ({u}, {v}) is duplicated"));
            }
        }
        if self.kahn().is_none() {
            let ordered: HashSet<usize> = self.kahn_partial().into_iter().collect();
            let mut cyclic: Vec<usize> = (0..n).filter(|v| !ordered.contains(v)).collect();
            cyclic.sort_unstable();
            out.push(format!("cycle involving nodes {cyclic:?}"));
        }
        out
    }

    fn kahn_partial(&self) -> Vec<usize> {
        let n = self.nodes.len();
        let mut indeg: Vec<usize> = (0..n).map(|v| self.preds[v].len()).collect();
        let mut heap: std::collections::BinaryHeap<std::cmp::Reverse<usize>> = (0..n)
            .filter(|&v| indeg[v] == 0)
            .map(std::cmp::Reverse)
            .collect();
        let mut order = Vec::with_capacity(n);
        while let Some(std::cmp::Reverse(v)) = heap.pop() {
            order.push(v);
            for &w in &self.succs[v] {
                indeg[w] -= 1;
                if indeg[w] == 0 {
                    heap.push(std::cmp::Reverse(w));
                }
            }
        }
        order
    }

    fn kahn(&self) -> Option<Vec<usize>> {
        let order = self.kahn_partial();
        (order.len() == self.nodes.len()).then_some(order)
    }

    /// Kahn's topological order with ties broken by ascending node id.
    pub fn topo_order(&self) -> Result<Vec<usize>> {
        self.kahn()
            .ok_or_else(|| Error::Cycle(format!("graph {} contains a cycle", self.name)))
    }

    /// Colocation groups with member lists (ascending), keyed by group id.
    pub fn colocation_groups(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut out: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Some(g) = &node.colocation_group {
                out.entry(g.as_str()).or_default().push(i);
            }
        }
        out
    }

    /// For every node, the id that decides its device: the lowest id in its
    /// colocation group, or the node itself when ungrouped.
    pub fn group_leader(&self) -> Vec<usize> {
        let mut leader: Vec<usize> = (0..self.nodes.len()).collect();
        for (_, members) in self.colocation_groups() {
            let l = members[0];
            for &m in &members {
                leader[m] = l;
            }
        }
        leader
    }

    /// Nodes that are their own leader, ascending. These are the nodes a
    /// placement policy actually decides; followers copy their leader.
    pub fn decision_nodes(&self) -> Vec<usize> {
        self.group_leader()
            .iter()
            .enumerate()
            .filter(|&(v, &l)| v == l)
            .map(|(v, _)| v)
            .collect()
    }

    pub fn to_json(&self) -> String {
        let file = GraphFile {
            version: SCHEMA_VERSION,
            name: self.name.clone(),
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
        };
        serde_json::to_string_pretty(&file).expect("graph serialization cannot fail")
    }

    /// Parse a graph from schema v1 JSON. Unknown fields are tolerated and
    /// reported back as warnings; structural violations are not checked here
    /// (run [`Graph::validate`]).
    pub fn from_json(text: &str) -> Result<(Graph, Vec<String>)> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::Parse(format!("graph JSON at line {} column {}: {e}", e.line(), e.column())))?;
        let mut warnings = Vec::new();
        collect_unknown_fields(&value, &mut warnings);
        let file: GraphFile = serde_json::from_value(value)
            .map_err(|e| Error::Parse(format!("graph JSON: {e}")))?;
        if file.version != SCHEMA_VERSION {
            return Err(Error::Parse(format!(
                "unsupported graph schema version {} (expected {SCHEMA_VERSION})",
                file.version
            )));
        }
        Ok((Graph::new(file.name, file.nodes, file.edges), warnings))
    }
}

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct GraphFile {
    version: u32,
    name: String,
    nodes: Vec<OpNode>,
    edges: Vec<(usize, usize)>,
}

const GRAPH_FIELDS: &[&str] = &["version", "name", "nodes", "edges"];
const NODE_FIELDS: &[&str] =
    &["id", "op_type", "compute_cost", "output_bytes", "memory_bytes", "colocation_group"];

fn collect_unknown_fields(value: &serde_json::Value, warnings: &mut Vec<String>) {
    let Some(obj) = value.as_object() else { return };
    for key in obj.keys() {
        if !GRAPH_FIELDS.contains(&key.as_str()) {
            warnings.push(format!("ignoring unknown graph field \"{key}\""));
        }
    }
    if let Some(nodes) = obj.get("nodes").and_then(|n| n.as_array()) {
        for (i, node) in nodes.iter().enumerate() {
            let Some(nobj) = node.as_object() else { continue };
            for key in nobj.keys() {
                if !NODE_FIELDS.contains(&key.as_str()) {
                    warnings.push(format!("ignoring unknown field \"{key}\" on node {i}"));
                }
            }
        }
    }
}
