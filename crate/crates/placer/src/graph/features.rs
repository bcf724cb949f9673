//! Per-node feature encoding.
//!
//! Each node becomes a fixed-width row: a one-hot op-type bucket (FNV-1a
//! hash of the op-type string modulo `T`), log1p-compressed cost and byte
//! columns, and raw in/out degrees. Width is `T + 5` regardless of graph
//! family, which is what lets one policy transfer across topologies.
//! Adjacency is deliberately not encoded here; topology enters through
//! message passing only.

use super::Graph;
use crate::tensor::Tensor;

/// Default number of hashed op-type buckets.
pub const OP_TYPE_BUCKETS: usize = 32;

/// Feature width for a given bucket count.
pub const fn feature_width(t_buckets: usize) -> usize {
    t_buckets + 5
}

/// 64-bit FNV-1a. Fixed here so feature layouts never shift between builds.
pub fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn op_type_bucket(op_type: &str, t_buckets: usize) -> usize {
    (fnv1a(op_type) % t_buckets as u64) as usize
}

/// Encode all nodes as an `N x (T + 5)` matrix, rows aligned with node ids.
pub fn encode_features(g: &Graph, t_buckets: usize) -> Tensor {
    let n = g.len();
    let f = feature_width(t_buckets);
    let mut data = vec![0.0; n * f];
    for (i, node) in g.nodes().iter().enumerate() {
        let row = &mut data[i * f..(i + 1) * f];
        row[op_type_bucket(&node.op_type, t_buckets)] = 1.0;
        row[t_buckets] = node.compute_cost.ln_1p();
        row[t_buckets + 1] = (node.output_bytes as f64).ln_1p();
        row[t_buckets + 2] = (node.memory_bytes as f64).ln_1p();
        row[t_buckets + 3] = g.preds(i).len() as f64;
        row[t_buckets + 4] = g.succs(i).len() as f64;
    }
    Tensor::new(vec![n, f], data).expect("feature matrix dimensions are positive")
}
