//! Graph embedding network: nodes start from projected features and run a
//! fixed number of rounds where each node max-pools a sigmoid-transformed
//! view of its neighbors and mixes it back into its own representation
//! through a dense tanh layer.
//!
//! Neighborhoods are the union of predecessors and successors: placement
//! cost depends on who feeds a node and who consumes it. Aggregation is
//! over the full neighborhood (no sampling), so the forward pass is
//! deterministic and permutation-equivariant.

use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::Graph;
use crate::optim::ParamStore;
use crate::tape::{Tape, Value};
use crate::tensor::Tensor;
use crate::Result;

/// Network shape: `layers` aggregation rounds on `hidden`-wide rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnConfig {
    pub layers: usize,
    pub hidden: usize,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig { layers: 3, hidden: 64 }
    }
}

/// Flattened neighbor lists: segment `v` of `flat` (delimited by
/// `offsets`) holds v's predecessors and successors, sorted, deduplicated.
#[derive(Debug, Clone)]
pub struct Neighborhoods {
    pub flat: Rc<Vec<usize>>,
    pub offsets: Vec<usize>,
}

impl Neighborhoods {
    pub fn of(g: &Graph) -> Self {
        let mut flat = Vec::new();
        let mut offsets = Vec::with_capacity(g.len() + 1);
        offsets.push(0);
        for v in 0..g.len() {
            let mut nb: Vec<usize> = g.preds(v).iter().chain(g.succs(v)).copied().collect();
            nb.sort_unstable();
            nb.dedup();
            flat.extend(nb);
            offsets.push(flat.len());
        }
        Neighborhoods { flat: Rc::new(flat), offsets }
    }
}

pub(crate) fn glorot(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Registers all embedding parameters: an input projection
/// `feature_width -> hidden` and per round an aggregator affine
/// (`hidden -> hidden`) plus a combiner (`2 hidden -> hidden`).
pub fn init_params<R: Rng>(
    store: &mut ParamStore,
    cfg: &GnnConfig,
    feature_width: usize,
    rng: &mut R,
) -> Result<()> {
    let h = cfg.hidden;
    let s = glorot(feature_width, h);
    store.insert_uniform("gnn.input.w", &[feature_width, h], -s, s, rng)?;
    store.insert("gnn.input.b", Tensor::zeros(&[h]))?;
    for l in 0..cfg.layers {
        let s = glorot(h, h);
        store.insert_uniform(&format!("gnn.agg{l}.w"), &[h, h], -s, s, rng)?;
        store.insert(&format!("gnn.agg{l}.b"), Tensor::zeros(&[h]))?;
        let s = glorot(2 * h, h);
        store.insert_uniform(&format!("gnn.comb{l}.w"), &[2 * h, h], -s, s, rng)?;
        store.insert(&format!("gnn.comb{l}.b"), Tensor::zeros(&[h]))?;
    }
    Ok(())
}

/// Neighborhood max-pool with explicit weights: every node's row is
/// passed through `sigmoid(x W + b)` once, then each node takes the
/// columnwise max over its neighbors' transformed rows. Nodes without
/// neighbors get a zero row.
pub fn aggregate_with(
    tape: &mut Tape,
    w: &Value,
    b: &Value,
    h: &Value,
    nb: &Neighborhoods,
) -> Result<Value> {
    let z = tape.matmul(h, w)?;
    let z = tape.add_bias(&z, b)?;
    let z = tape.sigmoid(&z);
    if nb.flat.is_empty() {
        // a completely edgeless graph: every pooled row is zero and no
        // gradient reaches the aggregator
        let (n, c) = (z.tensor().rows(), z.tensor().cols());
        return Ok(tape.constant(Tensor::zeros(&[n, c])));
    }
    let gathered = tape.gather_rows(&z, Rc::clone(&nb.flat))?;
    tape.segment_max(&gathered, &nb.offsets)
}

/// Mixes a node's own row with its pooled neighborhood:
/// `tanh(concat(h, agg) W + b)`.
pub fn combine_with(
    tape: &mut Tape,
    w: &Value,
    b: &Value,
    h: &Value,
    agg: &Value,
) -> Result<Value> {
    let cat = tape.concat(&[h.clone(), agg.clone()], 1)?;
    let z = tape.matmul(&cat, w)?;
    let z = tape.add_bias(&z, b)?;
    Ok(tape.tanh(&z))
}

/// [`aggregate_with`] on round `l`'s stored parameters.
pub fn aggregate(
    tape: &mut Tape,
    store: &ParamStore,
    l: usize,
    h: &Value,
    nb: &Neighborhoods,
) -> Result<Value> {
    let w = store.lease(tape, &format!("gnn.agg{l}.w"))?;
    let b = store.lease(tape, &format!("gnn.agg{l}.b"))?;
    aggregate_with(tape, &w, &b, h, nb)
}

/// [`combine_with`] on round `l`'s stored parameters.
pub fn combine(
    tape: &mut Tape,
    store: &ParamStore,
    l: usize,
    h: &Value,
    agg: &Value,
) -> Result<Value> {
    let w = store.lease(tape, &format!("gnn.comb{l}.w"))?;
    let b = store.lease(tape, &format!("gnn.comb{l}.b"))?;
    combine_with(tape, &w, &b, h, agg)
}

/// Full embedding pass: project features to `hidden` through a dense tanh
/// layer, then run `layers` rounds of aggregate + combine. Returns the
/// N x hidden representation matrix.
pub fn embed(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &GnnConfig,
    nb: &Neighborhoods,
    features: &Value,
) -> Result<Value> {
    let w = store.lease(tape, "gnn.input.w")?;
    let b = store.lease(tape, "gnn.input.b")?;
    let z = tape.matmul(features, &w)?;
    let z = tape.add_bias(&z, &b)?;
    let mut h = tape.tanh(&z);
    for l in 0..cfg.layers {
        let agg = aggregate(tape, store, l, &h, nb)?;
        h = combine(tape, store, l, &h, &agg)?;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::check::{finite_diff_grad, max_rel_err};
    use crate::graph::features::{encode_features, feature_width, OP_TYPE_BUCKETS};
    use crate::graph::OpNode;
    use crate::Error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn node(id: usize) -> OpNode {
        OpNode {
            id,
            op_type: format!("op{id}"),
            compute_cost: 1.0 + id as f64,
            output_bytes: 8 * (id as u64 + 1),
            memory_bytes: 4,
            colocation_group: None,
        }
    }

    fn graph(n: usize, edges: Vec<(usize, usize)>) -> Graph {
        Graph::new("g", (0..n).map(node).collect(), edges)
    }

    #[test]
    fn isolated_node_aggregates_to_zero() {
        let g = graph(3, vec![(0, 1)]);
        let nb = Neighborhoods::of(&g);
        let mut t = Tape::new();
        let w = t.constant(Tensor::eye(2));
        let b = t.constant(Tensor::vector(vec![0.0, 0.0]));
        let h = t.constant(Tensor::new(vec![3, 2], vec![0.3, -0.7, 0.1, 0.9, 0.5, 0.5]).unwrap());
        let agg = aggregate_with(&mut t, &w, &b, &h, &nb).unwrap();
        // node 2 has no neighbors
        assert_eq!(agg.tensor().row(2), &[0.0, 0.0]);
    }

    #[test]
    fn single_zero_neighbor_gives_one_half_everywhere() {
        let g = graph(2, vec![(0, 1)]);
        let nb = Neighborhoods::of(&g);
        let mut t = Tape::new();
        let w = t.constant(Tensor::eye(2));
        let b = t.constant(Tensor::vector(vec![0.0, 0.0]));
        let h = t.constant(Tensor::new(vec![2, 2], vec![0.0; 4]).unwrap());
        let agg = aggregate_with(&mut t, &w, &b, &h, &nb).unwrap();
        assert_eq!(agg.tensor().data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn neighbor_listing_order_does_not_matter() {
        let e1 = vec![(0, 2), (1, 2), (2, 3)];
        let e2 = vec![(2, 3), (1, 2), (0, 2)];
        let (g1, g2) = (graph(4, e1), graph(4, e2));
        let (nb1, nb2) = (Neighborhoods::of(&g1), Neighborhoods::of(&g2));
        let mut t = Tape::new();
        let w = t.constant(Tensor::new(vec![2, 2], vec![0.4, -0.2, 0.7, 0.1]).unwrap());
        let b = t.constant(Tensor::vector(vec![0.05, -0.03]));
        let h = t.constant(
            Tensor::new(vec![4, 2], vec![0.3, -0.7, 0.1, 0.9, -0.2, 0.4, 0.8, -0.6]).unwrap(),
        );
        let a1 = aggregate_with(&mut t, &w, &b, &h, &nb1).unwrap();
        let a2 = aggregate_with(&mut t, &w, &b, &h, &nb2).unwrap();
        assert_eq!(a1.tensor().data(), a2.tensor().data());
    }

    #[test]
    fn zero_combiner_weights_give_zero_output() {
        let mut t = Tape::new();
        let w = t.constant(Tensor::new(vec![4, 2], vec![0.0; 8]).unwrap());
        let b = t.constant(Tensor::vector(vec![0.0, 0.0]));
        let h = t.constant(Tensor::new(vec![3, 2], vec![0.5; 6]).unwrap());
        let agg = t.constant(Tensor::new(vec![3, 2], vec![-0.5; 6]).unwrap());
        let out = combine_with(&mut t, &w, &b, &h, &agg).unwrap();
        assert!(out.tensor().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn identity_combiner_passes_own_row_through_the_activation() {
        // top half of the weight matrix is I, bottom half zero: the
        // combiner output is tanh of the node's own representation
        let mut wdata = vec![0.0; 4 * 2];
        wdata[0] = 1.0;
        wdata[3] = 1.0;
        let mut t = Tape::new();
        let w = t.constant(Tensor::new(vec![4, 2], wdata).unwrap());
        let b = t.constant(Tensor::vector(vec![0.0, 0.0]));
        let hdata = vec![0.3, -0.7, 0.1, 0.9, -0.2, 0.4];
        let h = t.constant(Tensor::new(vec![3, 2], hdata.clone()).unwrap());
        let agg = t.constant(Tensor::new(vec![3, 2], vec![0.9; 6]).unwrap());
        let out = combine_with(&mut t, &w, &b, &h, &agg).unwrap();
        let expect: Vec<f64> = hdata.iter().map(|&x| x.tanh()).collect();
        assert_eq!(out.tensor().data(), &expect[..]);
    }

    #[test]
    fn combiner_weight_gradient_matches_finite_differences() {
        let g = graph(4, vec![(0, 1), (0, 2), (1, 3), (2, 3)]);
        let nb = Neighborhoods::of(&g);
        let h0 = Tensor::new(
            vec![4, 2],
            vec![0.3, -0.7, 0.1, 0.9, -0.2, 0.4, 0.8, -0.6],
        )
        .unwrap();
        let aw = Tensor::new(vec![2, 2], vec![0.4, -0.2, 0.7, 0.1]).unwrap();
        let w0 = Tensor::new(vec![4, 2], vec![0.2, -0.1, 0.3, 0.5, -0.4, 0.6, 0.05, -0.3]).unwrap();
        let (analytic, numeric) = finite_diff_grad(&w0, 1e-5, |w, t| {
            let wv = t.leaf("w", w.clone());
            let h = t.constant(h0.clone());
            let awv = t.constant(aw.clone());
            let ab = t.constant(Tensor::vector(vec![0.0, 0.0]));
            let agg = aggregate_with(t, &awv, &ab, &h, &nb)?;
            let cb = t.constant(Tensor::vector(vec![0.01, -0.02]));
            let out = combine_with(t, &wv, &cb, &h, &agg)?;
            let loss = t.sum_all(&out);
            Ok((loss, wv))
        })
        .unwrap();
        assert!(max_rel_err(&analytic, &numeric) < 1e-4);
    }

    #[test]
    fn aggregator_weight_gradient_matches_finite_differences_through_embed() {
        let g = graph(4, vec![(0, 1), (0, 2), (1, 3), (2, 3)]);
        let nb = Neighborhoods::of(&g);
        let cfg = GnnConfig { layers: 2, hidden: 3 };
        let feats = encode_features(&g, OP_TYPE_BUCKETS);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        init_params(&mut store, &cfg, feature_width(OP_TYPE_BUCKETS), &mut rng).unwrap();

        let loss_with = |s: &ParamStore, tape: &mut Tape| -> Value {
            let f = tape.constant(feats.clone());
            let out = embed(tape, s, &cfg, &nb, &f).unwrap();
            tape.sum_all(&out)
        };
        let mut tape = Tape::new();
        let loss = loss_with(&store, &mut tape);
        let table = tape.backward(&loss).unwrap();
        let analytic = store.collect_grads(&tape, &table);

        let w0 = store.get("gnn.agg0.w").unwrap().clone();
        let step = 1e-5;
        let mut numeric = Tensor::zeros(w0.shape());
        for i in 0..w0.numel() {
            let probe = |delta: f64| -> f64 {
                let mut s = store.clone();
                let mut w = w0.clone();
                w.data_mut()[i] += delta;
                s.set("gnn.agg0.w", w).unwrap();
                let mut t = Tape::eval();
                loss_with(&s, &mut t).item()
            };
            numeric.data_mut()[i] = (probe(step) - probe(-step)) / (2.0 * step);
        }
        assert!(max_rel_err(&analytic["gnn.agg0.w"], &numeric) < 1e-4);
        // every registered parameter sits on the loss path here
        for (name, grad) in &analytic {
            assert!(
                grad.data().iter().any(|&x| x != 0.0),
                "parameter {name} received no gradient"
            );
        }
    }

    #[test]
    fn features_gradient_matches_finite_differences_through_embed() {
        let g = graph(5, vec![(0, 2), (1, 2), (2, 3), (2, 4)]);
        let nb = Neighborhoods::of(&g);
        let cfg = GnnConfig { layers: 2, hidden: 3 };
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        init_params(&mut store, &cfg, 4, &mut rng).unwrap();
        let f0 = Tensor::uniform(&[5, 4], -1.0, 1.0, &mut rng);
        let (analytic, numeric) = finite_diff_grad(&f0, 1e-5, |f, t| {
            let fv = t.leaf("f", f.clone());
            let out = embed(t, &store, &cfg, &nb, &fv)?;
            let loss = t.sum_all(&out);
            Ok((loss, fv))
        })
        .unwrap();
        assert!(max_rel_err(&analytic, &numeric) < 1e-4);
    }

    #[test]
    fn edgeless_graph_depends_only_on_own_features() {
        let g1 = graph(3, vec![]);
        let g2 = graph(3, vec![]);
        let cfg = GnnConfig { layers: 1, hidden: 4 };
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        init_params(&mut store, &cfg, 3, &mut rng).unwrap();
        let f = Tensor::new(
            vec![3, 3],
            vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.1, 0.2, 0.3],
        )
        .unwrap();
        let mut t = Tape::eval();
        let fv = t.constant(f);
        let e1 = embed(&mut t, &store, &cfg, &Neighborhoods::of(&g1), &fv).unwrap();
        let e2 = embed(&mut t, &store, &cfg, &Neighborhoods::of(&g2), &fv).unwrap();
        assert_eq!(e1.tensor().data(), e2.tensor().data());
        // rows 0 and 2 share features, so they share embeddings
        assert_eq!(e1.tensor().row(0), e1.tensor().row(2));
        assert_ne!(e1.tensor().row(0), e1.tensor().row(1));
    }

    #[test]
    fn embedding_is_permutation_equivariant() {
        // relabel nodes by pi, permute features the same way: embeddings
        // come out permuted row for row, bitwise
        let edges = vec![(0, 1), (0, 2), (1, 3), (2, 3), (1, 4)];
        let pi = [3usize, 0, 4, 1, 2];
        let g1 = graph(5, edges.clone());
        let edges2: Vec<(usize, usize)> = edges.iter().map(|&(u, v)| (pi[u], pi[v])).collect();
        let g2 = graph(5, edges2);
        let cfg = GnnConfig { layers: 3, hidden: 4 };
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        init_params(&mut store, &cfg, 3, &mut rng).unwrap();
        let f1 = Tensor::uniform(&[5, 3], -1.0, 1.0, &mut rng);
        let mut f2 = vec![0.0; 15];
        for v in 0..5 {
            f2[pi[v] * 3..pi[v] * 3 + 3].copy_from_slice(f1.row(v));
        }
        let mut t = Tape::eval();
        let f1v = t.constant(f1);
        let f2v = t.constant(Tensor::new(vec![5, 3], f2).unwrap());
        let e1 = embed(&mut t, &store, &cfg, &Neighborhoods::of(&g1), &f1v).unwrap();
        let e2 = embed(&mut t, &store, &cfg, &Neighborhoods::of(&g2), &f2v).unwrap();
        for v in 0..5 {
            assert_eq!(e1.tensor().row(v), e2.tensor().row(pi[v]), "node {v}");
        }
    }

    #[test]
    fn embedding_sees_exactly_l_hops() {
        let g = graph(5, vec![(0, 1), (1, 2), (2, 3), (3, 4)]);
        let nb = Neighborhoods::of(&g);
        let cfg = GnnConfig { layers: 2, hidden: 4 };
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        init_params(&mut store, &cfg, 3, &mut rng).unwrap();
        let base = Tensor::uniform(&[5, 3], -1.0, 1.0, &mut rng);
        let mut bumped = base.clone();
        // perturb node 4's features only
        for x in &mut bumped.data_mut()[4 * 3..] {
            *x += 1.0;
        }
        let mut t = Tape::eval();
        let b1 = t.constant(base);
        let b2 = t.constant(bumped);
        let e1 = embed(&mut t, &store, &cfg, &nb, &b1).unwrap();
        let e2 = embed(&mut t, &store, &cfg, &nb, &b2).unwrap();
        // nodes 0 and 1 are more than 2 hops from node 4: bit-identical
        assert_eq!(e1.tensor().row(0), e2.tensor().row(0));
        assert_eq!(e1.tensor().row(1), e2.tensor().row(1));
        // nodes 2..4 are within range and must move
        for v in 2..5 {
            assert_ne!(e1.tensor().row(v), e2.tensor().row(v), "node {v}");
        }
    }

    #[test]
    fn diamond_embedding_matches_hand_rolled_reference() {
        let g = graph(4, vec![(0, 1), (0, 2), (1, 3), (2, 3)]);
        let nb = Neighborhoods::of(&g);
        let cfg = GnnConfig { layers: 2, hidden: 2 };
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        init_params(&mut store, &cfg, 2, &mut rng).unwrap();
        let feats = Tensor::new(vec![4, 2], vec![0.2, -0.4, 0.6, 0.1, -0.3, 0.5, 0.0, 0.7]).unwrap();

        let mut t = Tape::eval();
        let fv = t.constant(feats.clone());
        let out = embed(&mut t, &store, &cfg, &nb, &fv).unwrap();

        // straight-line reference: plain loops over the same parameters
        let neighbors: [&[usize]; 4] = [&[1, 2], &[0, 3], &[0, 3], &[1, 2]];
        let dense = |x: &[Vec<f64>], w: &Tensor, b: &Tensor| -> Vec<Vec<f64>> {
            x.iter()
                .map(|row| {
                    (0..w.shape()[1])
                        .map(|j| {
                            let mut s = 0.0;
                            for (k, &xv) in row.iter().enumerate() {
                                s += xv * w.at2(k, j);
                            }
                            s + b.data()[j]
                        })
                        .collect()
                })
                .collect()
        };
        let mut h: Vec<Vec<f64>> = dense(
            &(0..4).map(|v| feats.row(v).to_vec()).collect::<Vec<_>>(),
            store.get("gnn.input.w").unwrap(),
            store.get("gnn.input.b").unwrap(),
        );
        for row in h.iter_mut() {
            for v in row.iter_mut() {
                *v = v.tanh();
            }
        }
        for l in 0..2 {
            let z = dense(
                &h,
                store.get(&format!("gnn.agg{l}.w")).unwrap(),
                store.get(&format!("gnn.agg{l}.b")).unwrap(),
            );
            let z: Vec<Vec<f64>> = z
                .iter()
                .map(|row| row.iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect())
                .collect();
            let agg: Vec<Vec<f64>> = (0..4)
                .map(|v| {
                    (0..2)
                        .map(|j| {
                            neighbors[v]
                                .iter()
                                .map(|&u| z[u][j])
                                .fold(f64::NEG_INFINITY, f64::max)
                        })
                        .collect()
                })
                .collect();
            let cat: Vec<Vec<f64>> = (0..4)
                .map(|v| h[v].iter().chain(&agg[v]).copied().collect())
                .collect();
            h = dense(
                &cat,
                store.get(&format!("gnn.comb{l}.w")).unwrap(),
                store.get(&format!("gnn.comb{l}.b")).unwrap(),
            );
            for row in h.iter_mut() {
                for v in row.iter_mut() {
                    *v = v.tanh();
                }
            }
        }
        for v in 0..4 {
            for j in 0..2 {
                let got = out.tensor().at2(v, j);
                let want = h[v][j];
                assert!(
                    (got - want).abs() < 1e-12,
                    "node {v} col {j}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn feature_width_mismatch_is_a_dimension_error() {
        let g = graph(2, vec![(0, 1)]);
        let cfg = GnnConfig { layers: 1, hidden: 2 };
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        init_params(&mut store, &cfg, 5, &mut rng).unwrap();
        let mut t = Tape::eval();
        let f = t.constant(Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap());
        let err = embed(&mut t, &store, &cfg, &Neighborhoods::of(&g), &f).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }
}
