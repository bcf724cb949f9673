//! Placement network: a pre-LN transformer over topologically ordered node
//! embeddings that emits a device distribution for every node in one pass.
//!
//! Long graphs are processed in consecutive segments of `S` nodes with
//! segment-level recurrence: each layer attends over the current segment
//! plus the hidden states cached from earlier segments (causal across
//! segments, full within a segment). Cached states carry no gradient.
//! There are no positional embeddings; the graph embedding already encodes
//! topology, and node positions would only invite overfitting to ids.
//!
//! A conditioning layer turns a graph-level summary of the embeddings into
//! one sigmoid gate per conditioned dense layer (both feed-forward denses
//! of every layer, plus the head). Gating the inputs of shared dense
//! layers lets one parameter set serve graphs of very different sizes in
//! the same batch; clamping every gate to one recovers the plain network.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gnn::glorot;
use crate::graph::Graph;
use crate::optim::ParamStore;
use crate::sim::Placement;
use crate::tape::{Tape, Value};
use crate::tensor::Tensor;
use crate::{Error, Result};

const LN_EPS: f64 = 1e-5;

/// Which sublayers run. The reduced variants exist for ablations: they
/// reuse the same parameter set and skip work at forward time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyVariant {
    /// Attention and superposition gating both active.
    Full,
    /// Feed-forward sublayers only; no attention, cache stays empty.
    NoAttention,
    /// Attention active, all gates skipped (identity conditioning).
    NoSuperposition,
}

/// Shape of the placement network. `hidden` must match the embedding
/// width, `max_devices` fixes the head width so one checkpoint serves
/// topologies of any size up to that bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden: usize,
    pub segment: usize,
    pub max_devices: usize,
    pub variant: PolicyVariant,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            layers: 2,
            heads: 4,
            hidden: 64,
            segment: 128,
            max_devices: 8,
            variant: PolicyVariant::Full,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.hidden == 0 {
            return Err(Error::Contract("policy config has a zero dimension".into()));
        }
        if self.segment == 0 {
            return Err(Error::Contract("segment length must be positive".into()));
        }
        if self.max_devices == 0 {
            return Err(Error::Contract("max_devices must be positive".into()));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::Contract(format!(
                "hidden {} not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }
}

/// Per-layer state carried across segments of one graph traversal.
///
/// On a recording tape each layer keeps the gradient-stopped hidden rows
/// of all earlier segments; key/value projections are recomputed from them
/// every segment so parameter gradients stay exact. On an eval tape the
/// projections themselves are cached and only the new segment's rows are
/// projected, which is what makes very long graphs affordable.
///
/// A cache belongs to exactly one traversal: it only grows, and a fresh
/// (or cleared) cache is required before the next graph.
#[derive(Debug, Default)]
pub struct SegmentCache {
    hidden: Vec<Option<Value>>,
    keys: Vec<Option<Value>>,
    values: Vec<Option<Value>>,
    rows: usize,
}

impl SegmentCache {
    pub fn new(layers: usize) -> Self {
        SegmentCache {
            hidden: vec![None; layers],
            keys: vec![None; layers],
            values: vec![None; layers],
            rows: 0,
        }
    }

    pub fn layers(&self) -> usize {
        self.hidden.len()
    }

    /// Number of node rows cached so far (equal across layers).
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn clear(&mut self) {
        for slot in self.hidden.iter_mut().chain(&mut self.keys).chain(&mut self.values) {
            *slot = None;
        }
        self.rows = 0;
    }
}

/// Device distribution for a whole graph: one row per node, in the same
/// row order as the embeddings the forward pass consumed.
#[derive(Debug, Clone)]
pub struct PlacementDistribution {
    pub logits: Value,
    pub log_probs: Value,
}

impl PlacementDistribution {
    pub fn n_nodes(&self) -> usize {
        self.logits.tensor().shape()[0]
    }

    pub fn n_devices(&self) -> usize {
        self.logits.tensor().shape()[1]
    }
}

/// Registers every placement-network parameter under `policy.*`: the
/// conditioner layer, per layer the attention projections, feed-forward
/// pair, layer norms and gate projections, and the shared head. All
/// variants register the full set so checkpoints stay interchangeable.
pub fn init_params<R: Rng>(store: &mut ParamStore, cfg: &PolicyConfig, rng: &mut R) -> Result<()> {
    cfg.validate()?;
    let h = cfg.hidden;
    init_block(store, "policy.cond", h, rng)?;
    for l in 0..cfg.layers {
        let p = format!("policy.l{l}");
        init_block(store, &p, h, rng)?;
        init_gate(store, &format!("{p}.gate1"), h, h, rng)?;
        init_gate(store, &format!("{p}.gate2"), h, 4 * h, rng)?;
    }
    store.insert("policy.lnf.g", Tensor::new(vec![h], vec![1.0; h])?)?;
    store.insert("policy.lnf.b", Tensor::zeros(&[h]))?;
    init_gate(store, "policy.head.gate", h, h, rng)?;
    let s = glorot(h, cfg.max_devices);
    store.insert_uniform("policy.head.w", &[h, cfg.max_devices], -s, s, rng)?;
    store.insert("policy.head.b", Tensor::zeros(&[cfg.max_devices]))?;
    Ok(())
}

/// One attention + feed-forward block: pre-LN gains/biases, q/k/v/output
/// projections and the 4x feed-forward pair.
fn init_block<R: Rng>(store: &mut ParamStore, prefix: &str, h: usize, rng: &mut R) -> Result<()> {
    store.insert(&format!("{prefix}.ln1.g"), Tensor::new(vec![h], vec![1.0; h])?)?;
    store.insert(&format!("{prefix}.ln1.b"), Tensor::zeros(&[h]))?;
    let s = glorot(h, h);
    for w in ["wq", "wk", "wv", "wo"] {
        store.insert_uniform(&format!("{prefix}.attn.{w}"), &[h, h], -s, s, rng)?;
    }
    store.insert(&format!("{prefix}.ln2.g"), Tensor::new(vec![h], vec![1.0; h])?)?;
    store.insert(&format!("{prefix}.ln2.b"), Tensor::zeros(&[h]))?;
    let s = glorot(h, 4 * h);
    store.insert_uniform(&format!("{prefix}.ff1.w"), &[h, 4 * h], -s, s, rng)?;
    store.insert(&format!("{prefix}.ff1.b"), Tensor::zeros(&[4 * h]))?;
    let s = glorot(4 * h, h);
    store.insert_uniform(&format!("{prefix}.ff2.w"), &[4 * h, h], -s, s, rng)?;
    store.insert(&format!("{prefix}.ff2.b"), Tensor::zeros(&[h]))?;
    Ok(())
}

fn init_gate<R: Rng>(
    store: &mut ParamStore,
    prefix: &str,
    h: usize,
    width: usize,
    rng: &mut R,
) -> Result<()> {
    let s = glorot(h, width);
    store.insert_uniform(&format!("{prefix}.w"), &[h, width], -s, s, rng)?;
    store.insert(&format!("{prefix}.b"), Tensor::zeros(&[width]))?;
    Ok(())
}

/// Applies a conditioned dense layer: the input rows are gated elementwise
/// by `gate` (pass `None` to skip conditioning), then pushed through the
/// affine map `w`, `b`. Activation is the caller's business.
pub fn condition(
    tape: &mut Tape,
    gate: Option<&Value>,
    x: &Value,
    w: &Value,
    b: &Value,
) -> Result<Value> {
    let gated = match gate {
        Some(g) => tape.mul_row(x, g)?,
        None => x.clone(),
    };
    let z = tape.matmul(&gated, w)?;
    tape.add_bias(&z, b)
}

/// Sigmoid gates for every conditioned dense layer, derived from one
/// graph-level summary: the mean embedding row run through the conditioner
/// block, then projected per layer.
struct Gates {
    ff1: Vec<Value>,
    ff2: Vec<Value>,
    head: Value,
}

fn build_gates(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &PolicyConfig,
    embeddings: &Value,
) -> Result<Gates> {
    let mean = tape.mean_axis(embeddings, 0)?;
    let mut s = tape.reshape(&mean, &[1, cfg.hidden])?;
    let attn = attend(tape, store, "policy.cond", cfg, &s, None, None)?;
    s = tape.add(&s, &attn)?;
    let ff = feed_forward(tape, store, "policy.cond", &s, None, None)?;
    s = tape.add(&s, &ff)?;
    let mut ff1 = Vec::with_capacity(cfg.layers);
    let mut ff2 = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        ff1.push(gate_vector(tape, store, &format!("policy.l{l}.gate1"), &s, cfg.hidden)?);
        ff2.push(gate_vector(tape, store, &format!("policy.l{l}.gate2"), &s, 4 * cfg.hidden)?);
    }
    let head = gate_vector(tape, store, "policy.head.gate", &s, cfg.hidden)?;
    Ok(Gates { ff1, ff2, head })
}

fn gate_vector(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    summary: &Value,
    width: usize,
) -> Result<Value> {
    let w = store.lease(tape, &format!("{prefix}.w"))?;
    let b = store.lease(tape, &format!("{prefix}.b"))?;
    let z = condition(tape, None, summary, &w, &b)?;
    let g = tape.sigmoid(&z);
    tape.reshape(&g, &[width])
}

/// Multi-head attention sublayer on pre-normalized inputs. Queries come
/// from the current rows; keys and values cover `mem` (earlier segments)
/// followed by the current rows, so attention is causal across segments
/// and unrestricted within one. `kv_cache` supplies already-projected
/// memory on the eval path.
fn attend(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    cfg: &PolicyConfig,
    x: &Value,
    mem: Option<&Value>,
    kv_cache: Option<(&Value, &Value)>,
) -> Result<Value> {
    let g = store.lease(tape, &format!("{prefix}.ln1.g"))?;
    let b = store.lease(tape, &format!("{prefix}.ln1.b"))?;
    let wq = store.lease(tape, &format!("{prefix}.attn.wq"))?;
    let wk = store.lease(tape, &format!("{prefix}.attn.wk"))?;
    let wv = store.lease(tape, &format!("{prefix}.attn.wv"))?;
    let wo = store.lease(tape, &format!("{prefix}.attn.wo"))?;

    let xn = tape.layer_norm(x, &g, &b, LN_EPS)?;
    let q = tape.matmul(&xn, &wq)?;
    let (k, v) = match (mem, kv_cache) {
        (Some(m), None) => {
            // Training path: re-project the gradient-stopped memory every
            // segment so wk/wv still see gradients from extended context.
            let base = tape.concat(&[m.clone(), x.clone()], 0)?;
            let base_n = tape.layer_norm(&base, &g, &b, LN_EPS)?;
            (tape.matmul(&base_n, &wk)?, tape.matmul(&base_n, &wv)?)
        }
        (None, Some((pk, pv))) => {
            let k_cur = tape.matmul(&xn, &wk)?;
            let v_cur = tape.matmul(&xn, &wv)?;
            (tape.concat(&[pk.clone(), k_cur], 0)?, tape.concat(&[pv.clone(), v_cur], 0)?)
        }
        (None, None) => (tape.matmul(&xn, &wk)?, tape.matmul(&xn, &wv)?),
        (Some(_), Some(_)) => {
            return Err(Error::Contract("attend got both raw memory and a kv cache".into()))
        }
    };

    let hd = cfg.hidden / cfg.heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut ctx = Vec::with_capacity(cfg.heads);
    for i in 0..cfg.heads {
        let qi = tape.slice_cols(&q, i * hd, hd)?;
        let ki = tape.slice_cols(&k, i * hd, hd)?;
        let vi = tape.slice_cols(&v, i * hd, hd)?;
        let scores = tape.matmul_nt(&qi, &ki)?;
        let scores = tape.scale(&scores, scale);
        let attn = tape.softmax(&scores, 1)?;
        ctx.push(tape.matmul(&attn, &vi)?);
    }
    let ctx = tape.concat(&ctx, 1)?;
    tape.matmul(&ctx, &wo)
}

/// Feed-forward sublayer on pre-normalized inputs, with both dense layers
/// conditioned when gates are supplied.
fn feed_forward(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    x: &Value,
    gate1: Option<&Value>,
    gate2: Option<&Value>,
) -> Result<Value> {
    let g = store.lease(tape, &format!("{prefix}.ln2.g"))?;
    let b = store.lease(tape, &format!("{prefix}.ln2.b"))?;
    let w1 = store.lease(tape, &format!("{prefix}.ff1.w"))?;
    let b1 = store.lease(tape, &format!("{prefix}.ff1.b"))?;
    let w2 = store.lease(tape, &format!("{prefix}.ff2.w"))?;
    let b2 = store.lease(tape, &format!("{prefix}.ff2.b"))?;
    let xn = tape.layer_norm(x, &g, &b, LN_EPS)?;
    let z = condition(tape, gate1, &xn, &w1, &b1)?;
    let z = tape.relu(&z);
    condition(tape, gate2, &z, &w2, &b2)
}

/// Runs the placement network over embeddings already ordered for
/// segmentation (callers use topological order) and returns the device
/// distribution in that same row order.
///
/// The cache must be fresh: passing one left over from another graph is a
/// contract violation. `n_devices` may be anything up to
/// `cfg.max_devices`; the head's surplus logit columns are sliced off so
/// the same parameters serve every topology size.
pub fn forward_segmented(
    tape: &mut Tape,
    store: &ParamStore,
    cfg: &PolicyConfig,
    embeddings: &Value,
    n_devices: usize,
    cache: &mut SegmentCache,
) -> Result<PlacementDistribution> {
    cfg.validate()?;
    let shape = embeddings.tensor().shape().to_vec();
    if shape.len() != 2 || shape[1] != cfg.hidden {
        return Err(Error::Dimension(format!(
            "embeddings {:?} do not match hidden width {}",
            shape, cfg.hidden
        )));
    }
    let n = shape[0];
    if n == 0 {
        return Err(Error::Contract("placement over an empty graph".into()));
    }
    if n_devices == 0 || n_devices > cfg.max_devices {
        return Err(Error::Contract(format!(
            "n_devices {} outside 1..={}",
            n_devices, cfg.max_devices
        )));
    }
    if !cache.is_empty() {
        return Err(Error::Contract("segment cache not cleared between graphs".into()));
    }
    if cache.layers() != cfg.layers {
        return Err(Error::Contract(format!(
            "cache built for {} layers, config has {}",
            cache.layers(),
            cfg.layers
        )));
    }

    let gates = match cfg.variant {
        PolicyVariant::NoSuperposition => None,
        _ => Some(build_gates(tape, store, cfg, embeddings)?),
    };

    let mut outputs = Vec::new();
    let mut start = 0;
    while start < n {
        let len = cfg.segment.min(n - start);
        let mut x = tape.slice_rows(embeddings, start, len)?;
        for l in 0..cfg.layers {
            if cfg.variant != PolicyVariant::NoAttention {
                let prefix = format!("policy.l{l}");
                let attn = if tape.is_recording() {
                    let out =
                        attend(tape, store, &prefix, cfg, &x, cache.hidden[l].as_ref(), None)?;
                    let stopped = tape.stop_gradient(&x);
                    cache.hidden[l] = Some(match cache.hidden[l].take() {
                        Some(m) => tape.concat(&[m, stopped], 0)?,
                        None => stopped,
                    });
                    out
                } else {
                    let kv = cache.keys[l].as_ref().zip(cache.values[l].as_ref());
                    let out = attend(tape, store, &prefix, cfg, &x, None, kv)?;
                    // attend projected [cached; current]; keep the grown
                    // k/v rows so the next segment reuses them untouched
                    let gk = store.lease(tape, &format!("{prefix}.ln1.g"))?;
                    let bk = store.lease(tape, &format!("{prefix}.ln1.b"))?;
                    let wk = store.lease(tape, &format!("{prefix}.attn.wk"))?;
                    let wv = store.lease(tape, &format!("{prefix}.attn.wv"))?;
                    let xn = tape.layer_norm(&x, &gk, &bk, LN_EPS)?;
                    let k_cur = tape.matmul(&xn, &wk)?;
                    let v_cur = tape.matmul(&xn, &wv)?;
                    cache.keys[l] = Some(match cache.keys[l].take() {
                        Some(m) => tape.concat(&[m, k_cur], 0)?,
                        None => k_cur,
                    });
                    cache.values[l] = Some(match cache.values[l].take() {
                        Some(m) => tape.concat(&[m, v_cur], 0)?,
                        None => v_cur,
                    });
                    out
                };
                x = tape.add(&x, &attn)?;
            }
            let (g1, g2) = match &gates {
                Some(gs) => (Some(&gs.ff1[l]), Some(&gs.ff2[l])),
                None => (None, None),
            };
            let ff = feed_forward(tape, store, &format!("policy.l{l}"), &x, g1, g2)?;
            x = tape.add(&x, &ff)?;
        }
        outputs.push(x);
        if cfg.variant != PolicyVariant::NoAttention {
            cache.rows += len;
        }
        start += len;
    }

    let hidden = if outputs.len() == 1 {
        outputs.pop().unwrap()
    } else {
        tape.concat(&outputs, 0)?
    };
    let g = store.lease(tape, "policy.lnf.g")?;
    let b = store.lease(tape, "policy.lnf.b")?;
    let hn = tape.layer_norm(&hidden, &g, &b, LN_EPS)?;
    let hw = store.lease(tape, "policy.head.w")?;
    let hb = store.lease(tape, "policy.head.b")?;
    let head_gate = gates.as_ref().map(|gs| &gs.head);
    let full = condition(tape, head_gate, &hn, &hw, &hb)?;
    let logits = if n_devices == cfg.max_devices {
        full
    } else {
        tape.slice_cols(&full, 0, n_devices)?
    };
    let log_probs = tape.log_softmax(&logits, 1)?;
    Ok(PlacementDistribution { logits, log_probs })
}

fn row_block(t: &Tensor, start: usize, len: usize) -> Tensor {
    let w = t.cols();
    Tensor::new(vec![len, w], t.data()[start * w..(start + len) * w].to_vec())
        .expect("block dimensions are consistent")
}

fn append_rows(acc: Option<Tensor>, new: &Tensor) -> Tensor {
    match acc {
        None => new.clone(),
        Some(a) => {
            let rows = a.rows() + new.rows();
            let mut data = a.data().to_vec();
            data.extend_from_slice(new.data());
            Tensor::new(vec![rows, a.cols()], data).expect("widths match")
        }
    }
}

/// [`forward_segmented`] for very long graphs: same math, same values,
/// but each segment runs on its own throwaway tape so intermediates are
/// freed as the traversal advances. Only the tensor-level key/value cache
/// and the finished log-probability rows persist, which keeps peak memory
/// proportional to one segment's attention span instead of the whole
/// traversal. Evaluation only; nothing here is differentiable.
pub fn forward_streaming(
    store: &ParamStore,
    cfg: &PolicyConfig,
    embeddings: &Tensor,
    n_devices: usize,
) -> Result<Tensor> {
    cfg.validate()?;
    let shape = embeddings.shape();
    if shape.len() != 2 || shape[1] != cfg.hidden {
        return Err(Error::Dimension(format!(
            "embeddings {:?} do not match hidden width {}",
            shape, cfg.hidden
        )));
    }
    let n = shape[0];
    if n == 0 {
        return Err(Error::Contract("placement over an empty graph".into()));
    }
    if n_devices == 0 || n_devices > cfg.max_devices {
        return Err(Error::Contract(format!(
            "n_devices {} outside 1..={}",
            n_devices, cfg.max_devices
        )));
    }

    // graph-level gates depend on all rows; compute them once up front
    // and replay them into each segment's tape as constants
    let gate_tensors = match cfg.variant {
        PolicyVariant::NoSuperposition => None,
        _ => {
            let mut tape = Tape::eval();
            let e = tape.constant(embeddings.clone());
            let gates = build_gates(&mut tape, store, cfg, &e)?;
            Some((
                gates.ff1.iter().map(|v| v.tensor().clone()).collect::<Vec<_>>(),
                gates.ff2.iter().map(|v| v.tensor().clone()).collect::<Vec<_>>(),
                gates.head.tensor().clone(),
            ))
        }
    };

    let mut keys: Vec<Option<Tensor>> = vec![None; cfg.layers];
    let mut values: Vec<Option<Tensor>> = vec![None; cfg.layers];
    let mut out = Tensor::zeros(&[n, n_devices]);
    let mut start = 0;
    while start < n {
        let len = cfg.segment.min(n - start);
        let mut tape = Tape::eval();
        let mut x = tape.constant(row_block(embeddings, start, len));
        let gates = gate_tensors.as_ref().map(|(f1, f2, hg)| {
            (
                f1.iter().map(|t| tape.constant(t.clone())).collect::<Vec<_>>(),
                f2.iter().map(|t| tape.constant(t.clone())).collect::<Vec<_>>(),
                tape.constant(hg.clone()),
            )
        });
        for l in 0..cfg.layers {
            let prefix = format!("policy.l{l}");
            if cfg.variant != PolicyVariant::NoAttention {
                let kv = match (&keys[l], &values[l]) {
                    (Some(k), Some(v)) => {
                        Some((tape.constant(k.clone()), tape.constant(v.clone())))
                    }
                    _ => None,
                };
                let attn =
                    attend(&mut tape, store, &prefix, cfg, &x, None, kv.as_ref().map(|(k, v)| (k, v)))?;
                let g = store.lease(&mut tape, &format!("{prefix}.ln1.g"))?;
                let b = store.lease(&mut tape, &format!("{prefix}.ln1.b"))?;
                let wk = store.lease(&mut tape, &format!("{prefix}.attn.wk"))?;
                let wv = store.lease(&mut tape, &format!("{prefix}.attn.wv"))?;
                let xn = tape.layer_norm(&x, &g, &b, LN_EPS)?;
                let k_cur = tape.matmul(&xn, &wk)?;
                let v_cur = tape.matmul(&xn, &wv)?;
                keys[l] = Some(append_rows(keys[l].take(), k_cur.tensor()));
                values[l] = Some(append_rows(values[l].take(), v_cur.tensor()));
                x = tape.add(&x, &attn)?;
            }
            let (g1, g2) = match &gates {
                Some((f1, f2, _)) => (Some(&f1[l]), Some(&f2[l])),
                None => (None, None),
            };
            let ff = feed_forward(&mut tape, store, &prefix, &x, g1, g2)?;
            x = tape.add(&x, &ff)?;
        }
        let g = store.lease(&mut tape, "policy.lnf.g")?;
        let b = store.lease(&mut tape, "policy.lnf.b")?;
        let hn = tape.layer_norm(&x, &g, &b, LN_EPS)?;
        let hw = store.lease(&mut tape, "policy.head.w")?;
        let hb = store.lease(&mut tape, "policy.head.b")?;
        let head_gate = gates.as_ref().map(|(_, _, hg)| hg);
        let full = condition(&mut tape, head_gate, &hn, &hw, &hb)?;
        let logits = if n_devices == cfg.max_devices {
            full
        } else {
            tape.slice_cols(&full, 0, n_devices)?
        };
        let lp = tape.log_softmax(&logits, 1)?;
        out.data_mut()[start * n_devices..(start + len) * n_devices]
            .copy_from_slice(lp.tensor().data());
        start += len;
    }
    Ok(out)
}

/// Reference for the segmented forward pass: the same network run as one
/// full attention over all rows with an explicit segment-causal mask (row
/// i may attend row j iff j's segment is not after i's). Materializes the
/// whole N x N score matrix, so it is an equivalence oracle for tests and
/// verification, not a production path.
pub fn masked_reference(
    store: &ParamStore,
    cfg: &PolicyConfig,
    embeddings: &Tensor,
    n_devices: usize,
) -> Result<Tensor> {
    cfg.validate()?;
    let shape = embeddings.shape();
    if shape.len() != 2 || shape[1] != cfg.hidden {
        return Err(Error::Dimension(format!(
            "embeddings {:?} do not match hidden width {}",
            shape, cfg.hidden
        )));
    }
    let n = shape[0];
    if n == 0 {
        return Err(Error::Contract("placement over an empty graph".into()));
    }
    if n_devices == 0 || n_devices > cfg.max_devices {
        return Err(Error::Contract(format!(
            "n_devices {} outside 1..={}",
            n_devices, cfg.max_devices
        )));
    }
    let mut tape = Tape::eval();
    let e = tape.constant(embeddings.clone());
    let gates = match cfg.variant {
        PolicyVariant::NoSuperposition => None,
        _ => Some(build_gates(&mut tape, store, cfg, &e)?),
    };
    let mut mask = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            if j / cfg.segment > i / cfg.segment {
                mask.data_mut()[i * n + j] = -1e30;
            }
        }
    }
    let mask = tape.constant(mask);
    let hd = cfg.hidden / cfg.heads;
    let mut x = e;
    for l in 0..cfg.layers {
        let prefix = format!("policy.l{l}");
        if cfg.variant != PolicyVariant::NoAttention {
            let g = store.lease(&mut tape, &format!("{prefix}.ln1.g"))?;
            let b = store.lease(&mut tape, &format!("{prefix}.ln1.b"))?;
            let wq = store.lease(&mut tape, &format!("{prefix}.attn.wq"))?;
            let wk = store.lease(&mut tape, &format!("{prefix}.attn.wk"))?;
            let wv = store.lease(&mut tape, &format!("{prefix}.attn.wv"))?;
            let wo = store.lease(&mut tape, &format!("{prefix}.attn.wo"))?;
            let xn = tape.layer_norm(&x, &g, &b, LN_EPS)?;
            let q = tape.matmul(&xn, &wq)?;
            let k = tape.matmul(&xn, &wk)?;
            let v = tape.matmul(&xn, &wv)?;
            let mut ctx = Vec::with_capacity(cfg.heads);
            for i in 0..cfg.heads {
                let qi = tape.slice_cols(&q, i * hd, hd)?;
                let ki = tape.slice_cols(&k, i * hd, hd)?;
                let vi = tape.slice_cols(&v, i * hd, hd)?;
                let s = tape.matmul_nt(&qi, &ki)?;
                let s = tape.scale(&s, 1.0 / (hd as f64).sqrt());
                let s = tape.add(&s, &mask)?;
                let a = tape.softmax(&s, 1)?;
                ctx.push(tape.matmul(&a, &vi)?);
            }
            let ctx = tape.concat(&ctx, 1)?;
            let attn = tape.matmul(&ctx, &wo)?;
            x = tape.add(&x, &attn)?;
        }
        let (g1, g2) = match &gates {
            Some(gs) => (Some(&gs.ff1[l]), Some(&gs.ff2[l])),
            None => (None, None),
        };
        let ff = feed_forward(&mut tape, store, &prefix, &x, g1, g2)?;
        x = tape.add(&x, &ff)?;
    }
    let g = store.lease(&mut tape, "policy.lnf.g")?;
    let b = store.lease(&mut tape, "policy.lnf.b")?;
    let hn = tape.layer_norm(&x, &g, &b, LN_EPS)?;
    let hw = store.lease(&mut tape, "policy.head.w")?;
    let hb = store.lease(&mut tape, "policy.head.b")?;
    let full = condition(&mut tape, gates.as_ref().map(|gs| &gs.head), &hn, &hw, &hb)?;
    let logits = tape.slice_cols(&full, 0, n_devices)?;
    let lp = tape.log_softmax(&logits, 1)?;
    Ok(lp.tensor().clone())
}

/// Embeds a graph and runs the placement network end to end: embeddings
/// are permuted into topological order for segmentation and the resulting
/// distribution is permuted back, so its rows line up with node ids.
pub fn graph_distribution(
    tape: &mut Tape,
    store: &ParamStore,
    gnn_cfg: &crate::gnn::GnnConfig,
    cfg: &PolicyConfig,
    g: &Graph,
    n_devices: usize,
) -> Result<PlacementDistribution> {
    use std::rc::Rc;
    if g.is_empty() {
        return Err(Error::Contract("placement over an empty graph".into()));
    }
    let nb = crate::gnn::Neighborhoods::of(g);
    let feats = crate::graph::features::encode_features(g, crate::graph::features::OP_TYPE_BUCKETS);
    let feats = tape.constant(feats);
    let emb = crate::gnn::embed(tape, store, gnn_cfg, &nb, &feats)?;
    let order = g.topo_order()?;
    let mut inverse = vec![0; order.len()];
    for (pos, &v) in order.iter().enumerate() {
        inverse[v] = pos;
    }
    let ordered = tape.gather_rows(&emb, Rc::new(order))?;
    let mut cache = SegmentCache::new(cfg.layers);
    let dist = forward_segmented(tape, store, cfg, &ordered, n_devices, &mut cache)?;
    let logits = tape.gather_rows(&dist.logits, Rc::new(inverse))?;
    let log_probs = tape.log_softmax(&logits, 1)?;
    Ok(PlacementDistribution { logits, log_probs })
}

/// [`graph_distribution`] without a caller-owned tape: embeddings are
/// computed on a throwaway evaluation tape and the policy runs through
/// [`forward_streaming`], so peak memory stays bounded on graphs far past
/// the training scale. Returns the log-probability rows aligned with node
/// ids. Evaluation only; use [`graph_distribution`] when gradients or the
/// full distribution object are needed.
pub fn graph_log_probs_streaming(
    store: &ParamStore,
    gnn_cfg: &crate::gnn::GnnConfig,
    cfg: &PolicyConfig,
    g: &Graph,
    n_devices: usize,
) -> Result<Tensor> {
    if g.is_empty() {
        return Err(Error::Contract("placement over an empty graph".into()));
    }
    let emb = {
        let mut tape = Tape::eval();
        let nb = crate::gnn::Neighborhoods::of(g);
        let feats =
            crate::graph::features::encode_features(g, crate::graph::features::OP_TYPE_BUCKETS);
        let feats = tape.constant(feats);
        crate::gnn::embed(&mut tape, store, gnn_cfg, &nb, &feats)?.tensor().clone()
    };
    let order = g.topo_order()?;
    let ordered = gather_tensor_rows(&emb, &order);
    let lp_topo = forward_streaming(store, cfg, &ordered, n_devices)?;
    let mut inverse = vec![0; order.len()];
    for (pos, &v) in order.iter().enumerate() {
        inverse[v] = pos;
    }
    Ok(gather_tensor_rows(&lp_topo, &inverse))
}

fn gather_tensor_rows(t: &Tensor, rows: &[usize]) -> Tensor {
    let w = t.cols();
    let mut data = Vec::with_capacity(rows.len() * w);
    for &r in rows {
        data.extend_from_slice(&t.data()[r * w..(r + 1) * w]);
    }
    Tensor::new(vec![rows.len(), w], data).expect("gather preserves width")
}

fn check_dist(g: &Graph, dist: &PlacementDistribution) -> Result<()> {
    if dist.n_nodes() != g.len() {
        return Err(Error::Contract(format!(
            "distribution has {} rows for a {}-node graph",
            dist.n_nodes(),
            g.len()
        )));
    }
    Ok(())
}

/// Draws one placement: every decision node (group leaders and ungrouped
/// nodes, ascending) gets an independent categorical draw from its row;
/// followers copy their leader. Returns the placement and the summed
/// log-probability of the decisions taken. Deterministic per seed.
///
/// Rows must line up with node ids, as produced by [`graph_distribution`].
pub fn sample(dist: &PlacementDistribution, g: &Graph, seed: u64) -> Result<(Placement, f64)> {
    check_dist(g, dist)?;
    let lp = dist.log_probs.tensor();
    let d = dist.n_devices();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut devs = vec![0usize; g.len()];
    let mut logp = 0.0;
    for v in g.decision_nodes() {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = d - 1;
        for dev in 0..d {
            acc += lp.at2(v, dev).exp();
            if u < acc {
                chosen = dev;
                break;
            }
        }
        devs[v] = chosen;
        logp += lp.at2(v, chosen);
    }
    let leader = g.group_leader();
    for v in 0..g.len() {
        devs[v] = devs[leader[v]];
    }
    Ok((Placement(devs), logp))
}

/// Deterministic argmax placement; ties go to the lowest device id, and
/// followers copy their group leader like in [`sample`].
pub fn greedy(dist: &PlacementDistribution, g: &Graph) -> Result<Placement> {
    check_dist(g, dist)?;
    greedy_from(dist.log_probs.tensor(), g)
}

/// [`greedy`] on a bare log-probability matrix whose rows line up with
/// node ids, for callers that hold distributions outside a tape.
pub fn greedy_from(log_probs: &Tensor, g: &Graph) -> Result<Placement> {
    if log_probs.rows() != g.len() {
        return Err(Error::Contract(format!(
            "distribution has {} rows for a {}-node graph",
            log_probs.rows(),
            g.len()
        )));
    }
    let d = log_probs.cols();
    let mut devs = vec![0usize; g.len()];
    for v in g.decision_nodes() {
        let mut best = 0;
        for dev in 1..d {
            if log_probs.at2(v, dev) > log_probs.at2(v, best) {
                best = dev;
            }
        }
        devs[v] = best;
    }
    let leader = g.group_leader();
    for v in 0..g.len() {
        devs[v] = devs[leader[v]];
    }
    Ok(Placement(devs))
}
