//! Reverse-mode automatic differentiation on a linear tape.
//!
//! Operations record themselves in forward order; [`Tape::backward`] replays
//! them once in reverse, accumulating gradients keyed by value id. With
//! recording disabled the same operations run value-only, which keeps
//! inference on large graphs within bounded memory (intermediates are freed
//! as their handles go out of scope).
//!
//! Supported broadcasting is deliberately narrow: exact same shape, or one
//! scalar operand. Row-wise bias/gating have dedicated ops instead.

use std::collections::HashMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::{matmul_buf, matmul_nt_buf, transpose_buf, Tensor};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Handle to a tensor produced on a tape. Cheap to clone.
#[derive(Debug, Clone)]
pub struct Value {
    id: u64,
    data: Rc<Tensor>,
}

impl Value {
    fn new(t: Tensor) -> Self {
        Value { id: fresh_id(), data: Rc::new(t) }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    pub fn shape(&self) -> &[usize] {
        self.data.shape()
    }

    pub fn item(&self) -> f64 {
        self.data.item()
    }
}

enum Op {
    Matmul { a: Value, b: Value },
    MatmulNT { a: Value, b: Value },
    Transpose { x: Value },
    Add { a: Value, b: Value },
    Sub { a: Value, b: Value },
    Mul { a: Value, b: Value },
    Minimum { a: Value, b: Value },
    Scale { x: Value, c: f64 },
    AddBias { x: Value, b: Value },
    MulRow { x: Value, g: Value },
    Sigmoid { x: Value },
    Tanh { x: Value },
    Relu { x: Value },
    Exp { x: Value },
    Log { x: Value },
    Softmax { x: Value, axis: usize },
    LogSoftmax { x: Value, axis: usize },
    ReduceMax { x: Value, axis: usize, argmax: Vec<usize> },
    SumAxis { x: Value, axis: usize },
    MeanAxis { x: Value, axis: usize },
    SumAll { x: Value },
    MeanAll { x: Value },
    Concat { xs: Vec<Value>, axis: usize },
    SliceRows { x: Value, start: usize },
    SliceCols { x: Value, start: usize },
    GatherRows { x: Value, idx: Rc<Vec<usize>> },
    GatherPerRow { x: Value, idx: Rc<Vec<usize>> },
    SegmentMax { x: Value, argmax: Vec<usize> },
    LayerNorm { x: Value, gain: Value, bias: Value, stats: Vec<(f64, f64)> },
    Clip { x: Value, lo: f64, hi: f64 },
    StopGradient,
    Reshape { x: Value },
}

struct Record {
    out: Value,
    op: Op,
}

/// Records operations for one forward pass.
///
/// A tape is single-threaded and never shared; parallel evaluation uses one
/// tape per worker over read-only parameter snapshots.
pub struct Tape {
    records: Vec<Record>,
    recording: bool,
    leaves: Vec<(u64, String)>,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

/// Gradients from one backward pass, keyed by value id.
pub struct GradTable {
    by_id: HashMap<u64, Tensor>,
}

impl GradTable {
    pub fn get(&self, v: &Value) -> Option<&Tensor> {
        self.by_id.get(&v.id)
    }

    pub fn get_id(&self, id: u64) -> Option<&Tensor> {
        self.by_id.get(&id)
    }
}

impl Tape {
    /// A recording tape for training.
    pub fn new() -> Self {
        Tape { records: Vec::new(), recording: true, leaves: Vec::new() }
    }

    /// A non-recording tape: operations compute values only. Used for
    /// sampling rollouts and large-graph inference.
    pub fn eval() -> Self {
        Tape { records: Vec::new(), recording: false, leaves: Vec::new() }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn push(&mut self, out: Tensor, op: Op) -> Value {
        let v = Value::new(out);
        if self.recording {
            self.records.push(Record { out: v.clone(), op });
        }
        v
    }

    /// A constant input; never receives gradient.
    pub fn constant(&mut self, t: Tensor) -> Value {
        Value::new(t)
    }

    /// A named trainable leaf. Gradients accumulate for it during backward.
    pub fn leaf(&mut self, name: &str, t: Tensor) -> Value {
        let v = Value::new(t);
        if self.recording {
            self.leaves.push((v.id, name.to_string()));
        }
        v
    }

    /// Named leaves leased onto this tape, in lease order.
    pub fn leaves(&self) -> &[(u64, String)] {
        &self.leaves
    }

    pub fn matmul(&mut self, a: &Value, b: &Value) -> Result<Value> {
        let (at, bt) = (a.tensor(), b.tensor());
        if at.rank() != 2 || bt.rank() != 2 || at.shape()[1] != bt.shape()[0] {
            return Err(Error::Dimension(format!(
                "matmul {:?} x {:?}",
                at.shape(),
                bt.shape()
            )));
        }
        let (m, k, n) = (at.shape()[0], at.shape()[1], bt.shape()[1]);
        let out = Tensor::new(vec![m, n], matmul_buf(at.data(), bt.data(), m, k, n))?;
        Ok(self.push(out, Op::Matmul { a: a.clone(), b: b.clone() }))
    }

    /// `a * b^T` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: &Value, b: &Value) -> Result<Value> {
        let (at, bt) = (a.tensor(), b.tensor());
        if at.rank() != 2 || bt.rank() != 2 || at.shape()[1] != bt.shape()[1] {
            return Err(Error::Dimension(format!(
                "matmul_nt {:?} x {:?}^T",
                at.shape(),
                bt.shape()
            )));
        }
        let (m, k, n) = (at.shape()[0], at.shape()[1], bt.shape()[0]);
        let out = Tensor::new(vec![m, n], matmul_nt_buf(at.data(), bt.data(), m, k, n))?;
        Ok(self.push(out, Op::MatmulNT { a: a.clone(), b: b.clone() }))
    }

    pub fn transpose(&mut self, x: &Value) -> Result<Value> {
        let xt = x.tensor();
        if xt.rank() != 2 {
            return Err(Error::Dimension(format!("transpose of rank-{} tensor", xt.rank())));
        }
        let (r, c) = (xt.shape()[0], xt.shape()[1]);
        let out = Tensor::new(vec![c, r], transpose_buf(xt.data(), r, c))?;
        Ok(self.push(out, Op::Transpose { x: x.clone() }))
    }

    fn binary_shapes(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
        if a.shape() == b.shape() || a.is_scalar() || b.is_scalar() {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "{what}: incompatible shapes {:?} vs {:?}",
                a.shape(),
                b.shape()
            )))
        }
    }

    fn binary(
        &mut self,
        a: &Value,
        b: &Value,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Value> {
        let (at, bt) = (a.tensor(), b.tensor());
        Self::binary_shapes(at, bt, what)?;
        let out = if at.shape() == bt.shape() {
            Tensor::new(
                at.shape().to_vec(),
                at.data().iter().zip(bt.data()).map(|(&x, &y)| f(x, y)).collect(),
            )?
        } else if bt.is_scalar() {
            let s = bt.item();
            at.map(|x| f(x, s))
        } else {
            let s = at.item();
            bt.map(|y| f(s, y))
        };
        Ok(self.push(out, op))
    }

    pub fn add(&mut self, a: &Value, b: &Value) -> Result<Value> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add { a: a.clone(), b: b.clone() })
    }

    pub fn sub(&mut self, a: &Value, b: &Value) -> Result<Value> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub { a: a.clone(), b: b.clone() })
    }

    pub fn mul(&mut self, a: &Value, b: &Value) -> Result<Value> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul { a: a.clone(), b: b.clone() })
    }

    /// Elementwise minimum. Ties route gradient to the first operand.
    pub fn minimum(&mut self, a: &Value, b: &Value) -> Result<Value> {
        self.binary(
            a,
            b,
            "minimum",
            |x, y| if x <= y { x } else { y },
            Op::Minimum { a: a.clone(), b: b.clone() },
        )
    }

    pub fn scale(&mut self, x: &Value, c: f64) -> Value {
        let out = x.tensor().map(|v| v * c);
        self.push(out, Op::Scale { x: x.clone(), c })
    }

    /// `x + b` per row: `x` is `m x n`, `b` has length `n`.
    pub fn add_bias(&mut self, x: &Value, b: &Value) -> Result<Value> {
        let (xt, bt) = (x.tensor(), b.tensor());
        if xt.rank() != 2 || bt.rank() != 1 || bt.shape()[0] != xt.shape()[1] {
            return Err(Error::Dimension(format!(
                "add_bias {:?} + {:?}",
                xt.shape(),
                bt.shape()
            )));
        }
        let n = xt.shape()[1];
        let mut data = xt.data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, &bb) in row.iter_mut().zip(bt.data()) {
                *v += bb;
            }
        }
        let out = Tensor::new(xt.shape().to_vec(), data)?;
        Ok(self.push(out, Op::AddBias { x: x.clone(), b: b.clone() }))
    }

    /// `x * g` per row: every row of `x` is gated elementwise by `g`.
    pub fn mul_row(&mut self, x: &Value, g: &Value) -> Result<Value> {
        let (xt, gt) = (x.tensor(), g.tensor());
        if xt.rank() != 2 || gt.rank() != 1 || gt.shape()[0] != xt.shape()[1] {
            return Err(Error::Dimension(format!(
                "mul_row {:?} * {:?}",
                xt.shape(),
                gt.shape()
            )));
        }
        let n = xt.shape()[1];
        let mut data = xt.data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, &gg) in row.iter_mut().zip(gt.data()) {
                *v *= gg;
            }
        }
        let out = Tensor::new(xt.shape().to_vec(), data)?;
        Ok(self.push(out, Op::MulRow { x: x.clone(), g: g.clone() }))
    }

    pub fn sigmoid(&mut self, x: &Value) -> Value {
        let out = x.tensor().map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(out, Op::Sigmoid { x: x.clone() })
    }

    pub fn tanh(&mut self, x: &Value) -> Value {
        let out = x.tensor().map(f64::tanh);
        self.push(out, Op::Tanh { x: x.clone() })
    }

    pub fn relu(&mut self, x: &Value) -> Value {
        let out = x.tensor().map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(out, Op::Relu { x: x.clone() })
    }

    pub fn exp(&mut self, x: &Value) -> Value {
        let out = x.tensor().map(f64::exp);
        self.push(out, Op::Exp { x: x.clone() })
    }

    pub fn log(&mut self, x: &Value) -> Result<Value> {
        if x.tensor().data().iter().any(|&v| v <= 0.0) {
            return Err(Error::Domain("log of non-positive value".into()));
        }
        let out = x.tensor().map(f64::ln);
        Ok(self.push(out, Op::Log { x: x.clone() }))
    }

    pub fn softmax(&mut self, x: &Value, axis: usize) -> Result<Value> {
        let out = group_map(x.tensor(), axis, softmax_group)?;
        Ok(self.push(out, Op::Softmax { x: x.clone(), axis }))
    }

    pub fn log_softmax(&mut self, x: &Value, axis: usize) -> Result<Value> {
        let out = group_map(x.tensor(), axis, log_softmax_group)?;
        Ok(self.push(out, Op::LogSoftmax { x: x.clone(), axis }))
    }

    /// Max along `axis`. Gradient flows only to the first maximal element of
    /// each reduction group.
    pub fn reduce_max(&mut self, x: &Value, axis: usize) -> Result<Value> {
        let xt = x.tensor();
        let mut argmax = Vec::new();
        let out = reduce_groups(xt, axis, |group| {
            let (mut best, mut best_i) = (f64::NEG_INFINITY, 0);
            for (i, &v) in group.iter().enumerate() {
                if v > best {
                    best = v;
                    best_i = i;
                }
            }
            argmax.push(best_i);
            best
        })?;
        Ok(self.push(out, Op::ReduceMax { x: x.clone(), axis, argmax }))
    }

    pub fn sum_axis(&mut self, x: &Value, axis: usize) -> Result<Value> {
        let out = reduce_groups(x.tensor(), axis, |group| group.iter().sum())?;
        Ok(self.push(out, Op::SumAxis { x: x.clone(), axis }))
    }

    pub fn mean_axis(&mut self, x: &Value, axis: usize) -> Result<Value> {
        let out = reduce_groups(x.tensor(), axis, |group| {
            group.iter().sum::<f64>() / group.len() as f64
        })?;
        Ok(self.push(out, Op::MeanAxis { x: x.clone(), axis }))
    }

    pub fn sum_all(&mut self, x: &Value) -> Value {
        let s: f64 = x.tensor().data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll { x: x.clone() })
    }

    pub fn mean_all(&mut self, x: &Value) -> Value {
        let t = x.tensor();
        let s: f64 = t.data().iter().sum();
        self.push(Tensor::scalar(s / t.numel() as f64), Op::MeanAll { x: x.clone() })
    }

    pub fn concat(&mut self, xs: &[Value], axis: usize) -> Result<Value> {
        if xs.is_empty() {
            return Err(Error::Contract("concat of zero tensors".into()));
        }
        let rank = xs[0].tensor().rank();
        if xs.iter().any(|v| v.tensor().rank() != rank) || axis >= rank.max(1) {
            return Err(Error::Dimension("concat: mismatched ranks or bad axis".into()));
        }
        let out = match (rank, axis) {
            (1, 0) => {
                let mut data = Vec::new();
                for v in xs {
                    data.extend_from_slice(v.tensor().data());
                }
                Tensor::vector(data)
            }
            (2, 0) => {
                let cols = xs[0].tensor().shape()[1];
                if xs.iter().any(|v| v.tensor().shape()[1] != cols) {
                    return Err(Error::Dimension("concat axis 0: column mismatch".into()));
                }
                let rows = xs.iter().map(|v| v.tensor().shape()[0]).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for v in xs {
                    data.extend_from_slice(v.tensor().data());
                }
                Tensor::new(vec![rows, cols], data)?
            }
            (2, 1) => {
                let rows = xs[0].tensor().shape()[0];
                if xs.iter().any(|v| v.tensor().shape()[0] != rows) {
                    return Err(Error::Dimension("concat axis 1: row mismatch".into()));
                }
                let cols: usize = xs.iter().map(|v| v.tensor().shape()[1]).sum();
                let mut data = vec![0.0; rows * cols];
                let mut col0 = 0;
                for v in xs {
                    let vt = v.tensor();
                    let vc = vt.shape()[1];
                    for r in 0..rows {
                        data[r * cols + col0..r * cols + col0 + vc]
                            .copy_from_slice(vt.row(r));
                    }
                    col0 += vc;
                }
                Tensor::new(vec![rows, cols], data)?
            }
            _ => return Err(Error::Dimension(format!("concat: rank {rank} axis {axis}"))),
        };
        Ok(self.push(out, Op::Concat { xs: xs.to_vec(), axis }))
    }

    pub fn slice_rows(&mut self, x: &Value, start: usize, len: usize) -> Result<Value> {
        let xt = x.tensor();
        if xt.rank() != 2 || start + len > xt.shape()[0] || len == 0 {
            return Err(Error::Dimension(format!(
                "slice_rows [{start}, {}) of {:?}",
                start + len,
                xt.shape()
            )));
        }
        let c = xt.shape()[1];
        let data = xt.data()[start * c..(start + len) * c].to_vec();
        let out = Tensor::new(vec![len, c], data)?;
        Ok(self.push(out, Op::SliceRows { x: x.clone(), start }))
    }

    pub fn slice_cols(&mut self, x: &Value, start: usize, len: usize) -> Result<Value> {
        let xt = x.tensor();
        if xt.rank() != 2 || start + len > xt.shape()[1] || len == 0 {
            return Err(Error::Dimension(format!(
                "slice_cols [{start}, {}) of {:?}",
                start + len,
                xt.shape()
            )));
        }
        let (r, c) = (xt.shape()[0], xt.shape()[1]);
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&xt.data()[i * c + start..i * c + start + len]);
        }
        let out = Tensor::new(vec![r, len], data)?;
        Ok(self.push(out, Op::SliceCols { x: x.clone(), start }))
    }

    /// Rows of `x` at the given indices, in order (duplicates allowed).
    pub fn gather_rows(&mut self, x: &Value, idx: Rc<Vec<usize>>) -> Result<Value> {
        let xt = x.tensor();
        if xt.rank() != 2 {
            return Err(Error::Dimension("gather_rows on non-matrix".into()));
        }
        let (r, c) = (xt.shape()[0], xt.shape()[1]);
        if idx.iter().any(|&i| i >= r) {
            return Err(Error::Contract("gather_rows index out of range".into()));
        }
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            data.extend_from_slice(xt.row(i));
        }
        let out = Tensor::new(vec![idx.len(), c], data)?;
        Ok(self.push(out, Op::GatherRows { x: x.clone(), idx }))
    }

    /// One element per row: `out[i] = x[i, idx[i]]`.
    pub fn gather_per_row(&mut self, x: &Value, idx: Rc<Vec<usize>>) -> Result<Value> {
        let xt = x.tensor();
        if xt.rank() != 2 || idx.len() != xt.shape()[0] {
            return Err(Error::Dimension("gather_per_row: index length != rows".into()));
        }
        let c = xt.shape()[1];
        if idx.iter().any(|&j| j >= c) {
            return Err(Error::Contract("gather_per_row index out of range".into()));
        }
        let data = idx.iter().enumerate().map(|(i, &j)| xt.at2(i, j)).collect();
        let out = Tensor::vector(data);
        Ok(self.push(out, Op::GatherPerRow { x: x.clone(), idx }))
    }

    /// Column-wise max over row segments. `offsets` has length
    /// `num_segments + 1`; segment `s` covers rows `offsets[s]..offsets[s+1]`.
    /// Empty segments produce zero rows and receive no gradient; ties route
    /// to the earliest row in the segment.
    pub fn segment_max(&mut self, x: &Value, offsets: &[usize]) -> Result<Value> {
        let xt = x.tensor();
        if xt.rank() != 2 || offsets.is_empty() || *offsets.last().unwrap() != xt.shape()[0] {
            return Err(Error::Contract(format!(
                "segment_max: offsets must end at row count {}",
                xt.shape().first().copied().unwrap_or(0)
            )));
        }
        if offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Contract("segment_max: offsets must be nondecreasing".into()));
        }
        let segs = offsets.len() - 1;
        let c = xt.shape()[1];
        let mut data = vec![0.0; segs * c];
        let mut argmax = vec![usize::MAX; segs * c];
        for s in 0..segs {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            if lo == hi {
                continue;
            }
            for j in 0..c {
                let (mut best, mut best_r) = (f64::NEG_INFINITY, lo);
                for r in lo..hi {
                    let v = xt.at2(r, j);
                    if v > best {
                        best = v;
                        best_r = r;
                    }
                }
                data[s * c + j] = best;
                argmax[s * c + j] = best_r;
            }
        }
        let out = Tensor::new(vec![segs, c], data)?;
        Ok(self.push(out, Op::SegmentMax { x: x.clone(), argmax }))
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: &Value, gain: &Value, bias: &Value, eps: f64) -> Result<Value> {
        let (xt, gt, bt) = (x.tensor(), gain.tensor(), bias.tensor());
        if xt.rank() != 2
            || gt.rank() != 1
            || bt.rank() != 1
            || gt.shape()[0] != xt.shape()[1]
            || bt.shape()[0] != xt.shape()[1]
        {
            return Err(Error::Dimension(format!(
                "layer_norm {:?} gain {:?} bias {:?}",
                xt.shape(),
                gt.shape(),
                bt.shape()
            )));
        }
        let (m, n) = (xt.shape()[0], xt.shape()[1]);
        let mut data = vec![0.0; m * n];
        let mut stats = Vec::with_capacity(m);
        for i in 0..m {
            let row = xt.row(i);
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
            let istd = 1.0 / (var + eps).sqrt();
            stats.push((mu, istd));
            for j in 0..n {
                data[i * n + j] = (row[j] - mu) * istd * gt.data()[j] + bt.data()[j];
            }
        }
        let out = Tensor::new(vec![m, n], data)?;
        Ok(self.push(
            out,
            Op::LayerNorm { x: x.clone(), gain: gain.clone(), bias: bias.clone(), stats },
        ))
    }

    /// Clamp to `[lo, hi]`; gradient passes only where the input is inside.
    pub fn clip(&mut self, x: &Value, lo: f64, hi: f64) -> Value {
        let out = x.tensor().map(|v| v.clamp(lo, hi));
        self.push(out, Op::Clip { x: x.clone(), lo, hi })
    }

    /// Identity forward; blocks all gradient flow upstream.
    pub fn stop_gradient(&mut self, x: &Value) -> Value {
        self.push(x.tensor().clone(), Op::StopGradient)
    }

    pub fn reshape(&mut self, x: &Value, shape: &[usize]) -> Result<Value> {
        let xt = x.tensor();
        if shape.iter().product::<usize>() != xt.numel() {
            return Err(Error::Dimension(format!(
                "reshape {:?} -> {:?}",
                xt.shape(),
                shape
            )));
        }
        let out = Tensor::new(shape.to_vec(), xt.data().to_vec())?;
        Ok(self.push(out, Op::Reshape { x: x.clone() }))
    }

    /// Reverse pass from a scalar loss. Returns gradients for every value
    /// that influences the loss; leaves without influence are simply absent
    /// (callers fill in zeros for their parameter sets).
    pub fn backward(&self, loss: &Value) -> Result<GradTable> {
        if !loss.tensor().is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        if !self.recording {
            return Err(Error::Contract("backward on a non-recording tape".into()));
        }
        let mut grads: HashMap<u64, Tensor> = HashMap::new();
        grads.insert(loss.id, Tensor::full(loss.shape(), 1.0));

        for rec in self.records.iter().rev() {
            let Some(g_out) = grads.get(&rec.out.id) else { continue };
            let g_out = g_out.clone();
            accumulate(&mut grads, &rec.op, &rec.out, &g_out)?;
        }
        Ok(GradTable { by_id: grads })
    }
}

fn acc(grads: &mut HashMap<u64, Tensor>, v: &Value, g: Tensor) {
    match grads.get_mut(&v.id) {
        Some(slot) => slot.add_assign(&g),
        None => {
            grads.insert(v.id, g);
        }
    }
}

/// Gradient for one operand of a binary op under scalar broadcasting: if the
/// operand is a scalar against a non-scalar output, its gradient is the sum.
fn bcast_back(operand: &Tensor, g: &Tensor) -> Tensor {
    if operand.shape() == g.shape() {
        g.clone()
    } else {
        Tensor::scalar(g.data().iter().sum())
    }
}

fn accumulate(
    grads: &mut HashMap<u64, Tensor>,
    op: &Op,
    out: &Value,
    g: &Tensor,
) -> Result<()> {
    match op {
        Op::StopGradient => {}
        Op::Matmul { a, b } => {
            let (at, bt) = (a.tensor(), b.tensor());
            let (m, k, n) = (at.shape()[0], at.shape()[1], bt.shape()[1]);
            let da = matmul_nt_buf(g.data(), bt.data(), m, n, k);
            let a_t = transpose_buf(at.data(), m, k);
            let db = matmul_buf(&a_t, g.data(), k, m, n);
            acc(grads, a, Tensor::new(vec![m, k], da)?);
            acc(grads, b, Tensor::new(vec![k, n], db)?);
        }
        Op::MatmulNT { a, b } => {
            let (at, bt) = (a.tensor(), b.tensor());
            let (m, k, n) = (at.shape()[0], at.shape()[1], bt.shape()[0]);
            let da = matmul_buf(g.data(), bt.data(), m, n, k);
            let g_t = transpose_buf(g.data(), m, n);
            let db = matmul_buf(&g_t, at.data(), n, m, k);
            acc(grads, a, Tensor::new(vec![m, k], da)?);
            acc(grads, b, Tensor::new(vec![n, k], db)?);
        }
        Op::Transpose { x } => {
            let (r, c) = (g.shape()[0], g.shape()[1]);
            acc(grads, x, Tensor::new(vec![c, r], transpose_buf(g.data(), r, c))?);
        }
        Op::Add { a, b } => {
            acc(grads, a, bcast_back(a.tensor(), g));
            acc(grads, b, bcast_back(b.tensor(), g));
        }
        Op::Sub { a, b } => {
            acc(grads, a, bcast_back(a.tensor(), g));
            let neg = g.map(|v| -v);
            acc(grads, b, bcast_back(b.tensor(), &neg));
        }
        Op::Mul { a, b } => {
            let (at, bt) = (a.tensor(), b.tensor());
            let ga = mul_like(g, bt);
            let gb = mul_like(g, at);
            acc(grads, a, bcast_back(at, &ga));
            acc(grads, b, bcast_back(bt, &gb));
        }
        Op::Minimum { a, b } => {
            let (at, bt) = (a.tensor(), b.tensor());
            let pick_a = |i: usize| -> bool {
                let x = if at.is_scalar() { at.item() } else { at.data()[i] };
                let y = if bt.is_scalar() { bt.item() } else { bt.data()[i] };
                x <= y
            };
            let mut ga = g.clone();
            let mut gb = g.clone();
            for i in 0..g.numel() {
                if pick_a(i) {
                    gb.data_mut()[i] = 0.0;
                } else {
                    ga.data_mut()[i] = 0.0;
                }
            }
            acc(grads, a, bcast_back(at, &ga));
            acc(grads, b, bcast_back(bt, &gb));
        }
        Op::Scale { x, c } => {
            acc(grads, x, g.map(|v| v * c));
        }
        Op::AddBias { x, b } => {
            acc(grads, x, g.clone());
            let n = b.tensor().shape()[0];
            let mut gb = vec![0.0; n];
            for row in g.data().chunks(n) {
                for (s, &v) in gb.iter_mut().zip(row) {
                    *s += v;
                }
            }
            acc(grads, b, Tensor::vector(gb));
        }
        Op::MulRow { x, g: gate } => {
            let n = gate.tensor().shape()[0];
            let mut gx = g.clone();
            for row in gx.data_mut().chunks_mut(n) {
                for (v, &gg) in row.iter_mut().zip(gate.tensor().data()) {
                    *v *= gg;
                }
            }
            acc(grads, x, gx);
            let mut gg = vec![0.0; n];
            for (g_row, x_row) in g.data().chunks(n).zip(x.tensor().data().chunks(n)) {
                for ((s, &gv), &xv) in gg.iter_mut().zip(g_row).zip(x_row) {
                    *s += gv * xv;
                }
            }
            acc(grads, gate, Tensor::vector(gg));
        }
        Op::Sigmoid { x } => {
            let o = out.tensor();
            let gx = Tensor::new(
                g.shape().to_vec(),
                g.data()
                    .iter()
                    .zip(o.data())
                    .map(|(&gv, &s)| gv * s * (1.0 - s))
                    .collect(),
            )?;
            acc(grads, x, gx);
        }
        Op::Tanh { x } => {
            let o = out.tensor();
            let gx = Tensor::new(
                g.shape().to_vec(),
                g.data()
                    .iter()
                    .zip(o.data())
                    .map(|(&gv, &t)| gv * (1.0 - t * t))
                    .collect(),
            )?;
            acc(grads, x, gx);
        }
        Op::Relu { x } => {
            let xt = x.tensor();
            let gx = Tensor::new(
                g.shape().to_vec(),
                g.data()
                    .iter()
                    .zip(xt.data())
                    .map(|(&gv, &v)| if v > 0.0 { gv } else { 0.0 })
                    .collect(),
            )?;
            acc(grads, x, gx);
        }
        Op::Exp { x } => {
            let o = out.tensor();
            let gx = Tensor::new(
                g.shape().to_vec(),
                g.data().iter().zip(o.data()).map(|(&gv, &e)| gv * e).collect(),
            )?;
            acc(grads, x, gx);
        }
        Op::Log { x } => {
            let xt = x.tensor();
            let gx = Tensor::new(
                g.shape().to_vec(),
                g.data().iter().zip(xt.data()).map(|(&gv, &v)| gv / v).collect(),
            )?;
            acc(grads, x, gx);
        }
        Op::Softmax { x, axis } => {
            let y = out.tensor();
            let gx = group_backward(y, g, *axis, |y_g, g_g, out_g| {
                let dot: f64 = y_g.iter().zip(g_g.iter()).map(|(&a, &b)| a * b).sum();
                for i in 0..y_g.len() {
                    out_g[i] = y_g[i] * (g_g[i] - dot);
                }
            })?;
            acc(grads, x, gx);
        }
        Op::LogSoftmax { x, axis } => {
            let y = out.tensor();
            let gx = group_backward(y, g, *axis, |y_g, g_g, out_g| {
                let gsum: f64 = g_g.iter().sum();
                for i in 0..y_g.len() {
                    out_g[i] = g_g[i] - y_g[i].exp() * gsum;
                }
            })?;
            acc(grads, x, gx);
        }
        Op::ReduceMax { x, axis, argmax } => {
            let xt = x.tensor();
            let mut gx = Tensor::zeros(xt.shape());
            scatter_reduce(xt, *axis, argmax, g, &mut gx);
            acc(grads, x, gx);
        }
        Op::SumAxis { x, axis } => {
            let xt = x.tensor();
            let mut gx = Tensor::zeros(xt.shape());
            broadcast_reduce(xt, *axis, g, &mut gx, 1.0);
            acc(grads, x, gx);
        }
        Op::MeanAxis { x, axis } => {
            let xt = x.tensor();
            let len = reduce_group_len(xt, *axis);
            let mut gx = Tensor::zeros(xt.shape());
            broadcast_reduce(xt, *axis, g, &mut gx, 1.0 / len as f64);
            acc(grads, x, gx);
        }
        Op::SumAll { x } => {
            let gv = g.item();
            acc(grads, x, Tensor::full(x.shape(), gv));
        }
        Op::MeanAll { x } => {
            let gv = g.item() / x.tensor().numel() as f64;
            acc(grads, x, Tensor::full(x.shape(), gv));
        }
        Op::Concat { xs, axis } => {
            match (xs[0].tensor().rank(), axis) {
                (1, 0) => {
                    let mut off = 0;
                    for v in xs {
                        let n = v.tensor().numel();
                        acc(grads, v, Tensor::vector(g.data()[off..off + n].to_vec()));
                        off += n;
                    }
                }
                (2, 0) => {
                    let cols = xs[0].tensor().shape()[1];
                    let mut row0 = 0;
                    for v in xs {
                        let r = v.tensor().shape()[0];
                        let gv = g.data()[row0 * cols..(row0 + r) * cols].to_vec();
                        acc(grads, v, Tensor::new(vec![r, cols], gv)?);
                        row0 += r;
                    }
                }
                (2, 1) => {
                    let rows = xs[0].tensor().shape()[0];
                    let total_cols = g.shape()[1];
                    let mut col0 = 0;
                    for v in xs {
                        let c = v.tensor().shape()[1];
                        let mut gv = vec![0.0; rows * c];
                        for r in 0..rows {
                            gv[r * c..(r + 1) * c].copy_from_slice(
                                &g.data()[r * total_cols + col0..r * total_cols + col0 + c],
                            );
                        }
                        acc(grads, v, Tensor::new(vec![rows, c], gv)?);
                        col0 += c;
                    }
                }
                _ => unreachable!("concat validated on forward"),
            }
        }
        Op::SliceRows { x, start } => {
            let xt = x.tensor();
            let c = xt.shape()[1];
            let mut gx = Tensor::zeros(xt.shape());
            gx.data_mut()[start * c..start * c + g.numel()].copy_from_slice(g.data());
            acc(grads, x, gx);
        }
        Op::SliceCols { x, start } => {
            let xt = x.tensor();
            let (r, c) = (xt.shape()[0], xt.shape()[1]);
            let w = g.shape()[1];
            let mut gx = Tensor::zeros(&[r, c]);
            for i in 0..r {
                gx.data_mut()[i * c + start..i * c + start + w]
                    .copy_from_slice(&g.data()[i * w..(i + 1) * w]);
            }
            acc(grads, x, gx);
        }
        Op::GatherRows { x, idx } => {
            let xt = x.tensor();
            let c = xt.shape()[1];
            let mut gx = Tensor::zeros(xt.shape());
            for (pos, &i) in idx.iter().enumerate() {
                let src = &g.data()[pos * c..(pos + 1) * c];
                let dst = &mut gx.data_mut()[i * c..(i + 1) * c];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
            acc(grads, x, gx);
        }
        Op::GatherPerRow { x, idx } => {
            let xt = x.tensor();
            let c = xt.shape()[1];
            let mut gx = Tensor::zeros(xt.shape());
            for (i, &j) in idx.iter().enumerate() {
                gx.data_mut()[i * c + j] += g.data()[i];
            }
            acc(grads, x, gx);
        }
        Op::SegmentMax { x, argmax } => {
            let xt = x.tensor();
            let c = xt.shape()[1];
            let mut gx = Tensor::zeros(xt.shape());
            for (flat, &r) in argmax.iter().enumerate() {
                if r == usize::MAX {
                    continue;
                }
                let j = flat % c;
                gx.data_mut()[r * c + j] += g.data()[flat];
            }
            acc(grads, x, gx);
        }
        Op::LayerNorm { x, gain, bias, stats } => {
            let (xt, gt) = (x.tensor(), gain.tensor());
            let (m, n) = (xt.shape()[0], xt.shape()[1]);
            let mut gx = Tensor::zeros(&[m, n]);
            let mut ggain = vec![0.0; n];
            let mut gbias = vec![0.0; n];
            for i in 0..m {
                let (mu, istd) = stats[i];
                let x_row = xt.row(i);
                let g_row = &g.data()[i * n..(i + 1) * n];
                let xhat: Vec<f64> = x_row.iter().map(|&v| (v - mu) * istd).collect();
                for j in 0..n {
                    ggain[j] += g_row[j] * xhat[j];
                    gbias[j] += g_row[j];
                }
                let dxhat: Vec<f64> =
                    (0..n).map(|j| g_row[j] * gt.data()[j]).collect();
                let mean_dxhat = dxhat.iter().sum::<f64>() / n as f64;
                let mean_dxhat_xhat =
                    dxhat.iter().zip(&xhat).map(|(&a, &b)| a * b).sum::<f64>() / n as f64;
                let gx_row = &mut gx.data_mut()[i * n..(i + 1) * n];
                for j in 0..n {
                    gx_row[j] = istd * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
                }
            }
            acc(grads, x, gx);
            acc(grads, gain, Tensor::vector(ggain));
            acc(grads, bias, Tensor::vector(gbias));
        }
        Op::Clip { x, lo, hi } => {
            let xt = x.tensor();
            let gx = Tensor::new(
                g.shape().to_vec(),
                g.data()
                    .iter()
                    .zip(xt.data())
                    .map(|(&gv, &v)| if v >= *lo && v <= *hi { gv } else { 0.0 })
                    .collect(),
            )?;
            acc(grads, x, gx);
        }
        Op::Reshape { x } => {
            acc(
                grads,
                x,
                Tensor::new(x.shape().to_vec(), g.data().to_vec())?,
            );
        }
    }
    Ok(())
}

fn mul_like(g: &Tensor, other: &Tensor) -> Tensor {
    if other.is_scalar() {
        let s = other.item();
        g.map(|v| v * s)
    } else if g.is_scalar() {
        // g scalar against non-scalar operand: expand below in bcast_back.
        let s = g.item();
        other.map(|v| v * s)
    } else {
        Tensor::new(
            g.shape().to_vec(),
            g.data().iter().zip(other.data()).map(|(&a, &b)| a * b).collect(),
        )
        .expect("shapes checked on forward")
    }
}

/// Iterate reduction groups of a 1-D or 2-D tensor along `axis`.
fn check_axis(t: &Tensor, axis: usize) -> Result<()> {
    match (t.rank(), axis) {
        (1, 0) | (2, 0) | (2, 1) => Ok(()),
        _ => Err(Error::Dimension(format!(
            "axis {axis} invalid for shape {:?}",
            t.shape()
        ))),
    }
}

fn reduce_group_len(t: &Tensor, axis: usize) -> usize {
    match (t.rank(), axis) {
        (1, 0) => t.shape()[0],
        (2, 0) => t.shape()[0],
        (2, 1) => t.shape()[1],
        _ => unreachable!(),
    }
}

fn reduce_groups(t: &Tensor, axis: usize, mut f: impl FnMut(&[f64]) -> f64) -> Result<Tensor> {
    check_axis(t, axis)?;
    match (t.rank(), axis) {
        (1, 0) => Ok(Tensor::scalar(f(t.data()))),
        (2, 1) => {
            let (m, n) = (t.shape()[0], t.shape()[1]);
            let data = (0..m).map(|i| f(&t.data()[i * n..(i + 1) * n])).collect();
            Ok(Tensor::vector(data))
        }
        (2, 0) => {
            let (m, n) = (t.shape()[0], t.shape()[1]);
            let mut data = Vec::with_capacity(n);
            let mut col = vec![0.0; m];
            for j in 0..n {
                for i in 0..m {
                    col[i] = t.at2(i, j);
                }
                data.push(f(&col));
            }
            Ok(Tensor::vector(data))
        }
        _ => unreachable!(),
    }
}

fn scatter_reduce(x: &Tensor, axis: usize, argmax: &[usize], g: &Tensor, gx: &mut Tensor) {
    match (x.rank(), axis) {
        (1, 0) => gx.data_mut()[argmax[0]] += g.item(),
        (2, 1) => {
            let n = x.shape()[1];
            for (i, (&am, &gv)) in argmax.iter().zip(g.data()).enumerate() {
                gx.data_mut()[i * n + am] += gv;
            }
        }
        (2, 0) => {
            let n = x.shape()[1];
            for (j, (&am, &gv)) in argmax.iter().zip(g.data()).enumerate() {
                gx.data_mut()[am * n + j] += gv;
            }
        }
        _ => unreachable!(),
    }
}

fn broadcast_reduce(x: &Tensor, axis: usize, g: &Tensor, gx: &mut Tensor, scale: f64) {
    match (x.rank(), axis) {
        (1, 0) => {
            let gv = g.item() * scale;
            for v in gx.data_mut() {
                *v += gv;
            }
        }
        (2, 1) => {
            let n = x.shape()[1];
            for (i, &gv) in g.data().iter().enumerate() {
                for v in &mut gx.data_mut()[i * n..(i + 1) * n] {
                    *v += gv * scale;
                }
            }
        }
        (2, 0) => {
            let (m, n) = (x.shape()[0], x.shape()[1]);
            for i in 0..m {
                for (j, &gv) in g.data().iter().enumerate() {
                    gx.data_mut()[i * n + j] += gv * scale;
                }
            }
        }
        _ => unreachable!(),
    }
}

fn group_map(t: &Tensor, axis: usize, f: impl Fn(&[f64], &mut [f64])) -> Result<Tensor> {
    check_axis(t, axis)?;
    let mut out = Tensor::zeros(t.shape());
    match (t.rank(), axis) {
        (1, 0) => f(t.data(), out.data_mut()),
        (2, 1) => {
            let n = t.shape()[1];
            for (src, dst) in t.data().chunks(n).zip(out.data_mut().chunks_mut(n)) {
                f(src, dst);
            }
        }
        (2, 0) => {
            let (m, n) = (t.shape()[0], t.shape()[1]);
            let mut col = vec![0.0; m];
            let mut res = vec![0.0; m];
            for j in 0..n {
                for i in 0..m {
                    col[i] = t.at2(i, j);
                }
                f(&col, &mut res);
                for i in 0..m {
                    out.data_mut()[i * n + j] = res[i];
                }
            }
        }
        _ => unreachable!(),
    }
    Ok(out)
}

/// Backward over groups: callback gets (forward output group, upstream grad
/// group, input grad group to fill).
fn group_backward(
    y: &Tensor,
    g: &Tensor,
    axis: usize,
    f: impl Fn(&[f64], &[f64], &mut [f64]),
) -> Result<Tensor> {
    let mut gx = Tensor::zeros(y.shape());
    match (y.rank(), axis) {
        (1, 0) => f(y.data(), g.data(), gx.data_mut()),
        (2, 1) => {
            let n = y.shape()[1];
            for ((ys, gs), dst) in y
                .data()
                .chunks(n)
                .zip(g.data().chunks(n))
                .zip(gx.data_mut().chunks_mut(n))
            {
                f(ys, gs, dst);
            }
        }
        (2, 0) => {
            let (m, n) = (y.shape()[0], y.shape()[1]);
            let mut ycol = vec![0.0; m];
            let mut gcol = vec![0.0; m];
            let mut res = vec![0.0; m];
            for j in 0..n {
                for i in 0..m {
                    ycol[i] = y.at2(i, j);
                    gcol[i] = g.at2(i, j);
                }
                f(&ycol, &gcol, &mut res);
                for i in 0..m {
                    gx.data_mut()[i * n + j] = res[i];
                }
            }
        }
        _ => unreachable!(),
    }
    Ok(gx)
}

fn softmax_group(src: &[f64], dst: &mut [f64]) {
    let m = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (d, &v) in dst.iter_mut().zip(src) {
        *d = (v - m).exp();
        sum += *d;
    }
    for d in dst.iter_mut() {
        *d /= sum;
    }
}

fn log_softmax_group(src: &[f64], dst: &mut [f64]) {
    let m = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = src.iter().map(|&v| (v - m).exp()).sum();
    let log_z = m + sum.ln();
    for (d, &v) in dst.iter_mut().zip(src) {
        *d = v - log_z;
    }
}
