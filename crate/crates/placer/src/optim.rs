//! Parameter storage and first-order optimizers.
//!
//! Parameters live in a [`ParamStore`] keyed by name; iteration order is
//! always name order so updates, serialization, and gradient clipping are
//! deterministic. Models lease parameters onto a tape per forward pass and
//! collect named gradients back after `backward`.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tape::{GradTable, Tape, Value};
use crate::tensor::Tensor;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Named gradients in name order.
pub type Grads = BTreeMap<String, Tensor>;

#[derive(Debug, Clone)]
struct AdamSlot {
    m: Tensor,
    v: Tensor,
}

/// Named trainable parameters plus optimizer state.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    adam: BTreeMap<String, AdamSlot>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a new parameter. Re-registering a name is a contract error;
    /// it always indicates a model construction bug.
    pub fn insert(&mut self, name: &str, t: Tensor) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::Contract(format!("parameter {name} registered twice")));
        }
        self.params.insert(name.to_string(), t);
        Ok(())
    }

    /// Register a parameter initialized uniformly in `[lo, hi)`.
    pub fn insert_uniform<R: Rng>(
        &mut self,
        name: &str,
        shape: &[usize],
        lo: f64,
        hi: f64,
        rng: &mut R,
    ) -> Result<()> {
        self.insert(name, Tensor::uniform(shape, lo, hi, rng))
    }

    /// Replace an existing parameter's tensor, keeping optimizer state out of
    /// sync intentionally absent (used by checkpoint load and tests).
    pub fn set(&mut self, name: &str, t: Tensor) -> Result<()> {
        match self.params.get_mut(name) {
            Some(slot) => {
                *slot = t;
                Ok(())
            }
            None => Err(Error::Contract(format!("unknown parameter {name}"))),
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Lease a parameter onto a tape as a named leaf.
    pub fn lease(&self, tape: &mut Tape, name: &str) -> Result<Value> {
        Ok(tape.leaf(name, self.get(name)?.clone()))
    }

    /// Assemble named gradients from a backward pass. Every parameter in the
    /// store appears in the result; parameters that never reached the loss
    /// (or were never leased) get zeros. Multiple leases of one name sum.
    pub fn collect_grads(&self, tape: &Tape, table: &GradTable) -> Grads {
        let mut out: Grads = self
            .params
            .iter()
            .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
            .collect();
        for (id, name) in tape.leaves() {
            if let (Some(slot), Some(g)) = (out.get_mut(name), table.get_id(*id)) {
                slot.add_assign(g);
            }
        }
        out
    }

    /// Drop optimizer state; the next Adam step starts fresh.
    pub fn reset_optimizer(&mut self) {
        self.adam.clear();
        self.step = 0;
    }

    fn verify_grads(&self, grads: &Grads) -> Result<()> {
        for (name, g) in grads {
            let p = self.get(name)?;
            if p.shape() != g.shape() {
                return Err(Error::Dimension(format!(
                    "gradient shape {:?} != parameter {name} shape {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            if !g.all_finite() {
                return Err(Error::Training(format!(
                    "non-finite gradient for parameter {name}"
                )));
            }
        }
        Ok(())
    }

    /// Plain gradient descent: `p -= lr * g`.
    pub fn sgd_step(&mut self, grads: &Grads, lr: f64) -> Result<()> {
        self.verify_grads(grads)?;
        for (name, g) in grads {
            let p = self.params.get_mut(name).expect("verified above");
            for (pv, &gv) in p.data_mut().iter_mut().zip(g.data()) {
                *pv -= lr * gv;
            }
        }
        Ok(())
    }

    /// One Adam step with bias correction (beta1 0.9, beta2 0.999, eps 1e-8).
    pub fn adam_step(&mut self, grads: &Grads, lr: f64) -> Result<()> {
        self.verify_grads(grads)?;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        for (name, g) in grads {
            let p = self.params.get_mut(name).expect("verified above");
            let slot = self.adam.entry(name.clone()).or_insert_with(|| AdamSlot {
                m: Tensor::zeros(g.shape()),
                v: Tensor::zeros(g.shape()),
            });
            for i in 0..g.numel() {
                let gv = g.data()[i];
                let m = &mut slot.m.data_mut()[i];
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * gv;
                let v = &mut slot.v.data_mut()[i];
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * gv * gv;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                p.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }
}

/// Scale all gradients so their joint L2 norm does not exceed `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut Grads, max_norm: f64) -> f64 {
    let sq: f64 = grads
        .values()
        .map(|g| g.data().iter().map(|&v| v * v).sum::<f64>())
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}
