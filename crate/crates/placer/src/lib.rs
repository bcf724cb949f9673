//! Learned device placement for dataflow graphs.
//!
//! The crate trains a graph-network policy with reinforcement learning to
//! assign the operations of a computation graph to devices, scoring
//! candidate placements with a deterministic step-time simulator. Classical
//! baselines, synthetic graph generators, and a small experiment driver are
//! included so results can be reproduced end to end.
//!
//! Start with the `examples/` directory; each example exercises one major
//! capability (generation, simulation, baselines, training, transfer,
//! ablations, checkpointing, scale).

pub mod baselines;
pub mod check;
pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod manifest;
pub mod optim;
pub mod policy;
pub mod sim;
pub mod suite;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
