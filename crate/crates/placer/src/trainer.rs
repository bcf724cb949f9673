//! Policy optimization: PPO over placement rollouts with a per-graph
//! running-mean reward baseline.
//!
//! One episode is one rollout: embed a graph, run the placement network,
//! sample a placement, simulate it, score it. Updates happen every
//! `rollouts_per_update` episodes and push gradients end to end through
//! both the placement network and the graph embedder. The same loop serves
//! individual training, batched multi-graph training, fine-tuning from a
//! checkpoint (few steps, fresh optimizer) and zero-shot evaluation
//! (greedy decode, no updates).
//!
//! The deliverable of a run is the best placement found during search;
//! the final policy's greedy decode is reported alongside it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gnn::GnnConfig;
use crate::graph::features::{feature_width, OP_TYPE_BUCKETS};
use crate::graph::Graph;
use crate::optim::ParamStore;
use crate::policy::{
    graph_distribution, graph_log_probs_streaming, greedy, greedy_from, sample, PolicyConfig,
    PolicyVariant,
};
use crate::sim::{simulate, DeviceTopology, Placement, SimReport};
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Fine-tuning stays under this many update steps by contract.
pub const FINETUNE_BUDGET: usize = 50;

/// The invalid-placement reward.
pub const INVALID_REWARD: f64 = -10.0;

/// Reward of a simulated placement: negative square root of the makespan
/// for valid placements (compresses the huge runtime range across graphs),
/// a flat large penalty for invalid ones.
pub fn reward_fn(report: &SimReport) -> f64 {
    if report.valid {
        -report.makespan.sqrt()
    } else {
        INVALID_REWARD
    }
}

/// Per-graph reward history backing the advantage baseline. The mean is
/// kept as (sum, count) so it is reproducible exactly from a log of the
/// rewards in arrival order.
#[derive(Debug, Clone, Default)]
pub struct RewardState {
    stats: BTreeMap<String, (f64, u64)>,
}

impl RewardState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Advantage of a new reward: the reward minus the mean of all
    /// previous trials for this graph, zero on the first trial (there is
    /// no history to subtract). Records the reward afterwards.
    pub fn advantage(&mut self, graph: &str, reward: f64) -> f64 {
        let (sum, count) = self.stats.entry(graph.to_string()).or_insert((0.0, 0));
        let adv = if *count == 0 { 0.0 } else { reward - *sum / *count as f64 };
        *sum += reward;
        *count += 1;
        adv
    }

    pub fn trials(&self, graph: &str) -> u64 {
        self.stats.get(graph).map_or(0, |&(_, c)| c)
    }
}

/// One rollout: what was sampled, under which odds, and how it scored.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub graph: String,
    pub graph_idx: usize,
    pub placement: Placement,
    /// Log-probability sum over decision nodes under the behavior policy.
    pub logp: f64,
    pub report: SimReport,
    pub reward: f64,
    pub advantage: f64,
}

/// A graph paired with the topology it is being placed onto. Batched
/// training mixes workloads with different device counts; the policy
/// head's width covers them all and is sliced per workload.
#[derive(Debug, Clone)]
pub struct Workload {
    pub graph: Graph,
    pub topo: DeviceTopology,
}

impl Workload {
    pub fn new(graph: Graph, topo: DeviceTopology) -> Self {
        Workload { graph, topo }
    }
}

/// Which experiment regime a config drives. The training loop itself is
/// regime-agnostic; the mode picks inputs and workflow at the entry
/// points (a batch of one graph is individual training, exactly).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    One,
    Batch,
    Pretrain,
    Finetune,
    Zeroshot,
}

/// Training hyperparameters plus the network shapes, serializable as the
/// experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Total rollouts for the run.
    pub episodes: usize,
    /// Rollouts gathered between parameter updates.
    pub rollouts_per_update: usize,
    pub ppo_clip: f64,
    pub ppo_epochs: usize,
    pub minibatch: usize,
    pub learning_rate: f64,
    pub entropy_coef: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub gnn: GnnConfig,
    pub policy: PolicyConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::One,
            episodes: 512,
            rollouts_per_update: 16,
            ppo_clip: 0.2,
            ppo_epochs: 4,
            minibatch: 8,
            learning_rate: 3e-4,
            entropy_coef: 0.01,
            grad_clip: 1.0,
            seed: 0,
            gnn: GnnConfig::default(),
            policy: PolicyConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        if self.rollouts_per_update == 0 || self.ppo_epochs == 0 || self.minibatch == 0 {
            return Err(Error::Contract("train config has a zero batch parameter".into()));
        }
        if !(self.ppo_clip > 0.0 && self.ppo_clip < 1.0) {
            return Err(Error::Contract(format!("ppo_clip {} outside (0, 1)", self.ppo_clip)));
        }
        if self.learning_rate <= 0.0 || self.grad_clip <= 0.0 {
            return Err(Error::Contract("learning_rate and grad_clip must be positive".into()));
        }
        if self.entropy_coef < 0.0 {
            return Err(Error::Contract("entropy_coef must be nonnegative".into()));
        }
        if self.gnn.hidden != self.policy.hidden {
            return Err(Error::Contract(format!(
                "embedder width {} != policy width {}",
                self.gnn.hidden, self.policy.hidden
            )));
        }
        Ok(())
    }
}

/// Fresh parameters for both networks, drawn from the given rng.
pub fn init_store<R: Rng>(cfg: &TrainConfig, rng: &mut R) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    crate::gnn::init_params(&mut store, &cfg.gnn, feature_width(OP_TYPE_BUCKETS), rng)?;
    crate::policy::init_params(&mut store, &cfg.policy, rng)?;
    Ok(store)
}

/// Checks a restored parameter set against the config it is about to
/// serve. Shape drift means the checkpoint came from a different
/// architecture, which is a versioning problem, not a math problem.
pub fn verify_store(store: &ParamStore, cfg: &TrainConfig) -> Result<()> {
    let expect = [
        ("gnn.input.w", vec![feature_width(OP_TYPE_BUCKETS), cfg.gnn.hidden]),
        (&format!("gnn.comb{}.w", cfg.gnn.layers - 1), vec![2 * cfg.gnn.hidden, cfg.gnn.hidden]),
        (
            &format!("policy.l{}.ff1.w", cfg.policy.layers - 1),
            vec![cfg.policy.hidden, 4 * cfg.policy.hidden],
        ),
        ("policy.head.w", vec![cfg.policy.hidden, cfg.policy.max_devices]),
    ];
    for (name, shape) in &expect {
        match store.get(name) {
            Ok(t) if t.shape() == shape.as_slice() => {}
            Ok(t) => {
                return Err(Error::Version(format!(
                    "checkpoint parameter {name} has shape {:?}, config needs {:?}",
                    t.shape(),
                    shape
                )))
            }
            Err(_) => {
                return Err(Error::Version(format!(
                    "checkpoint is missing {name}; wrong architecture?"
                )))
            }
        }
    }
    if store.get(&format!("gnn.agg{}.w", cfg.gnn.layers)).is_ok()
        || store.get(&format!("policy.l{}.ff1.w", cfg.policy.layers)).is_ok()
    {
        return Err(Error::Version("checkpoint has more layers than the config".into()));
    }
    Ok(())
}

/// Update statistics, averaged over the minibatch steps of one call.
#[derive(Debug, Clone, Serialize)]
pub struct PpoStats {
    pub loss: f64,
    pub surrogate: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    pub gnn_grad_norm: f64,
    pub policy_grad_norm: f64,
}

/// The clipped surrogate for one trajectory, value-level: used to decide
/// which branch the tape takes, and tested directly.
pub fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
    (ratio * advantage).min(clipped * advantage)
}

fn grad_group_norm(grads: &crate::optim::Grads, prefix: &str) -> f64 {
    grads
        .iter()
        .filter(|(name, _)| name.starts_with(prefix))
        .map(|(_, g)| g.data().iter().map(|&v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// One PPO update over a batch of trajectories: for each epoch, shuffle,
/// split into minibatches, recompute the policy on each trajectory's
/// graph, and ascend the clipped surrogate plus entropy bonus. Gradients
/// flow through the placement network and the graph embedder alike.
pub fn ppo_update(
    store: &mut ParamStore,
    workloads: &[Workload],
    trajectories: &[Trajectory],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PpoStats> {
    cfg.validate()?;
    if trajectories.is_empty() {
        return Err(Error::Contract("ppo_update on zero trajectories".into()));
    }
    let mut steps = 0usize;
    let mut clipped = 0usize;
    let mut seen = 0usize;
    let mut acc = PpoStats {
        loss: 0.0,
        surrogate: 0.0,
        entropy: 0.0,
        clip_fraction: 0.0,
        grad_norm: 0.0,
        gnn_grad_norm: 0.0,
        policy_grad_norm: 0.0,
    };

    let mut order: Vec<usize> = (0..trajectories.len()).collect();
    for _ in 0..cfg.ppo_epochs {
        order.shuffle(rng);
        for batch in order.chunks(cfg.minibatch) {
            let mut tape = Tape::new();
            let mut surr_sum = None;
            let mut ent_sum = None;
            for &ti in batch {
                let t = &trajectories[ti];
                let w = &workloads[t.graph_idx];
                let g = &w.graph;
                let dist = graph_distribution(
                    &mut tape,
                    store,
                    &cfg.gnn,
                    &cfg.policy,
                    g,
                    w.topo.num_devices(),
                )?;
                let decisions = g.decision_nodes();
                let chosen: Vec<usize> =
                    decisions.iter().map(|&v| t.placement.device(v)).collect();
                let n_dec = decisions.len();
                let rows = tape.gather_rows(&dist.log_probs, Rc::new(decisions))?;
                let taken = tape.gather_per_row(&rows, Rc::new(chosen))?;
                let new_logp = tape.sum_all(&taken);
                let neg_old = tape.constant(Tensor::scalar(-t.logp));
                let diff = tape.add(&new_logp, &neg_old)?;
                let ratio = tape.exp(&diff);
                let r = ratio.item();
                if !r.is_finite() {
                    return Err(Error::Training(format!(
                        "non-finite ratio for graph {} (old logp {}, new logp {})",
                        t.graph,
                        t.logp,
                        new_logp.item()
                    )));
                }
                // the min() in the objective picked per value; the tape
                // only needs the branch the gradient flows through
                let clips = if t.advantage >= 0.0 {
                    r > 1.0 + cfg.ppo_clip
                } else {
                    r < 1.0 - cfg.ppo_clip
                };
                let term = if clips {
                    clipped += 1;
                    tape.constant(Tensor::scalar(clipped_surrogate(r, t.advantage, cfg.ppo_clip)))
                } else {
                    tape.scale(&ratio, t.advantage)
                };
                seen += 1;
                surr_sum = Some(match surr_sum {
                    Some(s) => tape.add(&s, &term)?,
                    None => term,
                });
                let probs = tape.exp(&rows);
                let plogp = tape.mul(&probs, &rows)?;
                let ent_total = tape.sum_all(&plogp);
                let ent = tape.scale(&ent_total, -1.0 / n_dec as f64);
                ent_sum = Some(match ent_sum {
                    Some(s) => tape.add(&s, &ent)?,
                    None => ent,
                });
            }
            let inv = 1.0 / batch.len() as f64;
            let surrogate = tape.scale(&surr_sum.expect("nonempty batch"), inv);
            let entropy = tape.scale(&ent_sum.expect("nonempty batch"), inv);
            let neg_surr = tape.scale(&surrogate, -1.0);
            let neg_ent = tape.scale(&entropy, -cfg.entropy_coef);
            let loss = tape.add(&neg_surr, &neg_ent)?;
            if !loss.item().is_finite() {
                let mut dump = String::new();
                for &ti in batch {
                    let t = &trajectories[ti];
                    let _ = write!(
                        dump,
                        " [{} reward {} advantage {} logp {}]",
                        t.graph, t.reward, t.advantage, t.logp
                    );
                }
                return Err(Error::Training(format!("non-finite loss; minibatch:{dump}")));
            }
            let table = tape.backward(&loss)?;
            let mut grads = store.collect_grads(&tape, &table);
            acc.gnn_grad_norm += grad_group_norm(&grads, "gnn.");
            acc.policy_grad_norm += grad_group_norm(&grads, "policy.");
            acc.grad_norm += crate::optim::clip_global_norm(&mut grads, cfg.grad_clip);
            store.adam_step(&grads, cfg.learning_rate)?;
            acc.loss += loss.item();
            acc.surrogate += surrogate.item();
            acc.entropy += entropy.item();
            steps += 1;
        }
    }
    let n = steps as f64;
    acc.loss /= n;
    acc.surrogate /= n;
    acc.entropy /= n;
    acc.grad_norm /= n;
    acc.gnn_grad_norm /= n;
    acc.policy_grad_norm /= n;
    acc.clip_fraction = clipped as f64 / seen as f64;
    Ok(acc)
}

/// One learning-curve row. `best_makespan` is the best valid makespan seen
/// for this row's graph so far, absent until one exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode: usize,
    pub graph: String,
    pub reward: f64,
    pub makespan: f64,
    pub best_makespan: Option<f64>,
    pub valid: bool,
}

/// Everything a training run produces.
#[derive(Debug)]
pub struct TrainResult {
    pub store: ParamStore,
    pub curves: Vec<EpisodeRow>,
    /// Per graph: best valid placement found during search.
    pub best: BTreeMap<String, (Placement, SimReport)>,
    /// Per graph: greedy decode of the final policy.
    pub greedy: BTreeMap<String, (Placement, SimReport)>,
    pub stats: Vec<PpoStats>,
}

/// Learning curves as CSV, one row per episode.
pub fn curves_to_csv(rows: &[EpisodeRow]) -> String {
    let mut out = String::from("episode,graph,reward,makespan,best_makespan,valid\n");
    for r in rows {
        let best = r.best_makespan.map_or(String::new(), |b| b.to_string());
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.episode, r.graph, r.reward, r.makespan, best, r.valid
        );
    }
    out
}

/// Trains on a set of workloads (uniformly mixed when there are several)
/// and returns the final parameters, learning curves, the best placement
/// found per graph, and the final greedy decodes. Pass `init` to continue
/// from restored parameters instead of a fresh draw.
///
/// Deterministic per config: the single seed drives initialization, graph
/// choice, sampling and minibatch shuffling.
pub fn train(
    workloads: &[Workload],
    cfg: &TrainConfig,
    init: Option<ParamStore>,
) -> Result<TrainResult> {
    cfg.validate()?;
    if workloads.is_empty() {
        return Err(Error::Contract("training needs at least one workload".into()));
    }
    for w in workloads {
        let g = &w.graph;
        let issues = g.validate();
        if !issues.is_empty() {
            return Err(Error::Contract(format!("graph {} invalid: {}", g.name(), issues[0])));
        }
        if g.is_empty() {
            return Err(Error::Contract(format!("graph {} is empty", g.name())));
        }
        let d = w.topo.num_devices();
        if d > cfg.policy.max_devices {
            return Err(Error::Contract(format!(
                "{d} devices exceed the policy head capacity {}",
                cfg.policy.max_devices
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = match init {
        Some(s) => {
            verify_store(&s, cfg)?;
            s
        }
        None => init_store(cfg, &mut rng)?,
    };

    let mut state = RewardState::new();
    let mut curves = Vec::with_capacity(cfg.episodes);
    let mut best: BTreeMap<String, (Placement, SimReport)> = BTreeMap::new();
    let mut stats = Vec::new();
    let mut episode = 0;
    while episode < cfg.episodes {
        let chunk = cfg.rollouts_per_update.min(cfg.episodes - episode);
        let mut trajectories = Vec::with_capacity(chunk);
        for _ in 0..chunk {
            let gi =
                if workloads.len() == 1 { 0 } else { rng.random_range(0..workloads.len()) };
            let episode_seed: u64 = rng.random();
            let w = &workloads[gi];
            let g = &w.graph;
            let mut tape = Tape::eval();
            let dist = graph_distribution(
                &mut tape,
                &store,
                &cfg.gnn,
                &cfg.policy,
                g,
                w.topo.num_devices(),
            )?;
            let (placement, logp) = sample(&dist, g, episode_seed)?;
            let report = simulate(g, &placement, &w.topo)?;
            let reward = reward_fn(&report);
            let advantage = state.advantage(g.name(), reward);
            if report.valid {
                let better = best
                    .get(g.name())
                    .map_or(true, |(_, b)| report.makespan < b.makespan);
                if better {
                    best.insert(g.name().to_string(), (placement.clone(), report.clone()));
                }
            }
            curves.push(EpisodeRow {
                episode,
                graph: g.name().to_string(),
                reward,
                makespan: report.makespan,
                best_makespan: best.get(g.name()).map(|(_, b)| b.makespan),
                valid: report.valid,
            });
            trajectories.push(Trajectory {
                graph: g.name().to_string(),
                graph_idx: gi,
                placement,
                logp,
                report,
                reward,
                advantage,
            });
            episode += 1;
        }
        stats.push(ppo_update(&mut store, workloads, &trajectories, cfg, &mut rng)?);
    }

    let mut greedy_out = BTreeMap::new();
    for w in workloads {
        let g = &w.graph;
        let mut tape = Tape::eval();
        let dist = graph_distribution(
            &mut tape,
            &store,
            &cfg.gnn,
            &cfg.policy,
            g,
            w.topo.num_devices(),
        )?;
        let p = greedy(&dist, g)?;
        let report = simulate(g, &p, &w.topo)?;
        greedy_out.insert(g.name().to_string(), (p, report));
    }
    Ok(TrainResult { store, curves, best, greedy: greedy_out, stats })
}

/// Continues training a restored parameter set on one target graph for at
/// most [`FINETUNE_BUDGET`] update steps, with a fresh optimizer. Zero
/// steps reduces to a zero-shot evaluation of the checkpoint.
pub fn finetune(
    store: ParamStore,
    workload: &Workload,
    cfg: &TrainConfig,
    steps: usize,
) -> Result<TrainResult> {
    if steps > FINETUNE_BUDGET {
        return Err(Error::Contract(format!(
            "{steps} fine-tune steps exceed the budget of {FINETUNE_BUDGET}"
        )));
    }
    let mut store = store;
    store.reset_optimizer();
    let mut run_cfg = cfg.clone();
    run_cfg.mode = TrainMode::Finetune;
    run_cfg.episodes = steps * cfg.rollouts_per_update;
    train(std::slice::from_ref(workload), &run_cfg, Some(store))
}

/// Greedy decode of a checkpoint on one graph, no updates: the
/// generalization probe for pre-trained parameters.
pub fn zeroshot(
    store: &ParamStore,
    workload: &Workload,
    cfg: &TrainConfig,
) -> Result<(Placement, SimReport)> {
    verify_store(store, cfg)?;
    let g = &workload.graph;
    let lp = graph_log_probs_streaming(
        store,
        &cfg.gnn,
        &cfg.policy,
        g,
        workload.topo.num_devices(),
    )?;
    let p = greedy_from(&lp, g)?;
    let report = simulate(g, &p, &workload.topo)?;
    Ok((p, report))
}

/// One line of an ablation report: how a variant did on one graph.
#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub variant: PolicyVariant,
    pub graph: String,
    pub best_makespan: Option<f64>,
    pub greedy_makespan: f64,
    pub greedy_valid: bool,
}

/// Trains each variant with identical config and seed on the same suite
/// and reports best-found and greedy makespans, one row per
/// (variant, graph) pair.
pub fn ablate(
    workloads: &[Workload],
    cfg: &TrainConfig,
    variants: &[PolicyVariant],
) -> Result<Vec<AblationRow>> {
    if workloads.is_empty() {
        return Err(Error::Contract("ablation needs a nonempty suite".into()));
    }
    let mut rows = Vec::new();
    for &variant in variants {
        let mut vcfg = cfg.clone();
        vcfg.policy.variant = variant;
        let result = train(workloads, &vcfg, None)?;
        for w in workloads {
            let g = &w.graph;
            let (_, greedy_report) = &result.greedy[g.name()];
            rows.push(AblationRow {
                variant,
                graph: g.name().to_string(),
                best_makespan: result.best.get(g.name()).map(|(_, r)| r.makespan),
                greedy_makespan: greedy_report.makespan,
                greedy_valid: greedy_report.valid,
            });
        }
    }
    Ok(rows)
}

/// Ablation report as CSV, one row per (variant, graph).
pub fn ablation_to_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant,graph,best_makespan,greedy_makespan,greedy_valid\n");
    for r in rows {
        let variant = serde_json::to_string(&r.variant).expect("plain enum").replace('"', "");
        let best = r.best_makespan.map_or(String::new(), |b| b.to_string());
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            variant, r.graph, best, r.greedy_makespan, r.greedy_valid
        );
    }
    out
}
