//! Command-line surface. Each subcommand is a thin function over the
//! library: parse arguments, load inputs, run, write artifacts. Every
//! artifact-producing command also writes a [`RunManifest`] recording
//! input digests, config and seeds, so a run directory is reproducible
//! from its manifest alone.
//!
//! Input files are never modified. The output directory defaults to the
//! current directory and can be overridden per command with `--out-dir`
//! or globally with the `PLACER_OUT_DIR` environment variable.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::baselines::{run_placer, PlacerSpec};
use crate::checkpoint;
use crate::graph::generate::{generate, stress, FamilySpec, DEFAULT_NODE_BUDGET};
use crate::graph::Graph;
use crate::manifest::RunManifest;
use crate::policy::{graph_log_probs_streaming, PolicyVariant};
use crate::sim::{simulate, DeviceTopology, Placement, SimReport};
use crate::suite;
use crate::trainer::{
    self, ablation_to_csv, curves_to_csv, zeroshot, TrainConfig, TrainMode, TrainResult, Workload,
    FINETUNE_BUDGET,
};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "placer", version, about = "Device placement for dataflow graphs: \
simulator, baselines, and a learned placement policy")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a graph from a synthetic family
    Gen(GenArgs),
    /// Write a homogeneous device topology file
    Topo(TopoArgs),
    /// Place a graph with a baseline method or a trained checkpoint
    Place(PlaceArgs),
    /// Train a placement policy on one graph
    Train(TrainArgs),
    /// Train one policy across several workloads
    Pretrain(PretrainArgs),
    /// Continue a checkpoint on one graph for a bounded number of steps
    Finetune(FinetuneArgs),
    /// Train every policy variant on the built-in suite and tabulate
    Ablate(AblateArgs),
    /// Merge run summaries into one speedup table
    Report(ReportArgs),
}

/// Runs one parsed command to completion.
pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Topo(args) => cmd_topo(args),
        Command::Place(args) => cmd_place(args),
        Command::Train(args) => cmd_train(args),
        Command::Pretrain(args) => cmd_pretrain(args),
        Command::Finetune(args) => cmd_finetune(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Report(args) => cmd_report(args),
    }
}

const FAMILIES: &str = "rnn_grid, multibranch, dilated_stack, layered_random, \
encoder_decoder, stress";

/// One line of a run's `summary.json`: how one method did on one graph.
/// The `report` command joins these files into a comparison table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRow {
    pub graph: String,
    pub method: String,
    pub makespan: f64,
    pub valid: bool,
}

/// A placement with its simulated outcome, as stored in `best.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlacedResult {
    pub placement: Vec<usize>,
    pub makespan: f64,
    pub valid: bool,
}

// ---------------------------------------------------------------- helpers

fn resolve_out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("PLACER_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn to_pretty<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Error::Parse(format!("serialization: {e}")))
}

fn load_graph(path: &Path) -> Result<Graph> {
    let text = fs::read_to_string(path)?;
    let (g, warnings) = Graph::from_json(&text)?;
    for w in warnings {
        eprintln!("warning: {}: {w}", path.display());
    }
    if let Some(issue) = g.validate().first() {
        return Err(Error::Contract(format!("{}: {issue}", path.display())));
    }
    Ok(g)
}

fn load_topology(path: &Path) -> Result<DeviceTopology> {
    DeviceTopology::from_json(&fs::read_to_string(path)?)
}

fn load_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path)?;
    let cfg: TrainConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: bad train config: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

fn placed(p: &Placement, r: &SimReport) -> PlacedResult {
    PlacedResult { placement: p.0.clone(), makespan: r.makespan, valid: r.valid }
}

/// Writes the artifacts common to all training commands and returns
/// their paths: checkpoint, learning curves, best/greedy placements, and
/// the summary rows (best-found makespan per graph, greedy as fallback).
fn write_train_outputs(dir: &Path, result: &TrainResult, method: &str) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let ckpt = dir.join("checkpoint.json");
    checkpoint::save(&result.store, &ckpt)?;
    let curves = dir.join("curves.csv");
    fs::write(&curves, curves_to_csv(&result.curves))?;

    let best: BTreeMap<&str, PlacedResult> =
        result.best.iter().map(|(k, (p, r))| (k.as_str(), placed(p, r))).collect();
    let greedy: BTreeMap<&str, PlacedResult> =
        result.greedy.iter().map(|(k, (p, r))| (k.as_str(), placed(p, r))).collect();
    let best_path = dir.join("best.json");
    fs::write(&best_path, to_pretty(&serde_json::json!({ "best": best, "greedy": greedy }))?)?;

    let rows: Vec<SummaryRow> = result
        .greedy
        .keys()
        .map(|g| match result.best.get(g) {
            Some((_, r)) => SummaryRow {
                graph: g.clone(),
                method: method.to_string(),
                makespan: r.makespan,
                valid: true,
            },
            None => {
                let (_, r) = &result.greedy[g];
                SummaryRow {
                    graph: g.clone(),
                    method: method.to_string(),
                    makespan: r.makespan,
                    valid: r.valid,
                }
            }
        })
        .collect();
    let summary = dir.join("summary.json");
    fs::write(&summary, to_pretty(&rows)?)?;
    Ok(vec![ckpt, curves, best_path, summary])
}

// -------------------------------------------------------------------- gen

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Family name: rnn_grid, multibranch, dilated_stack, layered_random,
    /// encoder_decoder, or stress
    pub family: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output graph JSON path; the manifest lands next to it
    #[arg(long)]
    pub out: PathBuf,
    /// Node budget the generated graph must stay under
    #[arg(long, default_value_t = DEFAULT_NODE_BUDGET)]
    pub budget: usize,
    /// Node count for the stress family
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub branches: Option<usize>,
    #[arg(long)]
    pub branch_len: Option<usize>,
    #[arg(long)]
    pub stacks: Option<usize>,
    #[arg(long)]
    pub layers_per_stack: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub edge_prob: Option<f64>,
}

/// Family spec from the flags, with the suite instances as defaults.
fn family_spec(args: &GenArgs) -> Result<FamilySpec> {
    match args.family.as_str() {
        "rnn_grid" => Ok(FamilySpec::RnnGrid {
            layers: args.layers.unwrap_or(4),
            steps: args.steps.unwrap_or(20),
        }),
        "multibranch" => Ok(FamilySpec::Multibranch {
            blocks: args.blocks.unwrap_or(6),
            branches: args.branches.unwrap_or(4),
            branch_len: args.branch_len.unwrap_or(6),
        }),
        "dilated_stack" => Ok(FamilySpec::DilatedStack {
            stacks: args.stacks.unwrap_or(8),
            layers_per_stack: args.layers_per_stack.unwrap_or(16),
        }),
        "layered_random" => Ok(FamilySpec::LayeredRandom {
            layers: args.layers.unwrap_or(12),
            width: args.width.unwrap_or(12),
            edge_prob: args.edge_prob.unwrap_or(0.25),
        }),
        "encoder_decoder" => Ok(FamilySpec::EncoderDecoder {
            layers: args.layers.unwrap_or(3),
            steps: args.steps.unwrap_or(12),
        }),
        other => {
            Err(Error::Parameter(format!("unknown family {other}; families: {FAMILIES}")))
        }
    }
}

pub fn cmd_gen(args: &GenArgs) -> Result<()> {
    let started = Instant::now();
    let (g, config) = if args.family == "stress" {
        let nodes = args.nodes.unwrap_or(10_000);
        let g = stress(nodes, args.seed)?;
        (g, serde_json::json!({ "family": "stress", "nodes": nodes }))
    } else {
        let spec = family_spec(args)?;
        let g = generate(&spec, args.seed, args.budget)?;
        let config = serde_json::json!({ "spec": spec, "budget": args.budget });
        (g, config)
    };
    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(&args.out, g.to_json() + "\n")?;

    let mut m = RunManifest::new("gen").with_config(&config)?.with_seeds(&[args.seed]);
    m.add_output(&args.out);
    m.finish(started, &args.out.with_extension("manifest.json"))?;
    println!("wrote {} ({} nodes) to {}", g.name(), g.len(), args.out.display());
    Ok(())
}

// ------------------------------------------------------------------- topo

#[derive(Debug, Args)]
pub struct TopoArgs {
    #[arg(long, default_value_t = 2)]
    pub devices: usize,
    /// Memory capacity per device, bytes
    #[arg(long, default_value_t = 1 << 30)]
    pub mem: u64,
    /// Compute speed multiplier per device
    #[arg(long, default_value_t = 1.0)]
    pub speed: f64,
    /// Link bandwidth, bytes per unit time
    #[arg(long, default_value_t = 8192.0)]
    pub bandwidth: f64,
    /// Link latency, time units
    #[arg(long, default_value_t = 0.05)]
    pub latency: f64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Writes a homogeneous topology. Heterogeneous ones are written by hand
/// in the same JSON schema.
pub fn cmd_topo(args: &TopoArgs) -> Result<()> {
    let started = Instant::now();
    let topo =
        DeviceTopology::homogeneous(args.devices, args.mem, args.speed, args.bandwidth, args.latency)?;
    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(&args.out, topo.to_json() + "\n")?;
    let config = serde_json::json!({
        "devices": args.devices, "mem": args.mem, "speed": args.speed,
        "bandwidth": args.bandwidth, "latency": args.latency,
    });
    let mut m = RunManifest::new("topo").with_config(&config)?;
    m.add_output(&args.out);
    m.finish(started, &args.out.with_extension("manifest.json"))?;
    println!("wrote {} devices to {}", args.devices, args.out.display());
    Ok(())
}

// ------------------------------------------------------------------ place

#[derive(Debug, Args)]
pub struct PlaceArgs {
    /// Graph JSON file
    #[arg(long)]
    pub graph: PathBuf,
    /// Topology JSON file
    #[arg(long)]
    pub topology: PathBuf,
    /// Baseline method: random, single_device, topo_blocks, min_cut,
    /// local_search
    #[arg(long, required_unless_present = "checkpoint", conflicts_with = "checkpoint")]
    pub method: Option<String>,
    /// Trained checkpoint to decode greedily
    #[arg(long, requires = "config")]
    pub checkpoint: Option<PathBuf>,
    /// Train config describing the checkpoint's network shapes
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for random and min_cut
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Device index for single_device
    #[arg(long, default_value_t = 0)]
    pub device: usize,
    /// Simulator-call budget for local_search
    #[arg(long, default_value_t = 2000)]
    pub budget: usize,
    /// Also write the per-node device distribution (checkpoint runs only)
    #[arg(long)]
    pub dump_dist: bool,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

fn placer_spec(args: &PlaceArgs, name: &str) -> Result<PlacerSpec> {
    match name {
        "random" => Ok(PlacerSpec::Random { seed: args.seed }),
        "single_device" => Ok(PlacerSpec::SingleDevice { device: args.device }),
        "topo_blocks" => Ok(PlacerSpec::TopoBlocks),
        "min_cut" => Ok(PlacerSpec::MinCut { seed: args.seed }),
        "local_search" => Ok(PlacerSpec::LocalSearch { budget: args.budget }),
        other => Err(Error::Parameter(format!(
            "unknown method {other}; methods: random, single_device, topo_blocks, \
min_cut, local_search"
        ))),
    }
}

pub fn cmd_place(args: &PlaceArgs) -> Result<()> {
    let started = Instant::now();
    let g = load_graph(&args.graph)?;
    let topo = load_topology(&args.topology)?;
    let dir = resolve_out_dir(args.out_dir.clone());
    fs::create_dir_all(&dir)?;

    let mut m = RunManifest::new("place");
    m.add_input(&args.graph)?;
    m.add_input(&args.topology)?;

    let mut outputs = Vec::new();
    let (label, placement, config_json) = match (&args.method, &args.checkpoint) {
        (Some(name), None) => {
            if args.dump_dist {
                return Err(Error::Contract(
                    "--dump-dist needs a checkpoint; baselines have no distribution".into(),
                ));
            }
            let spec = placer_spec(args, name)?;
            let p = run_placer(&spec, &g, &topo)?;
            (name.clone(), p, serde_json::to_value(&spec).unwrap_or_default())
        }
        (None, Some(ckpt_path)) => {
            let cfg_path = args.config.as_ref().expect("clap enforces requires");
            let cfg = load_config(cfg_path)?;
            let store = checkpoint::load(ckpt_path)?;
            m.add_input(ckpt_path)?;
            m.add_input(cfg_path)?;
            let w = Workload::new(g.clone(), topo.clone());
            let (p, _) = zeroshot(&store, &w, &cfg)?;
            if args.dump_dist {
                let lp = graph_log_probs_streaming(
                    &store,
                    &cfg.gnn,
                    &cfg.policy,
                    &g,
                    topo.num_devices(),
                )?;
                let probs: Vec<Vec<f64>> = (0..g.len())
                    .map(|v| (0..topo.num_devices()).map(|d| lp.at2(v, d).exp()).collect())
                    .collect();
                let dump = serde_json::json!({
                    "graph": g.name(), "devices": topo.num_devices(), "probs": probs,
                });
                let path = dir.join("distribution.json");
                fs::write(&path, to_pretty(&dump)?)?;
                outputs.push(path);
            }
            ("gdp".to_string(), p, serde_json::to_value(&cfg).unwrap_or_default())
        }
        _ => unreachable!("clap enforces exactly one of method and checkpoint"),
    };

    let report = simulate(&g, &placement, &topo)?;
    let placement_path = dir.join("placement.json");
    fs::write(&placement_path, to_pretty(&placement)?)?;
    let report_path = dir.join("report.json");
    fs::write(&report_path, to_pretty(&report)?)?;
    let summary_path = dir.join("summary.json");
    let rows = vec![SummaryRow {
        graph: g.name().to_string(),
        method: label.clone(),
        makespan: report.makespan,
        valid: report.valid,
    }];
    fs::write(&summary_path, to_pretty(&rows)?)?;
    outputs.extend([placement_path, report_path, summary_path]);

    let mut m = m.with_config(&config_json)?.with_seeds(&[args.seed]);
    for p in &outputs {
        m.add_output(p);
    }
    m.finish(started, &dir.join("manifest.json"))?;
    println!(
        "{label} on {}: makespan {}, peak mem {} bytes, valid {}",
        g.name(),
        report.makespan,
        report.per_device_peak_mem.iter().max().copied().unwrap_or(0),
        report.valid
    );
    Ok(())
}

// ------------------------------------------------- train family commands

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Train config JSON
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub topology: PathBuf,
    /// Optional checkpoint to continue from
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let started = Instant::now();
    let cfg = load_config(&args.config)?;
    let w = Workload::new(load_graph(&args.graph)?, load_topology(&args.topology)?);
    let init = args.init.as_ref().map(|p| checkpoint::load(p)).transpose()?;
    let result = trainer::train(std::slice::from_ref(&w), &cfg, init)?;

    let dir = resolve_out_dir(args.out_dir.clone());
    let outputs = write_train_outputs(&dir, &result, "gdp")?;
    let mut m = RunManifest::new("train").with_config(&cfg)?.with_seeds(&[cfg.seed]);
    m.add_input(&args.config)?;
    m.add_input(&args.graph)?;
    m.add_input(&args.topology)?;
    if let Some(p) = &args.init {
        m.add_input(p)?;
    }
    for p in &outputs {
        m.add_output(p);
    }
    m.finish(started, &dir.join("manifest.json"))?;
    for (name, (_, r)) in &result.best {
        println!("{name}: best makespan {}", r.makespan);
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Graph files, repeatable, paired with --topology by position
    #[arg(long = "graph")]
    pub graphs: Vec<PathBuf>,
    #[arg(long = "topology")]
    pub topologies: Vec<PathBuf>,
    /// Use the built-in five-family suite instead of files
    #[arg(long, conflicts_with = "graphs")]
    pub suite: bool,
    /// Drop one family from the built-in suite
    #[arg(long, requires = "suite")]
    pub holdout: Option<String>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

pub fn cmd_pretrain(args: &PretrainArgs) -> Result<()> {
    let started = Instant::now();
    let mut cfg = load_config(&args.config)?;
    cfg.mode = TrainMode::Pretrain;

    let workloads: Vec<Workload> = if args.suite {
        let entries = suite::desk_suite();
        if let Some(holdout) = &args.holdout {
            if !entries.iter().any(|e| e.spec.family_name() == holdout) {
                return Err(Error::Parameter(format!(
                    "holdout {holdout} is not a suite family"
                )));
            }
        }
        entries
            .iter()
            .filter(|e| args.holdout.as_deref() != Some(e.spec.family_name()))
            .map(suite::build)
            .collect::<Result<_>>()?
    } else {
        if args.graphs.is_empty() || args.graphs.len() != args.topologies.len() {
            return Err(Error::Parameter(format!(
                "{} graphs and {} topologies; pass matched --graph/--topology pairs \
or --suite",
                args.graphs.len(),
                args.topologies.len()
            )));
        }
        args.graphs
            .iter()
            .zip(&args.topologies)
            .map(|(g, t)| Ok(Workload::new(load_graph(g)?, load_topology(t)?)))
            .collect::<Result<_>>()?
    };

    let result = trainer::train(&workloads, &cfg, None)?;
    let dir = resolve_out_dir(args.out_dir.clone());
    let outputs = write_train_outputs(&dir, &result, "gdp")?;
    let mut m = RunManifest::new("pretrain").with_config(&cfg)?.with_seeds(&[cfg.seed]);
    m.add_input(&args.config)?;
    for p in args.graphs.iter().chain(&args.topologies) {
        m.add_input(p)?;
    }
    for p in &outputs {
        m.add_output(p);
    }
    m.finish(started, &dir.join("manifest.json"))?;
    println!("pretrained on {} workloads", workloads.len());
    Ok(())
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub topology: PathBuf,
    /// Update steps to run, at most the fine-tune budget
    #[arg(long, default_value_t = FINETUNE_BUDGET)]
    pub steps: usize,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

pub fn cmd_finetune(args: &FinetuneArgs) -> Result<()> {
    let started = Instant::now();
    let cfg = load_config(&args.config)?;
    let store = checkpoint::load(&args.checkpoint)?;
    let w = Workload::new(load_graph(&args.graph)?, load_topology(&args.topology)?);
    let result = trainer::finetune(store, &w, &cfg, args.steps)?;

    let dir = resolve_out_dir(args.out_dir.clone());
    let outputs = write_train_outputs(&dir, &result, "gdp")?;
    let mut m = RunManifest::new("finetune").with_config(&cfg)?.with_seeds(&[cfg.seed]);
    m.add_input(&args.config)?;
    m.add_input(&args.checkpoint)?;
    m.add_input(&args.graph)?;
    m.add_input(&args.topology)?;
    for p in &outputs {
        m.add_output(p);
    }
    m.finish(started, &dir.join("manifest.json"))?;
    let label = result
        .best
        .values()
        .next()
        .map(|(_, r)| r.makespan)
        .or_else(|| result.greedy.values().next().map(|(_, r)| r.makespan));
    match label {
        Some(ms) => println!("fine-tuned {} steps: makespan {ms}", args.steps),
        None => println!("fine-tuned {} steps", args.steps),
    }
    Ok(())
}

// ----------------------------------------------------------------- ablate

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Trains full, no_attention and no_superposition policies on the
/// built-in suite with the same config and writes the paired table.
pub fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let started = Instant::now();
    let cfg = load_config(&args.config)?;
    let workloads: Vec<Workload> =
        suite::desk_suite().iter().map(suite::build).collect::<Result<_>>()?;
    let variants =
        [PolicyVariant::Full, PolicyVariant::NoAttention, PolicyVariant::NoSuperposition];
    let rows = trainer::ablate(&workloads, &cfg, &variants)?;

    let dir = resolve_out_dir(args.out_dir.clone());
    fs::create_dir_all(&dir)?;
    let csv_path = dir.join("ablation.csv");
    fs::write(&csv_path, ablation_to_csv(&rows))?;
    let mut m = RunManifest::new("ablate").with_config(&cfg)?.with_seeds(&[cfg.seed]);
    m.add_input(&args.config)?;
    m.add_output(&csv_path);
    m.finish(started, &dir.join("manifest.json"))?;
    println!("wrote {}", csv_path.display());
    Ok(())
}

// ----------------------------------------------------------------- report

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Labeled run directories, label=dir, each holding a summary.json
    #[arg(required = true)]
    pub runs: Vec<String>,
    /// Label whose makespans the speedups are measured against
    #[arg(long)]
    pub baseline: String,
    /// Output CSV path
    #[arg(long)]
    pub out: PathBuf,
}

/// Joins run summaries on graph name into one table: a makespan column
/// per label plus `label_speedup = baseline makespan / label makespan`
/// for the rest. Invalid results count as missing.
pub fn cmd_report(args: &ReportArgs) -> Result<()> {
    let started = Instant::now();
    let mut labels: Vec<String> = Vec::new();
    let mut data: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    let mut m = RunManifest::new("report");
    for run in &args.runs {
        let (label, dir) = run.split_once('=').ok_or_else(|| {
            Error::Parameter(format!("run spec {run} is not of the form label=dir"))
        })?;
        if labels.iter().any(|l| l == label) {
            return Err(Error::Parameter(format!("duplicate run label {label}")));
        }
        labels.push(label.to_string());
        let path = Path::new(dir).join("summary.json");
        let rows: Vec<SummaryRow> = serde_json::from_str(&fs::read_to_string(&path)?)
            .map_err(|e| Error::Parse(format!("{}: bad summary: {e}", path.display())))?;
        m.add_input(&path)?;
        let entry = data.entry(label.to_string()).or_default();
        for row in rows {
            if row.valid {
                entry.insert(row.graph, row.makespan);
            }
        }
    }
    if !labels.iter().any(|l| l == &args.baseline) {
        return Err(Error::Parameter(format!(
            "baseline {} is not among the run labels",
            args.baseline
        )));
    }

    let graphs: BTreeSet<&String> = data.values().flat_map(|m| m.keys()).collect();
    let mut csv = String::from("graph");
    for l in &labels {
        csv.push_str(&format!(",{l}"));
    }
    for l in &labels {
        if l != &args.baseline {
            csv.push_str(&format!(",{l}_speedup"));
        }
    }
    csv.push('\n');
    for g in graphs {
        csv.push_str(g);
        let base = data[&args.baseline].get(g);
        for l in &labels {
            match data[l].get(g) {
                Some(ms) => csv.push_str(&format!(",{ms}")),
                None => csv.push(','),
            }
        }
        for l in &labels {
            if l != &args.baseline {
                match (base, data[l].get(g)) {
                    (Some(b), Some(ms)) => csv.push_str(&format!(",{}", b / ms)),
                    _ => csv.push(','),
                }
            }
        }
        csv.push('\n');
    }

    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(&args.out, &csv)?;
    let config = serde_json::json!({ "baseline": args.baseline, "runs": args.runs });
    let mut m = m.with_config(&config)?;
    m.add_output(&args.out);
    m.finish(started, &args.out.with_extension("manifest.json"))?;
    println!("wrote {}", args.out.display());
    Ok(())
}
