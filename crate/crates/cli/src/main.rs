//! `spikeplace` command-line front end.
//!
//! Exit status: 0 on success, 1 when a run fails or `verify` finds
//! violations, 2 on usage errors.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;
use spikeplace::config::RunConfig;
use spikeplace::cost::{self, bench, compare_strategies, evaluate_strategy, BenchConfig, CostReport};
use spikeplace::encode::{encode_pixels, ThresholdEncoderConfig};
use spikeplace::io::{load_mnist, parse_stories, read_graph, write_graph, Checkpoint, WordMap};
use spikeplace::network::{build_relnet, build_smnist_network, GraphKind, RelNetConfig, RelNetIndex, SmnistConfig};
use spikeplace::placement::{insert_relays, CoreBudget, place, relnet_grouping, verify, PlacementFile, Strategy};
use spikeplace::raster::{Raster, RasterHeader, SpikeMatrix};
use spikeplace::sim::{answer_relnet, metrics, run, Mode, RunOptions, Story};
use spikeplace::train::{pair_matching_stories, train_relnet_toy, train_smnist, RelNetTrainConfig, SmnistTrainConfig};
use spikeplace::{NetworkGraph, Role, TOOL_VERSION};

#[derive(Parser)]
#[command(name = "spikeplace", version, about = "Spiking-network simulation, training, placement and cost modeling")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Seed for every random draw of the run.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = all cores); never changes results.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[arg(long, global = true, value_enum, default_value_t = ModeArg::Real)]
    mode: ModeArg,
    /// Run configuration whose energy, budget and board coefficients
    /// replace the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Write the resolved run configuration here.
    #[arg(long, global = true)]
    save_config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum ModeArg {
    Real,
    Fixed,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum StrategyArg {
    Naive,
    Optimized,
}

#[derive(Subcommand)]
enum Command {
    /// Emit a network file from a builder.
    Build(BuildArgs),
    /// Convert a dataset to input rasters or word ids.
    Encode(EncodeArgs),
    /// Simulate a network on input rasters or a story.
    Simulate(SimulateArgs),
    /// Desk-scale training; writes a checkpoint.
    Train(TrainArgs),
    /// Place a network onto cores and chips.
    Place(PlaceArgs),
    /// Check a placement against the hardware budget.
    Verify(VerifyArgs),
    /// Traffic, latency, energy and EDP of a placement on recorded rasters.
    Cost(CostArgs),
    /// Build, place, simulate and compare strategies over a set of M.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Builder {
    Relnet,
    Smnist,
}

#[derive(Args, Serialize)]
struct BuildArgs {
    #[arg(value_enum)]
    builder: Builder,
    /// Sentences per story (relnet).
    #[arg(long = "M", default_value_t = 20)]
    m: u32,
    #[arg(long, default_value_t = 180)]
    vocab: u32,
    /// Small layer sizes (relnet) or the two-class desk network (smnist).
    #[arg(long)]
    small: bool,
    /// Store weights in a binary sidecar next to the graph file.
    #[arg(long)]
    sidecar: bool,
    #[arg(short, long)]
    #[serde(skip)]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Dataset {
    Mnist,
    Stories,
}

#[derive(Args, Serialize)]
struct EncodeArgs {
    #[arg(value_enum)]
    dataset: Dataset,
    /// MNIST directory (IDX files) or a bAbI-style story file.
    #[arg(short, long)]
    input: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Encode at most this many samples.
    #[arg(long)]
    limit: Option<usize>,
    /// Output directory.
    #[arg(short, long)]
    #[serde(skip)]
    output: PathBuf,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    #[arg(short, long)]
    graph: PathBuf,
    /// Input raster; events of input populations are clamped.
    #[arg(short, long, conflicts_with = "stories")]
    raster: Option<PathBuf>,
    /// Story file from `encode stories` (relnet graphs).
    #[arg(long)]
    stories: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Steps to simulate; defaults to the input raster's length.
    #[arg(long)]
    steps: Option<u32>,
    #[arg(short, long)]
    #[serde(skip)]
    output: PathBuf,
    /// Per-population spike counts and rates.
    #[arg(long)]
    #[serde(skip)]
    metrics: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Task {
    Smnist,
    Relnet,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[arg(value_enum)]
    task: Task,
    /// MNIST directory with two-class IDX files (smnist).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Use at most this many training samples.
    #[arg(long)]
    limit: Option<usize>,
    /// Sentences per story (relnet).
    #[arg(long = "M", default_value_t = 2)]
    m: u32,
    /// Synthetic training stories (relnet).
    #[arg(long, default_value_t = 256)]
    stories: usize,
    #[arg(short, long)]
    #[serde(skip)]
    output: PathBuf,
}

#[derive(Args, Serialize)]
struct PlaceArgs {
    #[arg(short, long)]
    graph: PathBuf,
    #[arg(long, value_enum, default_value_t = StrategyArg::Optimized)]
    strategy: StrategyArg,
    /// Place the graph as given, without relay layers.
    #[arg(long)]
    no_relays: bool,
    #[arg(short, long)]
    #[serde(skip)]
    output: PathBuf,
    /// Where the relayed graph goes; defaults to `<output>.graph.json`.
    #[arg(long)]
    #[serde(skip)]
    graph_out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct VerifyArgs {
    #[arg(short, long)]
    placement: PathBuf,
    #[arg(short, long)]
    graph: PathBuf,
}

#[derive(Args, Serialize)]
struct CostArgs {
    #[arg(short, long)]
    graph: PathBuf,
    #[arg(short, long)]
    placement: PathBuf,
    /// Compare against this placement of the same graph.
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// One raster per sample; costs are averaged.
    #[arg(short, long, required = true, num_args = 1..)]
    raster: Vec<PathBuf>,
    #[arg(short, long)]
    #[serde(skip)]
    output: PathBuf,
}

#[derive(Args, Serialize)]
struct BenchArgs {
    #[arg(long = "M", value_delimiter = ',', default_value = "2,6,10,16,20")]
    m: Vec<u32>,
    #[arg(long, default_value_t = 2)]
    samples: usize,
    #[arg(long, default_value_t = 180)]
    vocab: u32,
    #[arg(long, default_value_t = 40)]
    entities: u32,
    /// CSV with one row per M.
    #[arg(short, long)]
    #[serde(skip)]
    output: PathBuf,
    /// Structured report mirroring the CSV.
    #[arg(long)]
    #[serde(skip)]
    report: Option<PathBuf>,
    /// Plot series against M.
    #[arg(long)]
    #[serde(skip)]
    plot: Option<PathBuf>,
}

/// A failed check rather than a failed run; exits 1 without an error trace.
struct Failed;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(Failed)) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run_config(g: &Global, command: &str, params: &impl Serialize) -> Result<RunConfig> {
    let mut c = match &g.config {
        Some(path) => {
            let base = RunConfig::read(path)?;
            RunConfig { energy: base.energy, budget: base.budget, board: base.board, ..RunConfig::new(command) }
        }
        None => RunConfig::new(command),
    };
    c.params = serde_json::to_value(params)?;
    c.seed = g.seed;
    c.threads = g.threads;
    c.mode = match g.mode {
        ModeArg::Real => Mode::Real,
        ModeArg::Fixed => Mode::Fixed,
    };
    c.validate()?;
    Ok(c)
}

/// RelNets get their class cap unless a config file sets the budget.
fn relnet_budget(g: &Global, c: &mut RunConfig) {
    if g.config.is_none() {
        c.budget = CoreBudget::relnet();
    }
}

fn finish(g: &Global, c: &RunConfig) -> Result<()> {
    if let Some(path) = &g.save_config {
        c.write(path)?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<Result<(), Failed>> {
    let g = &cli.global;
    match &cli.command {
        Command::Build(a) => cmd_build(g, a).map(Ok),
        Command::Encode(a) => cmd_encode(g, a).map(Ok),
        Command::Simulate(a) => cmd_simulate(g, a).map(Ok),
        Command::Train(a) => cmd_train(g, a).map(Ok),
        Command::Place(a) => cmd_place(g, a).map(Ok),
        Command::Verify(a) => cmd_verify(g, a),
        Command::Cost(a) => cmd_cost(g, a).map(Ok),
        Command::Bench(a) => cmd_bench(g, a).map(Ok),
    }
}

fn cmd_build(g: &Global, a: &BuildArgs) -> Result<()> {
    let mut c = run_config(g, "build", a)?;
    c.outputs.insert("graph".into(), a.output.clone());
    let graph = match a.builder {
        Builder::Relnet => {
            relnet_budget(g, &mut c);
            let cfg = if a.small { RelNetConfig::toy(a.m, a.vocab) } else { RelNetConfig::new(a.m, a.vocab) };
            let graph = build_relnet(&cfg, g.seed)?;
            let instances = RelNetIndex::from_graph(&graph)?.instances.len();
            let grouping = relnet_grouping(&graph, &c.budget, &c.board)?;
            let relayed = insert_relays(&graph, &grouping)?;
            println!("g_theta instances: {instances}");
            println!("neurons: {}", graph.count_resources().compute_neurons);
            println!("neurons with relays: {}", relayed.count_resources().compute_neurons);
            graph
        }
        Builder::Smnist => {
            let cfg = if a.small { SmnistConfig::desk() } else { SmnistConfig::default() };
            let graph = build_smnist_network(&cfg, g.seed)?;
            println!("neurons: {}", graph.count_resources().compute_neurons);
            graph
        }
    };
    write_graph(&a.output, &graph, Some(&c.hash()), a.sidecar)?;
    finish(g, &c)
}

fn cmd_encode(g: &Global, a: &EncodeArgs) -> Result<()> {
    let mut c = run_config(g, "encode", a)?;
    c.inputs.insert("data".into(), a.input.clone());
    c.outputs.insert("dir".into(), a.output.clone());
    fs::create_dir_all(&a.output)?;
    let hash = c.hash();
    match a.dataset {
        Dataset::Mnist => {
            let samples = load_mnist(&a.input, &a.split)?;
            let n = a.limit.unwrap_or(samples.len()).min(samples.len());
            let enc = ThresholdEncoderConfig::default();
            let header = RasterHeader { graph_hash: String::new(), config_hash: hash, tool: TOOL_VERSION.into() };
            let mut labels = String::from("file,label\n");
            for (k, (pixels, label)) in samples[..n].iter().enumerate() {
                let m = encode_pixels(pixels, &enc)?;
                let name = format!("sample_{k:05}.raster");
                fs::write(a.output.join(&name), clamp_raster(&m, 0).to_text(&header))?;
                labels.push_str(&format!("{name},{label}\n"));
            }
            fs::write(a.output.join("labels.csv"), labels)?;
            println!("encoded {n} samples of {} steps", enc.total_steps(784));
        }
        Dataset::Stories => {
            let text = fs::read_to_string(&a.input).with_context(|| a.input.display().to_string())?;
            let mut words = WordMap::default();
            let mut stories = parse_stories(&text, &mut words)?;
            if let Some(n) = a.limit {
                stories.truncate(n);
            }
            fs::write(a.output.join("words.txt"), words.to_text())?;
            let doc = json!({ "tool": TOOL_VERSION, "config_hash": hash, "stories": stories });
            fs::write(a.output.join("stories.json"), serde_json::to_string_pretty(&doc)? + "\n")?;
            println!("{} stories, {} words", stories.len(), words.len());
        }
    }
    finish(g, &c)
}

/// Raster of one clamped population.
fn clamp_raster(m: &SpikeMatrix, pop: usize) -> Raster {
    let events = (0..m.steps)
        .flat_map(|t| m.at(t).iter().map(move |&n| spikeplace::raster::Event { step: t, pop, neuron: n }))
        .collect();
    Raster::new(m.steps, events, vec![])
}

fn read_stories(path: &Path) -> Result<Vec<Story>> {
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path)?)?;
    Ok(serde_json::from_value(v.get("stories").cloned().unwrap_or(v))?)
}

fn cmd_simulate(g: &Global, a: &SimulateArgs) -> Result<()> {
    let mut c = run_config(g, "simulate", a)?;
    c.inputs.insert("graph".into(), a.graph.clone());
    c.outputs.insert("raster".into(), a.output.clone());
    let graph = read_graph(&a.graph)?;
    let raster = if let Some(path) = &a.stories {
        c.inputs.insert("stories".into(), path.clone());
        let stories = read_stories(path)?;
        let story = stories.get(a.index).with_context(|| format!("no story {}", a.index))?;
        let ans = answer_relnet(&graph, story, c.mode, g.threads)?;
        println!("answer: {} (p = {:.3})", ans.word, ans.probabilities[ans.word as usize]);
        let mut r = ans.embedding;
        r.append(&ans.feedforward);
        r
    } else {
        let path = a.raster.as_ref().context("give --raster or --stories")?;
        c.inputs.insert("raster".into(), path.clone());
        let (input, _) = Raster::from_text(&fs::read_to_string(path)?)?;
        let mut clamps = BTreeMap::new();
        for p in graph.populations.iter().filter(|p| p.is_input()) {
            clamps.insert(p.id, input.population(p.id, p.size));
        }
        let steps = a.steps.unwrap_or(input.steps);
        let opts = RunOptions { steps, mode: c.mode, threads: g.threads, ..RunOptions::default() };
        let out = run(&graph, &clamps, &opts)?;
        for (pop, v) in &out.readout {
            println!("readout {}: {:?}", graph.populations[*pop].name, v);
        }
        out.raster
    };
    let header = RasterHeader { graph_hash: graph.hash(), config_hash: c.hash(), tool: TOOL_VERSION.into() };
    fs::write(&a.output, raster.to_text(&header))?;
    println!("{} events over {} steps", raster.len(), raster.steps);
    if let Some(path) = &a.metrics {
        c.outputs.insert("metrics".into(), path.clone());
        let doc = json!({ "tool": TOOL_VERSION, "config_hash": c.hash(), "metrics": metrics(&raster, &graph) });
        fs::write(path, serde_json::to_string_pretty(&doc)? + "\n")?;
    }
    finish(g, &c)
}

fn cmd_train(g: &Global, a: &TrainArgs) -> Result<()> {
    let mut c = run_config(g, "train", a)?;
    c.outputs.insert("checkpoint".into(), a.output.clone());
    let log = |e: &spikeplace::train::EpochReport| {
        let test = e.test_accuracy.map_or(String::new(), |x| format!(" test {x:.3}"));
        println!(
            "epoch {} loss {:.4} train {:.3}{test} in-range {:.3} ({:.1}s)",
            e.epoch, e.loss.total, e.train_accuracy, e.in_range_fraction, e.seconds
        );
    };
    let (graph, report, config) = match a.task {
        Task::Smnist => {
            let dir = a.data.as_ref().context("smnist training needs --data")?;
            c.inputs.insert("data".into(), dir.clone());
            let train = load_mnist(dir, "train")?;
            let test = load_mnist(dir, "test")?;
            let n = a.limit.unwrap_or(train.len()).min(train.len());
            let d = SmnistTrainConfig::default();
            let cfg = SmnistTrainConfig { epochs: a.epochs.unwrap_or(d.epochs), seed: g.seed, threads: g.threads, ..d };
            let (graph, r) = train_smnist(&cfg, &train[..n], &test, log)?;
            (graph, serde_json::to_value(&r)?, serde_json::to_value(&cfg)?)
        }
        Task::Relnet => {
            let mut graph = build_relnet(&RelNetConfig::toy(a.m, 10), g.seed)?;
            let train = pair_matching_stories(a.m, 6, 4, a.stories, g.seed)?;
            let eval = pair_matching_stories(a.m, 6, 4, 32, g.seed + 1)?;
            let d = RelNetTrainConfig::default();
            let cfg = RelNetTrainConfig { epochs: a.epochs.unwrap_or(d.epochs), seed: g.seed, threads: g.threads, ..d };
            let r = train_relnet_toy(&mut graph, &train, &eval, &cfg, log)?;
            println!("eval accuracy {:.3}, g_theta spikes per neuron {:.3}", r.eval_accuracy, r.gtheta_spikes_per_neuron);
            (graph, serde_json::to_value(&r)?, serde_json::to_value(&cfg)?)
        }
    };
    let mut ck = Checkpoint::new(graph, g.seed, config, c.hash());
    ck.report = report;
    ck.write(&a.output)?;
    finish(g, &c)
}

fn cmd_place(g: &Global, a: &PlaceArgs) -> Result<()> {
    let mut c = run_config(g, "place", a)?;
    c.inputs.insert("graph".into(), a.graph.clone());
    c.outputs.insert("placement".into(), a.output.clone());
    let mut graph = read_graph(&a.graph)?;
    let is_relnet = matches!(graph.kind, GraphKind::Relnet { .. });
    if is_relnet {
        relnet_budget(g, &mut c);
    }
    let has_relays = graph.populations.iter().any(|p| matches!(p.role, Role::Relay { .. }));
    if is_relnet && !has_relays && !a.no_relays {
        let grouping = relnet_grouping(&graph, &c.budget, &c.board)?;
        graph = insert_relays(&graph, &grouping)?;
        let out = a.graph_out.clone().unwrap_or_else(|| {
            let mut name = a.output.file_name().unwrap_or_default().to_os_string();
            name.push(".graph.json");
            a.output.with_file_name(name)
        });
        c.outputs.insert("graph".into(), out.clone());
        write_graph(&out, &graph, Some(&c.hash()), true)?;
        println!("relayed graph: {}", out.display());
    }
    let strategy = match a.strategy {
        StrategyArg::Naive => Strategy::Naive,
        StrategyArg::Optimized => Strategy::Optimized,
    };
    let p = place(&graph, strategy, &c.budget, &c.board)?;
    let file = PlacementFile::new(&graph, &p, &c.budget, &c.hash());
    file.write(&a.output)?;
    println!(
        "{strategy}: {} cores ({} compute) on {} chips",
        file.summary.cores, file.summary.compute_cores, file.summary.chips
    );
    finish(g, &c)
}

fn load_placement(path: &Path, graph: &NetworkGraph) -> Result<PlacementFile> {
    let f = PlacementFile::read(path)?;
    if f.graph_hash != graph.hash() {
        bail!("{} was made for a different graph (hash {})", path.display(), f.graph_hash);
    }
    Ok(f)
}

fn cmd_verify(g: &Global, a: &VerifyArgs) -> Result<Result<(), Failed>> {
    let c = run_config(g, "verify", a)?;
    let graph = read_graph(&a.graph)?;
    let f = load_placement(&a.placement, &graph)?;
    let v = verify(&f.placement(), &graph, &f.budget);
    finish(g, &c)?;
    if v.is_empty() {
        println!("ok: {} cores on {} chips, no violations", f.summary.cores, f.summary.chips);
        return Ok(Ok(()));
    }
    for x in &v {
        println!("{x}");
    }
    println!("{} violations", v.len());
    Ok(Err(Failed))
}

fn cmd_cost(g: &Global, a: &CostArgs) -> Result<()> {
    let mut c = run_config(g, "cost", a)?;
    c.outputs.insert("report".into(), a.output.clone());
    let graph = read_graph(&a.graph)?;
    let f = load_placement(&a.placement, &graph)?;
    let rasters = a
        .raster
        .iter()
        .map(|p| Ok(Raster::from_text(&fs::read_to_string(p).with_context(|| p.display().to_string())?)?.0))
        .collect::<Result<Vec<_>>>()?;
    let m = match &graph.kind {
        GraphKind::Relnet { config } => config.m,
        _ => 0,
    };
    let text = match &a.baseline {
        Some(path) => {
            let b = load_placement(path, &graph)?;
            let row = compare_strategies(m, &graph, &f.placement(), &b.placement(), &rasters, &c.energy, &f.budget)?;
            println!(
                "inter-chip x{:.3}, latency x{:.3}, energy x{:.3}, EDP x{:.3}",
                row.inter_chip_ratio, row.latency_ratio, row.energy_ratio, row.edp_ratio
            );
            let report = CostReport::new(vec![row], c.energy, &c.hash());
            serde_json::to_string_pretty(&report)?
        }
        None => {
            let (cost, traffic) = evaluate_strategy(&graph, &f.placement(), &rasters, &c.energy, &f.budget)?;
            println!(
                "{}: inter-chip {:.1}, latency {:.3e} s, energy {:.3e} J, EDP {:.3e}",
                cost.strategy, cost.inter_chip, cost.latency_s, cost.energy.total_j, cost.edp
            );
            serde_json::to_string_pretty(&json!({
                "format": cost::REPORT_FORMAT,
                "tool": TOOL_VERSION,
                "config_hash": c.hash(),
                "graph_hash": graph.hash(),
                "model": c.energy,
                "cost": cost,
                "traffic": traffic,
            }))?
        }
    };
    fs::write(&a.output, text + "\n")?;
    finish(g, &c)
}

fn cmd_bench(g: &Global, a: &BenchArgs) -> Result<()> {
    let mut c = run_config(g, "bench", a)?;
    c.outputs.insert("csv".into(), a.output.clone());
    relnet_budget(g, &mut c);
    let cfg = BenchConfig {
        ms: a.m.clone(),
        entities: a.entities,
        vocab: a.vocab,
        samples: a.samples,
        seed: g.seed,
        threads: g.threads,
        model: c.energy,
        budget: c.budget,
        board: c.board,
    };
    let rows = bench(&cfg, |r| {
        eprintln!(
            "M={:>2}: {} neurons, {}/{} chips, inter-chip x{:.3}, EDP x{:.3}",
            r.m, r.neurons, r.optimized.chips, r.naive.chips, r.inter_chip_ratio, r.edp_ratio
        )
    })?;
    let hash = c.hash();
    let csv = cost::to_csv(&rows)?;
    fs::write(&a.output, format!("# {TOOL_VERSION} config {hash}\n{csv}"))?;
    if let Some(path) = &a.report {
        c.outputs.insert("report".into(), path.clone());
        CostReport::new(rows.clone(), c.energy, &hash).write(path)?;
    }
    if let Some(path) = &a.plot {
        c.outputs.insert("plot".into(), path.clone());
        let doc = json!({ "tool": TOOL_VERSION, "config_hash": hash, "plot": cost::plot_data(&rows) });
        fs::write(path, serde_json::to_string_pretty(&doc)? + "\n")?;
    }
    finish(g, &c)
}
