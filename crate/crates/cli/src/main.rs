//! `fairkan` command-line front end.
//!
//! Every command reads an optional config file (JSON, or TOML when the file
//! ends in `.toml`), applies command-line overrides, does its work in memory
//! and only then creates the output directory and writes its files.

use std::error::Error as StdError;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use fairkan::kan::{self, op_count, op_count_symbolic, prune, symbolic_export, KanConfig, Optimizer, TrainConfig};
use fairkan::net_model::{FairnessSpec, SystemParams, Topology, TopologyFile};
use fairkan::oracle::{fairness_surface, SolveResult};
use fairkan::pipeline::{self, Checkpoint, Dataset, Scenario, SolverChoice};
use fairkan::reduction::{self, Graph};

type CliResult<T> = Result<T, Box<dyn StdError>>;

/// Status line on stdout; a closed pipe is not an error.
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

const TWO_UE_TOPOLOGY: &str = include_str!("../assets/two_ue_topology.json");
const TWO_UE_CONFIG: &str = include_str!("../assets/two_ue_config.toml");

/// Run configuration. Every field has a default; flags override file values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    params: SystemParams,
    n_ue: usize,
    n_bs: usize,
    size: usize,
    seed: u64,
    solver: SolverChoice,
    kan: KanConfig,
    train: TrainConfig,
    beta: f64,
    out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            params: SystemParams::default(),
            n_ue: 4,
            n_bs: 1,
            size: 1000,
            seed: 0,
            solver: SolverChoice::Auto,
            kan: KanConfig::default(),
            train: TrainConfig::default(),
            beta: pipeline::DEFAULT_BETA,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    fn parse(text: &str, toml_format: bool) -> CliResult<Self> {
        Ok(if toml_format { toml::from_str(text)? } else { serde_json::from_str(text)? })
    }

    fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        Self::parse(&text, is_toml).map_err(|e| format!("bad config {}: {e}", path.display()).into())
    }
}

#[derive(Parser, Debug)]
#[command(name = "fairkan", version, about = "Alpha-fair power allocation with KAN surrogates")]
struct Cli {
    /// JSON or TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (created on success).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    threads: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a labelled dataset (dataset.jsonl).
    Generate(GenerateArgs),
    /// Train one KAN per BS and evaluate on the held-out split.
    TrainEval(TrainEvalArgs),
    /// Solve one instance (solve.json, optionally sweep.csv).
    Solve(SolveArgs),
    /// Build and check the independent-set instance of a graph (reduction.json).
    Reduce(ReduceArgs),
    /// Prune a checkpoint and export symbolic formulas with op counts.
    Explain(ExplainArgs),
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum SolverKind {
    Auto,
    Grid,
    Gradient,
}

#[derive(Args, Debug, Clone)]
struct SolverArgs {
    #[arg(long, value_enum)]
    solver: Option<SolverKind>,
    /// Grid levels per UE.
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(2..))]
    levels: u64,
    /// Random starts for the gradient solver.
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    starts: u64,
}

impl SolverArgs {
    fn choice(&self) -> Option<SolverChoice> {
        self.solver.map(|k| match k {
            SolverKind::Auto => SolverChoice::Auto,
            SolverKind::Grid => SolverChoice::Grid { levels: self.levels as usize },
            SolverKind::Gradient => SolverChoice::Gradient { starts: self.starts as usize },
        })
    }
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    ues: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    bss: Option<u64>,
    /// Number of records.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    size: Option<u64>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum OptimizerKind {
    Adam,
    LineSearch,
}

#[derive(Args, Debug)]
struct TrainEvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Fraction of records used for training.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    batch: Option<u64>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerKind>,
}

#[derive(Args, Debug)]
struct SolveArgs {
    /// Topology JSON (`bs`, `ue`, optional `gains` and `assoc`).
    #[arg(long, conflicts_with = "example", required_unless_present = "example")]
    topology: Option<PathBuf>,
    /// Use the bundled two-UE example topology and its parameters.
    #[arg(long)]
    example: bool,
    #[arg(long)]
    alpha: f64,
    #[command(flatten)]
    solver: SolverArgs,
    /// Also write the fairness surface on an N x N log grid (two UEs only).
    #[arg(long, value_name = "N", value_parser = clap::value_parser!(u64).range(2..=4096))]
    sweep: Option<u64>,
}

#[derive(Args, Debug)]
struct ReduceArgs {
    /// Edge list: header `n <count>`, then `u v` per line.
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(2..))]
    levels: u64,
    #[arg(long, default_value_t = reduction::DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, default_value_t = reduction::DEFAULT_M)]
    m: f64,
    /// High-power cutoff as a fraction of `p_max`.
    #[arg(long, default_value_t = reduction::DEFAULT_THRESHOLD)]
    threshold: f64,
}

#[derive(Args, Debug)]
struct ExplainArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Edges with mean |phi| below this are pruned.
    #[arg(long, default_value_t = 0.03)]
    threshold: f64,
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(2..))]
    probe_points: u64,
}

/// Files produced by a command, written together once the work is done.
struct Outputs(Vec<(String, Vec<u8>)>);

impl Outputs {
    fn new() -> Self {
        Self(Vec::new())
    }

    fn add(&mut self, name: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.0.push((name.into(), bytes.into()));
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.add(name, text);
        Ok(())
    }

    fn write(self, dir: &Path) -> CliResult<()> {
        fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))?;
        for (name, bytes) in self.0 {
            let path = dir.join(&name);
            fs::write(&path, bytes).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
            say!("wrote {}", path.display());
        }
        Ok(())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    set_threads(cli.threads)?;
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Command::Solve(a) = &cli.command {
        if a.example && cli.config.is_none() {
            cfg = RunConfig::parse(TWO_UE_CONFIG, true)?;
        }
    }
    if let Some(dir) = cli.out_dir {
        cfg.out_dir = dir;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.params.validate()?;

    let outputs = match cli.command {
        Command::Generate(a) => generate(&mut cfg, &a)?,
        Command::TrainEval(a) => train_eval(&mut cfg, &a)?,
        Command::Solve(a) => solve(&cfg, &a)?,
        Command::Reduce(a) => reduce(&cfg, &a)?,
        Command::Explain(a) => explain(&a)?,
    };
    outputs.write(&cfg.out_dir)
}

#[cfg(feature = "parallel")]
fn set_threads(threads: Option<u64>) -> CliResult<()> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new().num_threads(n as usize).build_global()?;
    }
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn set_threads(threads: Option<u64>) -> CliResult<()> {
    if threads.is_some() {
        log::warn!("built without the `parallel` feature; --threads has no effect");
    }
    Ok(())
}

fn generate(cfg: &mut RunConfig, a: &GenerateArgs) -> CliResult<Outputs> {
    if let Some(n) = a.ues {
        cfg.n_ue = n as usize;
    }
    if let Some(b) = a.bss {
        cfg.n_bs = b as usize;
    }
    if let Some(s) = a.size {
        cfg.size = s as usize;
    }
    if let Some(s) = a.solver.choice() {
        cfg.solver = s;
    }
    if cfg.size == 0 {
        return Err("dataset size must be at least 1".into());
    }
    let scenario = Scenario { n_ue: cfg.n_ue, n_bs: cfg.n_bs };
    let ds = pipeline::generate_dataset(&cfg.params, scenario, cfg.size, cfg.seed, cfg.solver)?;
    say!(
        "generated {} records from {} topologies ({} skipped)",
        ds.records.len(),
        ds.header.topologies,
        ds.header.skipped
    );
    let mut bytes = Vec::new();
    ds.write_jsonl(&mut bytes)?;
    let mut out = Outputs::new();
    out.add("dataset.jsonl", bytes);
    Ok(out)
}

fn train_eval(cfg: &mut RunConfig, a: &TrainEvalArgs) -> CliResult<Outputs> {
    let ds = Dataset::load(&a.dataset).map_err(|e| format!("cannot load dataset {}: {e}", a.dataset.display()))?;
    if let Some(b) = a.beta {
        cfg.beta = b;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.train.learning_rate = lr;
    }
    match (a.optimizer, a.batch) {
        (Some(OptimizerKind::LineSearch), _) => cfg.train.optimizer = Optimizer::LineSearch,
        (Some(OptimizerKind::Adam), b) => {
            cfg.train.optimizer = Optimizer::Adam { batch_size: b.map_or(16, |b| b as usize) }
        }
        (None, Some(b)) => cfg.train.optimizer = Optimizer::Adam { batch_size: b as usize },
        (None, None) => {}
    }
    cfg.train.seed = cfg.seed;

    let exp = pipeline::run_experiment(&ds, cfg.beta, &cfg.kan, &cfg.train)?;
    let m = &exp.metrics;
    say!("test records {}: power MAPE {:.2}%, fairness gap {:.2}%", m.records, m.power_mape, m.fairness_gap);
    for pa in &m.per_alpha {
        say!("  alpha {:.1}: power MAPE {:.2}%, fairness gap {:.2}%", pa.alpha, pa.power_mape, pa.fairness_gap);
    }
    let mut out = Outputs::new();
    for c in &exp.checkpoints {
        out.json(&format!("checkpoint_bs{}.json", c.bs), c)?;
    }
    out.json("metrics.json", m)?;
    out.add("metrics.csv", m.to_csv());
    Ok(out)
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    params: &'a SystemParams,
    topology: &'a Topology,
    alpha: f64,
    solver: SolverChoice,
    seed: u64,
    result: &'a SolveResult,
}

fn solve(cfg: &RunConfig, a: &SolveArgs) -> CliResult<Outputs> {
    let file: TopologyFile = match &a.topology {
        Some(path) => serde_json::from_str(
            &fs::read_to_string(path).map_err(|e| format!("cannot read topology {}: {e}", path.display()))?,
        )
        .map_err(|e| format!("bad topology {}: {e}", path.display()))?,
        None => serde_json::from_str(TWO_UE_TOPOLOGY)?,
    };
    let topo = Topology::from_file(file, &cfg.params)?;
    let spec = FairnessSpec::new(a.alpha)?;
    let solver = a.solver.choice().unwrap_or(cfg.solver);
    let result = solver.solve(&topo, &cfg.params, &spec, cfg.seed)?;
    say!("F = {} at p = {:?}", result.fairness, result.powers.as_slice());

    let mut out = Outputs::new();
    out.json(
        "solve.json",
        &SolveOutput { params: &cfg.params, topology: &topo, alpha: a.alpha, solver, seed: cfg.seed, result: &result },
    )?;
    if let Some(n) = a.sweep {
        let rows = fairness_surface(&topo, &cfg.params, &spec, n as usize)?;
        let mut csv = String::from("p1,p2,fairness\n");
        for [p1, p2, f] in rows {
            csv.push_str(&format!("{p1},{p2},{f}\n"));
        }
        out.add("sweep.csv", csv);
    }
    Ok(out)
}

#[derive(Serialize)]
struct ReduceOutput<'a> {
    graph: String,
    instance: &'a reduction::ReducedInstance,
    levels: usize,
    threshold: f64,
    result: &'a SolveResult,
    correspondence: &'a reduction::Correspondence,
}

fn reduce(cfg: &RunConfig, a: &ReduceArgs) -> CliResult<Outputs> {
    let text =
        fs::read_to_string(&a.graph).map_err(|e| format!("cannot read graph {}: {e}", a.graph.display()))?;
    let graph: Graph = text.parse()?;
    let inst = reduction::build_instance(&graph, a.epsilon, a.m, &cfg.params)?;
    let spec = FairnessSpec::new(inst.alpha)?;
    let result = fairkan::oracle::solve_grid(&inst.topology, &inst.params, &spec, a.levels as usize)?;
    let corr = reduction::verify_correspondence(&graph, &inst, &result, a.threshold)?;
    say!(
        "verdict {:?}: extracted {:?}, independent {}, maximum independent set size {}",
        corr.verdict, corr.extracted, corr.independent, corr.mis_size
    );
    let mut out = Outputs::new();
    out.json(
        "reduction.json",
        &ReduceOutput {
            graph: graph.to_string(),
            instance: &inst,
            levels: a.levels as usize,
            threshold: a.threshold,
            result: &result,
            correspondence: &corr,
        },
    )?;
    out.json("instance_topology.json", &inst.topology.to_file())?;
    Ok(out)
}

#[derive(Serialize)]
struct OpsOutput {
    threshold: f64,
    unpruned: kan::OpCount,
    unpruned_total: u64,
    pruned: kan::OpCount,
    pruned_total: u64,
    symbolic: kan::OpCount,
    symbolic_total: u64,
    active_edges_before: usize,
    active_edges_after: usize,
    rolled_back_outputs: Vec<usize>,
}

fn explain(a: &ExplainArgs) -> CliResult<Outputs> {
    let text = fs::read_to_string(&a.checkpoint)
        .map_err(|e| format!("cannot read checkpoint {}: {e}", a.checkpoint.display()))?;
    let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| format!("bad checkpoint: {e}"))?;
    let mut net = ck.network;
    let unpruned = op_count(&net);
    let report = prune(&mut net, a.threshold)?;
    let pruned = op_count(&net);
    let model = symbolic_export(&net, a.probe_points as usize)?;
    let symbolic = op_count_symbolic(&model);
    say!(
        "edges {} -> {}; ops {} (unpruned) {} (pruned) {} (symbolic)",
        report.active_before,
        report.active_after,
        unpruned.total(),
        pruned.total(),
        symbolic.total()
    );
    let mut out = Outputs::new();
    out.add("formulas.txt", model.formula_text());
    out.json("symbolic.json", &model)?;
    out.json(
        "ops.json",
        &OpsOutput {
            threshold: a.threshold,
            unpruned,
            unpruned_total: unpruned.total(),
            pruned,
            pruned_total: pruned.total(),
            symbolic,
            symbolic_total: symbolic.total(),
            active_edges_before: report.active_before,
            active_edges_after: report.active_after,
            rolled_back_outputs: report.rolled_back,
        },
    )?;
    Ok(out)
}
