//! Dataset generation, per-BS training sets, decentralized training and
//! evaluation.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kan::{self, FeatureKind, KanConfig, KanNetwork, OutputNorm, TrainConfig, TrainData, TrainReport};
use crate::net_model::{fairness_of, FairnessSpec, PowerVector, SystemParams, Topology};
use crate::oracle::{solve_grid, solve_gradient_with, GradientConfig, SolveResult, SolverTag};
use crate::{par, seed};

/// Fairness values swept per topology during generation: `0.0, 0.1, ..., 0.9`.
pub const ALPHA_SWEEP: [f64; 10] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Fairness values reported separately by [`evaluate`] callers.
pub const EVAL_ALPHAS: [f64; 3] = [0.1, 0.5, 0.9];

pub const DEFAULT_BETA: f64 = 0.8;

/// `Auto` seeds the gradient solver with a coarse grid optimum up to this many UEs.
pub const AUTO_GRID_MAX_UE: usize = 4;
pub const AUTO_GRID_LEVELS: usize = 8;

/// Generation gives up after this many consecutive failed solves.
const MAX_CONSECUTIVE_FAILURES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SolverChoice {
    /// Multistart gradient (8 random starts); for up to four UEs the best
    /// point of an 8-level grid is added as a start.
    Auto,
    Grid { levels: usize },
    Gradient { starts: usize },
}

impl SolverChoice {
    /// Solves one instance. `seed` only affects the gradient starts.
    pub fn solve(&self, topo: &Topology, params: &SystemParams, spec: &FairnessSpec, seed: u64) -> Result<SolveResult> {
        match *self {
            SolverChoice::Grid { levels } => solve_grid(topo, params, spec, levels),
            SolverChoice::Gradient { starts } => {
                let cfg = GradientConfig { starts, ..Default::default() };
                solve_gradient_with(topo, params, spec, &cfg, seed, &[])
            }
            SolverChoice::Auto => {
                let extra = if topo.n_ue() <= AUTO_GRID_MAX_UE {
                    vec![solve_grid(topo, params, spec, AUTO_GRID_LEVELS)?.powers.into_inner()]
                } else {
                    Vec::new()
                };
                solve_gradient_with(topo, params, spec, &GradientConfig::default(), seed, &extra)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub n_ue: usize,
    pub n_bs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub t: usize,
    pub topology: Topology,
    pub alpha: f64,
    pub powers: PowerVector,
    pub solver_tag: SolverTag,
    pub fairness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub params: SystemParams,
    pub scenario: Scenario,
    pub size: usize,
    pub seed: u64,
    pub solver: SolverChoice,
    /// Topologies drawn, including ones whose records were cut off by `size`.
    pub topologies: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<DatasetRecord>,
}

fn solve_pair(
    params: &SystemParams,
    scenario: Scenario,
    master: u64,
    solver: SolverChoice,
    pair: usize,
) -> Result<(Topology, f64, SolveResult)> {
    let topo_index = pair / ALPHA_SWEEP.len();
    let alpha = ALPHA_SWEEP[pair % ALPHA_SWEEP.len()];
    let mut rng = seed::rng(master, seed::TOPOLOGY, topo_index as u64);
    let topo = Topology::sample(&mut rng, scenario.n_ue, scenario.n_bs, params)?;
    let spec = FairnessSpec::new(alpha)?;
    let result = solver.solve(&topo, params, &spec, seed::derive(master, seed::SOLVER, pair as u64))?;
    Ok((topo, alpha, result))
}

/// Draws topologies and labels each one at every alpha in [`ALPHA_SWEEP`]
/// until exactly `size` records exist.
///
/// Each (topology, alpha) pair has its own seeds, so the output depends only
/// on the arguments. Failed solves are logged and skipped; later pairs fill
/// their place.
pub fn generate_dataset(
    params: &SystemParams,
    scenario: Scenario,
    size: usize,
    seed: u64,
    solver: SolverChoice,
) -> Result<Dataset> {
    params.validate()?;
    if size == 0 {
        return Err(invalid("dataset size must be at least 1"));
    }
    if scenario.n_ue == 0 || scenario.n_bs == 0 || scenario.n_bs > scenario.n_ue {
        return Err(invalid("need at least one UE per base station"));
    }
    let mut records = Vec::with_capacity(size);
    let mut next_pair = 0usize;
    let mut skipped = 0usize;
    let mut failures_in_row = 0usize;
    while records.len() < size {
        let want = size - records.len();
        let pairs: Vec<usize> = (next_pair..next_pair + want).collect();
        next_pair += want;
        let results = par::map(&pairs, |&p| solve_pair(params, scenario, seed, solver, p));
        for (pair, res) in pairs.iter().zip(results) {
            match res {
                Ok((topology, alpha, r)) => {
                    failures_in_row = 0;
                    records.push(DatasetRecord {
                        t: records.len(),
                        topology,
                        alpha,
                        powers: r.powers,
                        solver_tag: r.solver_tag,
                        fairness: r.fairness,
                    });
                }
                Err(e) => {
                    log::warn!("skipping pair {pair}: {e}");
                    skipped += 1;
                    failures_in_row += 1;
                    if failures_in_row >= MAX_CONSECUTIVE_FAILURES {
                        return Err(e);
                    }
                }
            }
        }
    }
    let header = DatasetHeader {
        params: *params,
        scenario,
        size,
        seed,
        solver,
        topologies: next_pair.div_ceil(ALPHA_SWEEP.len()),
        skipped,
    };
    Ok(Dataset { header, records })
}

impl Dataset {
    /// JSON lines: the header, then one record per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads and integrity-checks a dataset written by [`Dataset::write_jsonl`].
    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header: DatasetHeader = match lines.next() {
            Some(line) => serde_json::from_str(&line?)?,
            None => return Err(Error::Parse("empty dataset file".into())),
        };
        let mut records = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        let ds = Dataset { header, records };
        ds.verify()?;
        Ok(ds)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_jsonl(std::io::BufWriter::new(f))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_jsonl(std::io::BufReader::new(f))
    }

    /// Checks bounds and recomputes every stored fairness value (to 1e-9, relative
    /// for large magnitudes).
    pub fn verify(&self) -> Result<()> {
        let params = &self.header.params;
        params.validate()?;
        for r in &self.records {
            let bad = |what: &str| Error::Integrity(format!("record {}: {what}", r.t));
            r.topology.validate().map_err(|e| bad(&e.to_string()))?;
            if r.powers.len() != r.topology.n_ue() {
                return Err(bad("power vector length"));
            }
            PowerVector::new(r.powers.as_slice().to_vec(), params).map_err(|e| bad(&e.to_string()))?;
            let spec = FairnessSpec::new(r.alpha).map_err(|e| bad(&e.to_string()))?;
            let f = fairness_of(&r.topology, r.powers.as_slice(), params, &spec)?;
            if !((f - r.fairness).abs() <= 1e-9 * r.fairness.abs().max(1.0)) {
                return Err(bad(&format!("stored fairness {} but recomputed {}", r.fairness, f)));
            }
        }
        Ok(())
    }
}

/// Network input for BS-local prediction: every gain `h[i][k]` (UE-major),
/// then alpha.
pub fn features(record: &DatasetRecord) -> Vec<f64> {
    let mut x: Vec<f64> = record.topology.gains.iter().flatten().copied().collect();
    x.push(record.alpha);
    x
}

/// Record-level train/test split shared by all base stations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles record positions with the split stream of `seed`; the first
/// `ceil(beta * D)` go to training.
pub fn split_records(n: usize, beta: f64, seed: u64) -> Result<Split> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(invalid("beta must lie strictly between 0 and 1"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed, seed::SPLIT, 0));
    let n_train = ((beta * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let test = idx.split_off(n_train.min(n));
    Ok(Split { train: idx, test })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BsTrainingSet {
    pub bs: usize,
    pub train: TrainData,
    pub test: TrainData,
}

/// Targets for BS `k`: powers of the UEs it serves, in UE order.
fn targets(record: &DatasetRecord, k: usize) -> Vec<f64> {
    record.topology.served_by(k).iter().map(|&i| record.powers.as_slice()[i]).collect()
}

/// Builds per-BS feature/target sets over a shared split.
pub fn build_bs_sets(dataset: &Dataset, beta: f64, seed: u64) -> Result<(Split, Vec<BsTrainingSet>)> {
    if dataset.records.is_empty() {
        return Err(invalid("dataset is empty"));
    }
    let n_bs = dataset.header.scenario.n_bs;
    let n_ue = dataset.header.scenario.n_ue;
    for r in &dataset.records {
        if r.topology.n_bs() != n_bs || r.topology.n_ue() != n_ue {
            return Err(Error::Integrity(format!("record {} does not match the scenario", r.t)));
        }
    }
    let split = split_records(dataset.records.len(), beta, seed)?;
    let mut sets = Vec::with_capacity(n_bs);
    for k in 0..n_bs {
        let count = dataset.records[0].topology.served_by(k).len();
        if dataset.records.iter().any(|r| r.topology.served_by(k).len() != count) || count == 0 {
            return Err(Error::Integrity(format!("base station {k} serves an uneven or zero number of UEs")));
        }
        let collect = |idx: &[usize]| TrainData {
            xs: idx.iter().map(|&i| features(&dataset.records[i])).collect(),
            ys: idx.iter().map(|&i| targets(&dataset.records[i], k)).collect(),
        };
        sets.push(BsTrainingSet { bs: k, train: collect(&split.train), test: collect(&split.test) });
    }
    Ok((split, sets))
}

/// Trained network for one base station together with what produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub bs: usize,
    pub params: SystemParams,
    pub kan: KanConfig,
    pub train: TrainConfig,
    pub network: KanNetwork,
    pub report: TrainReport,
}

pub fn new_network(in_dim: usize, out_dim: usize, params: &SystemParams, cfg: &KanConfig, seed: u64) -> Result<KanNetwork> {
    let mut kinds = vec![FeatureKind::LogGain; in_dim - 1];
    kinds.push(FeatureKind::Alpha);
    KanNetwork::new(&cfg.dims(in_dim, out_dim), cfg, &kinds, OutputNorm { lo: params.p_min, hi: params.p_max }, seed)
}

/// Trains one network per base station, independently and in parallel.
/// Every BS uses the same seeds, so identical data gives identical networks.
pub fn train_decentralized(
    sets: &[BsTrainingSet],
    params: &SystemParams,
    kan_cfg: &KanConfig,
    train_cfg: &TrainConfig,
) -> Vec<Result<Checkpoint>> {
    par::map(sets, |set| {
        let in_dim = set.train.xs.first().map_or(0, Vec::len);
        let out_dim = set.train.ys.first().map_or(0, Vec::len);
        if in_dim < 2 || out_dim == 0 {
            return Err(invalid(format!("training set for base station {} is empty", set.bs)));
        }
        let mut net = new_network(in_dim, out_dim, params, kan_cfg, train_cfg.seed)?;
        net.initialize_from_data(&set.train.xs, kan_cfg.hidden_margin)?;
        let report = kan::train(&mut net, &set.train, train_cfg)?;
        Ok(Checkpoint { bs: set.bs, params: *params, kan: kan_cfg.clone(), train: train_cfg.clone(), network: net, report })
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaMetrics {
    pub alpha: f64,
    pub records: usize,
    pub power_mape: f64,
    pub fairness_gap: f64,
}

/// Both metrics are percentages. `power_mape` is the mean of
/// `|p_pred - p_opt| / (p_max - p_min)` over records and UEs; `fairness_gap`
/// is the mean of `(F(opt) - F(pred)) / |F(opt)|` over records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n_ue: usize,
    pub n_bs: usize,
    pub records: usize,
    pub power_mape: f64,
    pub fairness_gap: f64,
    pub per_alpha: Vec<AlphaMetrics>,
}

impl Metrics {
    pub fn alpha(&self, alpha: f64) -> Option<&AlphaMetrics> {
        self.per_alpha.iter().find(|a| (a.alpha - alpha).abs() < 1e-9)
    }

    /// CSV with columns `alpha,n_ue,power_mape,fairness_gap`; the last row
    /// (alpha `all`) covers every record.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("alpha,n_ue,power_mape,fairness_gap\n");
        for a in &self.per_alpha {
            s.push_str(&format!("{},{},{},{}\n", a.alpha, self.n_ue, a.power_mape, a.fairness_gap));
        }
        s.push_str(&format!("all,{},{},{}\n", self.n_ue, self.power_mape, self.fairness_gap));
        s
    }
}

/// Anything that maps BS-local features to the powers of the BS's UEs.
pub trait PowerPredictor: Sync {
    fn predict(&self, x: &[f64]) -> Result<Vec<f64>>;
}

impl PowerPredictor for KanNetwork {
    fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward(x)
    }
}

impl PowerPredictor for kan::SymbolicModel {
    fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward(x)
    }
}

/// Assembles the per-BS predictions for a record into one power vector.
pub fn predict_powers<M: PowerPredictor>(models: &[M], record: &DatasetRecord, params: &SystemParams) -> Result<PowerVector> {
    let x = features(record);
    let mut p = vec![f64::NAN; record.topology.n_ue()];
    for (k, net) in models.iter().enumerate() {
        let served = record.topology.served_by(k);
        let y = net.predict(&x)?;
        if y.len() != served.len() {
            return Err(invalid(format!("network {k} predicts {} powers for {} UEs", y.len(), served.len())));
        }
        for (&i, v) in served.iter().zip(y) {
            p[i] = v;
        }
    }
    PowerVector::new(p, params)
}

/// Scores the models (one per BS, in BS order) on the records at `test`.
pub fn evaluate<M: PowerPredictor>(networks: &[M], dataset: &Dataset, test: &[usize], params: &SystemParams) -> Result<Metrics> {
    if test.is_empty() {
        return Err(invalid("no test records"));
    }
    let span = params.p_max - params.p_min;
    let rows = par::map(test, |&i| -> Result<(f64, f64, f64)> {
        let r = dataset.records.get(i).ok_or_else(|| invalid(format!("no record {i}")))?;
        let pred = predict_powers(networks, r, params)?;
        let err: f64 = pred.as_slice().iter().zip(r.powers.as_slice()).map(|(a, b)| (a - b).abs() / span).sum::<f64>()
            / r.powers.len() as f64;
        let spec = FairnessSpec::new(r.alpha)?;
        let f_pred = fairness_of(&r.topology, pred.as_slice(), params, &spec)?;
        let f_opt = fairness_of(&r.topology, r.powers.as_slice(), params, &spec)?;
        let gap = (f_opt - f_pred) / f_opt.abs().max(1e-12);
        Ok((r.alpha, err, gap))
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    // Sum per alpha in a fixed (sorted) order so the result ignores record order.
    let mut by_alpha: BTreeMap<i64, Vec<(f64, f64)>> = BTreeMap::new();
    for &(a, e, g) in &rows {
        by_alpha.entry((a * 1e6).round() as i64).or_default().push((e, g));
    }
    let mean = |v: &mut Vec<(f64, f64)>| {
        v.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
        let n = v.len() as f64;
        (100.0 * v.iter().map(|x| x.0).sum::<f64>() / n, 100.0 * v.iter().map(|x| x.1).sum::<f64>() / n)
    };
    let mut per_alpha = Vec::new();
    for (key, v) in by_alpha.iter_mut() {
        let (m, g) = mean(v);
        per_alpha.push(AlphaMetrics { alpha: *key as f64 / 1e6, records: v.len(), power_mape: m, fairness_gap: g });
    }
    let mut all: Vec<(f64, f64)> = rows.iter().map(|&(_, e, g)| (e, g)).collect();
    let (power_mape, fairness_gap) = mean(&mut all);
    let sc = dataset.header.scenario;
    Ok(Metrics { n_ue: sc.n_ue, n_bs: sc.n_bs, records: rows.len(), power_mape, fairness_gap, per_alpha })
}

/// Output of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct Experiment {
    pub split: Split,
    pub checkpoints: Vec<Checkpoint>,
    pub metrics: Metrics,
}

/// Splits, trains one network per BS and evaluates on the held-out records.
/// Fails if any BS fails to train.
pub fn run_experiment(
    dataset: &Dataset,
    beta: f64,
    kan_cfg: &KanConfig,
    train_cfg: &TrainConfig,
) -> Result<Experiment> {
    let params = dataset.header.params;
    let (split, sets) = build_bs_sets(dataset, beta, train_cfg.seed)?;
    let checkpoints = train_decentralized(&sets, &params, kan_cfg, train_cfg)
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let networks: Vec<KanNetwork> = checkpoints.iter().map(|c| c.network.clone()).collect();
    let metrics = evaluate(&networks, dataset, &split.test, &params)?;
    Ok(Experiment { split, checkpoints, metrics })
}
