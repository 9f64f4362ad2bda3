//! Leak sweeps with random initial sensors, replay of recorded measurements,
//! and mean/std aggregation of the evaluation measures.
//!
//! Every random draw is seeded from the master seed and the run's
//! coordinates, so runs can execute in any order on any number of workers
//! and still produce byte-identical output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::inp::{parse_inp, InpError};
use crate::leak_sim::{noised_measurement_with, GroundTruth, LeakSimError, NoiseSpec};
use crate::localization::{
    iterative_localize_with_bank, CandidateBank, LocalizationError, MeasurementSource, SensorConfig,
};
use crate::metrics::{evaluate, DistanceOracle};
use crate::model::{HydraulicModel, MatrixError, NodeId, PressureMatrix};
use crate::seed;
use crate::solver::{HydraulicSolver, SolverError, SolverSettings};

/// Fraction of failed runs above which a sweep is rejected.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error("unknown node label {0:?}")]
    UnknownNode(String),
    #[error("measurement file has no column for node {0:?}")]
    MissingColumn(String),
    #[error("measurement file: {0}")]
    Measurement(String),
    #[error("{excluded} of {total} runs failed")]
    TooManyExclusions { excluded: usize, total: usize },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Inp(#[from] InpError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    LeakSim(#[from] LeakSimError),
    #[error(transparent)]
    Localization(#[from] LocalizationError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeSelection {
    /// Every junction of the model.
    AllJunctions,
    Labels(Vec<String>),
}

impl Serialize for NodeSelection {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            NodeSelection::AllJunctions => s.serialize_str("all"),
            NodeSelection::Labels(l) => l.serialize(s),
        }
    }
}

impl NodeSelection {
    fn parse(value: &str) -> Self {
        if value.trim().eq_ignore_ascii_case("all") {
            NodeSelection::AllJunctions
        } else {
            NodeSelection::Labels(
                value
                    .split([',', ' ', '\t'])
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect(),
            )
        }
    }

    /// Node ids in dense order, without duplicates.
    pub fn resolve(&self, model: &HydraulicModel) -> Result<Vec<NodeId>, HarnessError> {
        let mut ids = match self {
            NodeSelection::AllJunctions => model.junction_ids().collect(),
            NodeSelection::Labels(labels) => labels
                .iter()
                .map(|l| {
                    model
                        .node_id(l)
                        .filter(|&n| model.is_junction(n))
                        .ok_or_else(|| HarnessError::UnknownNode(l.clone()))
                })
                .collect::<Result<Vec<_>, _>>()?,
        };
        ids.sort_unstable();
        ids.dedup();
        Ok(ids)
    }
}

/// Experiment settings, as read from a `key = value` file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub model: PathBuf,
    pub allowed: NodeSelection,
    /// Stationary sensors plus the one mobile sensor.
    pub n_sensors: usize,
    /// Leak size used for the candidate simulations, m³/h.
    pub leak_size: f64,
    /// Leak size of the simulated ground truth; defaults to `leak_size`.
    pub true_leak_size: f64,
    pub noise_bound: f64,
    pub noise_sigma_fraction: f64,
    pub seed: u64,
    pub repetitions: usize,
    /// Localization rounds per run; the mobile sensor moves between rounds.
    pub iterations: usize,
    pub leak_nodes: NodeSelection,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: PathBuf::new(),
            allowed: NodeSelection::AllJunctions,
            n_sensors: 3,
            leak_size: 6.38,
            true_leak_size: 6.38,
            noise_bound: 0.0,
            noise_sigma_fraction: 0.5,
            seed: 0,
            repetitions: 1,
            iterations: 2,
            leak_nodes: NodeSelection::AllJunctions,
            output: None,
        }
    }
}

impl ExperimentConfig {
    /// Parses the key-value format. Relative paths are resolved against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, HarnessError> {
        let mut cfg = ExperimentConfig::default();
        let mut seen_model = false;
        let mut true_size = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| HarnessError::Config {
                line,
                message: format!("expected key = value, got {content:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| HarnessError::Config {
                line,
                message: format!("{key}: expected {what}, got {value:?}"),
            };
            match key {
                "model" => {
                    cfg.model = base_dir.join(value);
                    seen_model = true;
                }
                "allowed" => cfg.allowed = NodeSelection::parse(value),
                "leak_nodes" => cfg.leak_nodes = NodeSelection::parse(value),
                "n_sensors" => cfg.n_sensors = value.parse().map_err(|_| bad("an integer"))?,
                "repetitions" => cfg.repetitions = value.parse().map_err(|_| bad("an integer"))?,
                "iterations" => cfg.iterations = value.parse().map_err(|_| bad("an integer"))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad("an unsigned integer"))?,
                "leak_size" => cfg.leak_size = value.parse().map_err(|_| bad("a number"))?,
                "true_leak_size" => true_size = Some(value.parse().map_err(|_| bad("a number"))?),
                "noise_bound" => cfg.noise_bound = value.parse().map_err(|_| bad("a number"))?,
                "noise_sigma_fraction" => {
                    cfg.noise_sigma_fraction = value.parse().map_err(|_| bad("a number"))?
                }
                "output" => cfg.output = Some(base_dir.join(value)),
                _ => {
                    return Err(HarnessError::Config {
                        line,
                        message: format!("unknown key {key:?}"),
                    })
                }
            }
        }
        if !seen_model {
            return Err(HarnessError::Config {
                line: 0,
                message: "missing required key \"model\"".into(),
            });
        }
        cfg.true_leak_size = true_size.unwrap_or(cfg.leak_size);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn noise(&self) -> NoiseSpec {
        NoiseSpec {
            bound: self.noise_bound,
            sigma_fraction: self.noise_sigma_fraction,
            seed: 0,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// A config bound to a loaded model.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub model: HydraulicModel,
    pub allowed: Vec<NodeId>,
    pub leak_nodes: Vec<NodeId>,
    pub settings: SolverSettings,
}

impl Experiment {
    pub fn new(config: ExperimentConfig, model: HydraulicModel) -> Result<Self, HarnessError> {
        let allowed = config.allowed.resolve(&model)?;
        let leak_nodes = config.leak_nodes.resolve(&model)?;
        let c = &config;
        let invalid = |m: String| Err(HarnessError::Invalid(m));
        if c.n_sensors == 0 {
            return invalid("n_sensors must be at least 1".into());
        }
        if c.n_sensors > allowed.len() {
            return invalid(format!(
                "n_sensors = {} exceeds the {} allowed locations",
                c.n_sensors,
                allowed.len()
            ));
        }
        if c.repetitions == 0 || c.iterations == 0 {
            return invalid("repetitions and iterations must be at least 1".into());
        }
        if leak_nodes.is_empty() {
            return invalid("no leak nodes".into());
        }
        for (name, v) in [("leak_size", c.leak_size), ("true_leak_size", c.true_leak_size)] {
            if !(v.is_finite() && v > 0.0) {
                return invalid(format!("{name} must be positive, got {v}"));
            }
        }
        config.noise().validate()?;
        Ok(Experiment {
            config,
            model,
            allowed,
            leak_nodes,
            settings: SolverSettings::default(),
        })
    }

    pub fn load(config: ExperimentConfig) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(&config.model).map_err(io_err(&config.model))?;
        let model = parse_inp(&text)?;
        Self::new(config, model)
    }
}

/// Noise seed of the synthetic measurement for a leak at `leak_node`.
///
/// Shared by every repetition of that leak node, so a measurement exported
/// once can be replayed against all of them.
pub fn measurement_seed(master: u64, leak_node: NodeId) -> u64 {
    seed::derive_seed(master, "measurement", &[leak_node.index() as u64])
}

/// Initial sensors of one run: `n` distinct allowed nodes; the first drawn
/// is the mobile sensor.
pub fn draw_sensors(
    master: u64,
    leak_node: NodeId,
    repetition: usize,
    allowed: &[NodeId],
    n: usize,
) -> Result<SensorConfig, LocalizationError> {
    let mut rng = seed::stream(master, "sensors", &[leak_node.index() as u64, repetition as u64]);
    let mut pool = allowed.to_vec();
    let (chosen, _) = pool.partial_shuffle(&mut rng, n);
    let chosen = chosen.to_vec();
    SensorConfig::new(chosen[1..].iter().copied(), chosen[0], allowed.iter().copied())
}

/// One CSV row: one iteration of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub leak_node: String,
    pub repetition: usize,
    pub iteration: usize,
    pub n_sensors: usize,
    /// Mobile sensor first, then the stationary ones in model order, ';'-separated.
    pub sensor_list: String,
    pub m_s: String,
    pub d_leak_m: f64,
    pub d_sensor_m: f64,
    pub rank: usize,
    pub rmse_best: f64,
    pub excluded_flag: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub n_sensors: usize,
    pub iteration: usize,
    pub count: usize,
    pub d_leak_mean: f64,
    pub d_leak_std: f64,
    pub d_sensor_mean: f64,
    pub d_sensor_std: f64,
    pub rank_mean: f64,
    pub rank_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    /// Sorted by (leak node, repetition, iteration).
    pub records: Vec<RunRecord>,
    pub aggregates: Vec<AggregateRow>,
    pub runs: usize,
    pub excluded: usize,
}

struct RunKey {
    leak: NodeId,
    repetition: usize,
}

fn run_one(
    exp: &Experiment,
    bank: &CandidateBank,
    oracle: &DistanceOracle,
    source: &dyn MeasurementSource,
    key: &RunKey,
) -> Vec<RunRecord> {
    let c = &exp.config;
    let model = &exp.model;
    let leak_label = model.label(key.leak).to_string();
    let outcome = draw_sensors(c.seed, key.leak, key.repetition, &exp.allowed, c.n_sensors)
        .and_then(|init| iterative_localize_with_bank(model, bank, source, &init, c.iterations, oracle))
        .and_then(|res| Ok((evaluate(&res, key.leak, oracle)?, res)));
    match outcome {
        Ok((metrics, res)) => res
            .iterations()
            .iter()
            .zip(metrics)
            .map(|(it, m)| {
                let mut list = vec![it.sensors.mobile()];
                list.extend(it.sensors.stationary().iter().copied());
                RunRecord {
                    leak_node: leak_label.clone(),
                    repetition: key.repetition,
                    iteration: m.iteration,
                    n_sensors: c.n_sensors,
                    sensor_list: list.iter().map(|&n| model.label(n)).collect::<Vec<_>>().join(";"),
                    m_s: model.label(it.selected).to_string(),
                    d_leak_m: m.d_leak,
                    d_sensor_m: m.d_sensor,
                    rank: m.rank,
                    rmse_best: it.ranking.head().map_or(f64::NAN, |h| h.rmse),
                    excluded_flag: 0,
                }
            })
            .collect(),
        Err(_) => vec![RunRecord {
            leak_node: leak_label,
            repetition: key.repetition,
            iteration: 0,
            n_sensors: c.n_sensors,
            sensor_list: String::new(),
            m_s: String::new(),
            d_leak_m: f64::NAN,
            d_sensor_m: f64::NAN,
            rank: 0,
            rmse_best: f64::NAN,
            excluded_flag: 1,
        }],
    }
}

fn collect_runs(
    keys: Vec<RunKey>,
    run: impl Fn(&RunKey) -> Vec<RunRecord> + Sync + Send,
) -> Result<SweepOutput, HarnessError> {
    let total = keys.len();
    let per_run: Vec<Vec<RunRecord>> = keys.par_iter().map(run).collect();
    let excluded = per_run
        .iter()
        .filter(|r| r.iter().any(|x| x.excluded_flag == 1))
        .count();
    if excluded as f64 > MAX_EXCLUDED_FRACTION * total as f64 {
        return Err(HarnessError::TooManyExclusions { excluded, total });
    }
    let records: Vec<RunRecord> = per_run.into_iter().flatten().collect();
    let aggregates = aggregate(&records);
    Ok(SweepOutput {
        records,
        aggregates,
        runs: total,
        excluded,
    })
}

/// Simulated-measurement sweep over every leak node and repetition, on the
/// current rayon pool.
pub fn run_sweep(exp: &Experiment) -> Result<SweepOutput, HarnessError> {
    let c = &exp.config;
    let model = &exp.model;
    let solver = HydraulicSolver::new(model, exp.settings)?;
    let demands = model.demand_matrix();
    let heads = model.reservoir_heads();
    let bank = CandidateBank::build(&solver, &demands, &heads, c.leak_size)?;
    let oracle = DistanceOracle::new(model);

    let measurements: Vec<PressureMatrix> = exp
        .leak_nodes
        .par_iter()
        .map(|&leak| {
            let truth = GroundTruth {
                leak_node: leak,
                leak_size: c.true_leak_size,
                noise: NoiseSpec {
                    seed: measurement_seed(c.seed, leak),
                    ..c.noise()
                },
            };
            noised_measurement_with(&solver, &demands, &heads, &truth).map(|m| m.pressures)
        })
        .collect::<Result<_, _>>()?;
    let by_leak: BTreeMap<NodeId, &PressureMatrix> =
        exp.leak_nodes.iter().copied().zip(&measurements).collect();

    let keys = run_keys(exp);
    collect_runs(keys, |k| run_one(exp, &bank, &oracle, by_leak[&k.leak], k))
}

fn run_keys(exp: &Experiment) -> Vec<RunKey> {
    exp.leak_nodes
        .iter()
        .flat_map(|&leak| (0..exp.config.repetitions).map(move |repetition| RunKey { leak, repetition }))
        .collect()
}

/// Sweep with the measured pressures read from `measured` instead of being
/// simulated. The experiment must name exactly one leak node, the true one.
pub fn run_replay(exp: &Experiment, measured: &PressureMatrix) -> Result<SweepOutput, HarnessError> {
    let model = &exp.model;
    if exp.leak_nodes.len() != 1 {
        return Err(HarnessError::Invalid(format!(
            "replay needs exactly one true leak node, got {}",
            exp.leak_nodes.len()
        )));
    }
    if let Some(&n) = exp.allowed.iter().find(|&&n| !measured.contains(n)) {
        return Err(HarnessError::MissingColumn(model.label(n).to_string()));
    }
    if measured.steps() != model.steps() {
        return Err(HarnessError::Measurement(format!(
            "{} time steps, model has {}",
            measured.steps(),
            model.steps()
        )));
    }
    let solver = HydraulicSolver::new(model, exp.settings)?;
    let bank = CandidateBank::build(&solver, &model.demand_matrix(), &model.reservoir_heads(), exp.config.leak_size)?;
    let oracle = DistanceOracle::new(model);
    collect_runs(run_keys(exp), |k| run_one(exp, &bank, &oracle, measured, k))
}

/// Runs `f` on a dedicated pool with `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool")
        .install(f)
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean and population standard deviation per (n_sensors, iteration) over
/// non-excluded records.
pub fn aggregate(records: &[RunRecord]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(usize, usize), Vec<&RunRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.excluded_flag == 0) {
        groups.entry((r.n_sensors, r.iteration)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((n_sensors, iteration), rs)| {
            let col = |f: fn(&RunRecord) -> f64| mean_std(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (d_leak_mean, d_leak_std) = col(|r| r.d_leak_m);
            let (d_sensor_mean, d_sensor_std) = col(|r| r.d_sensor_m);
            let (rank_mean, rank_std) = col(|r| r.rank as f64);
            AggregateRow {
                n_sensors,
                iteration,
                count: rs.len(),
                d_leak_mean,
                d_leak_std,
                d_sensor_mean,
                d_sensor_std,
                rank_mean,
                rank_std,
            }
        })
        .collect()
}

pub fn write_csv<T: Serialize>(rows: &[T], out: impl io::Write) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| HarnessError::Io {
        path: PathBuf::from("<csv>"),
        source: e,
    })?;
    Ok(())
}

pub fn to_csv_string<T: Serialize>(rows: &[T]) -> String {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv is utf-8")
}

/// Writes `runs.csv`, `aggregates.csv` and `config.json` into `dir`.
pub fn write_outputs(dir: &Path, config: &ExperimentConfig, out: &SweepOutput) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let files = [
        ("runs.csv", to_csv_string(&out.records)),
        ("aggregates.csv", to_csv_string(&out.aggregates)),
        ("config.json", config.to_json() + "\n"),
    ];
    for (name, text) in files {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(io_err(&path))?;
    }
    Ok(())
}

/// Measurement CSV: a `step` column, then one column per node label.
pub fn measurements_to_csv(model: &HydraulicModel, p: &PressureMatrix) -> String {
    let mut s = String::from("step");
    for &n in p.rows() {
        s.push(',');
        s.push_str(model.label(n));
    }
    s.push('\n');
    for t in 0..p.steps() {
        let _ = write!(s, "{t}");
        for k in 0..p.rows().len() {
            let _ = write!(s, ",{}", p.row_at(k)[t]);
        }
        s.push('\n');
    }
    s
}

/// Reads a measurement CSV. The first column (step index or timestamp) is
/// ignored; every other header must be a node label of `model`.
pub fn measurements_from_csv(model: &HydraulicModel, text: &str) -> Result<PressureMatrix, HarnessError> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = r.headers()?.clone();
    let nodes: Vec<NodeId> = headers
        .iter()
        .skip(1)
        .map(|h| model.node_id(h).ok_or_else(|| HarnessError::UnknownNode(h.to_string())))
        .collect::<Result<_, _>>()?;
    if nodes.is_empty() {
        return Err(HarnessError::Measurement("no node columns".into()));
    }
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); nodes.len()];
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        for (k, col) in columns.iter_mut().enumerate() {
            let field = rec.get(k + 1).unwrap_or("");
            let v: f64 = field.parse().map_err(|_| {
                HarnessError::Measurement(format!("row {}: bad value {:?} for {}", i + 2, field, &headers[k + 1]))
            })?;
            col.push(v);
        }
    }
    let mut seen = nodes.clone();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() != nodes.len() {
        return Err(HarnessError::Measurement("duplicate node column".into()));
    }
    Ok(PressureMatrix::from_rows(nodes.into_iter().zip(columns).collect())?)
}
