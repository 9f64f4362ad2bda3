//! `leakloc`: parse, simulate, localize, sweep, replay, gen-model.
//!
//! Exit status 0 on success, 1 on usage errors, 2 on domain errors.

use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use leakloc::generate::{grid, random_looped, GridSpec, LoopedSpec};
use leakloc::harness::{
    self, measurement_seed, measurements_from_csv, measurements_to_csv, to_csv_string, with_workers, Experiment,
    ExperimentConfig, NodeSelection, SweepOutput,
};
use leakloc::leak_sim::{noised_measurement, GroundTruth, NoiseSpec};
use leakloc::localization::{iterative_localize, SensorConfig};
use leakloc::{parse_inp, simulate, write_inp, HydraulicModel, NodeId, SolverSettings};

const WORKERS_ENV: &str = "LEAKLOC_WORKERS";

#[derive(Parser, Debug)]
#[command(name = "leakloc", version, about = "Leak localization in water distribution networks")]
struct Cli {
    /// Master seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (or directory for sweep/replay); stdout when absent.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate an INP file and print a model summary.
    Parse { model: PathBuf },
    /// Simulate pressures at every node, optionally with a leak and noise.
    Simulate(SimulateArgs),
    /// Rank leak candidates from a measurement file.
    Localize(LocalizeArgs),
    /// Run a simulated leak sweep from an experiment config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run an experiment config against recorded measurements.
    Replay {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        measurements: PathBuf,
    },
    /// Write a synthetic network as INP.
    GenModel {
        #[command(subcommand)]
        kind: GenKind,
    },
}

#[derive(Args, Debug)]
struct SimulateArgs {
    model: PathBuf,
    /// Junction label of a leak to add.
    #[arg(long)]
    leak_node: Option<String>,
    /// Leak size, m³/h.
    #[arg(long, default_value_t = 6.38)]
    leak_size: f64,
    /// Noise bound l; 0 disables noise.
    #[arg(long, default_value_t = 0.0)]
    noise_bound: f64,
    #[arg(long, default_value_t = 0.5)]
    noise_sigma_fraction: f64,
}

#[derive(Args, Debug)]
struct LocalizeArgs {
    model: PathBuf,
    #[arg(long)]
    measurements: PathBuf,
    /// Comma-separated sensor labels; the first is the mobile one unless --mobile is given.
    #[arg(long, value_delimiter = ',', required = true)]
    sensors: Vec<String>,
    #[arg(long)]
    mobile: Option<String>,
    /// Allowed sensor locations; all junctions when absent.
    #[arg(long, value_delimiter = ',')]
    allowed: Option<Vec<String>>,
    /// Estimated leak size, m³/h.
    #[arg(long, default_value_t = 6.38)]
    leak_size: f64,
    #[arg(long, default_value_t = 1)]
    iterations: usize,
    #[arg(long, default_value_t = 10)]
    top_k: usize,
}

#[derive(Subcommand, Debug)]
enum GenKind {
    /// Rectangular grid fed by one reservoir at a corner.
    Grid {
        #[arg(long, default_value_t = 10)]
        rows: usize,
        #[arg(long, default_value_t = 10)]
        cols: usize,
        #[arg(long, default_value_t = 100.0)]
        spacing: f64,
        /// Pipe diameter, mm.
        #[arg(long, default_value_t = 65.0)]
        diameter: f64,
        /// Mean base demand, m³/h.
        #[arg(long, default_value_t = 0.3)]
        demand: f64,
        #[arg(long, default_value_t = 24)]
        steps: usize,
        /// Hydraulic time step, s.
        #[arg(long, default_value_t = 3600)]
        step_seconds: u64,
    },
    /// Random spanning tree plus chords.
    Looped {
        #[arg(long, default_value_t = 30)]
        junctions: usize,
        #[arg(long, default_value_t = 10)]
        chords: usize,
        #[arg(long, default_value_t = 24)]
        steps: usize,
    },
}

struct Failure(String);

impl<E: Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Parse { model } => cmd_parse(cli, model),
        Command::Simulate(a) => cmd_simulate(cli, a),
        Command::Localize(a) => cmd_localize(cli, a),
        Command::Sweep { config } => cmd_sweep(cli, config, None),
        Command::Replay { config, measurements } => cmd_sweep(cli, config, Some(measurements)),
        Command::GenModel { kind } => cmd_gen(cli, kind),
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<HydraulicModel, Failure> {
    parse_inp(&read(path)?).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn emit(cli: &Cli, text: &str) -> Outcome {
    match &cli.output {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure(format!("{}: {e}", p.display()))),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn table<T: Serialize>(format: Format, rows: &[T]) -> String {
    match format {
        Format::Csv => to_csv_string(rows),
        Format::Json => serde_json::to_string_pretty(rows).expect("rows serialize") + "\n",
    }
}

fn node(model: &HydraulicModel, label: &str) -> Result<NodeId, Failure> {
    model
        .node_id(label)
        .ok_or_else(|| Failure(format!("unknown node label {label:?}")))
}

#[derive(Serialize)]
struct Summary {
    nodes: usize,
    junctions: usize,
    reservoirs: usize,
    pipes: usize,
    steps: usize,
}

fn cmd_parse(cli: &Cli, path: &Path) -> Outcome {
    let m = load_model(path)?;
    let s = Summary {
        nodes: m.node_count(),
        junctions: m.junction_count(),
        reservoirs: m.reservoirs().len(),
        pipes: m.pipes().len(),
        steps: m.steps(),
    };
    let text = match cli.format {
        None => format!("M={} nodes, {} pipes, T={}\n", s.nodes, s.pipes, s.steps),
        Some(f) => table(f, &[s]),
    };
    emit(cli, &text)
}

fn cmd_simulate(cli: &Cli, a: &SimulateArgs) -> Outcome {
    let m = load_model(&a.model)?;
    let settings = SolverSettings::default();
    let (d, h) = (m.demand_matrix(), m.reservoir_heads());
    let pressures = match &a.leak_node {
        Some(label) => {
            let leak = node(&m, label)?;
            let truth = GroundTruth {
                leak_node: leak,
                leak_size: a.leak_size,
                noise: NoiseSpec {
                    bound: a.noise_bound,
                    sigma_fraction: a.noise_sigma_fraction,
                    seed: measurement_seed(cli.seed.unwrap_or(0), leak),
                },
            };
            noised_measurement(&m, &d, &h, &truth, &settings)?
        }
        None => {
            if a.noise_bound != 0.0 {
                return Err(Failure("--noise-bound requires --leak-node".into()));
            }
            simulate(&m, &d, &h, &settings)?.pressures
        }
    };
    let text = match cli.format.unwrap_or(Format::Csv) {
        Format::Csv => measurements_to_csv(&m, &pressures),
        Format::Json => {
            let rows: Vec<serde_json::Map<String, serde_json::Value>> = (0..pressures.steps())
                .map(|t| {
                    let mut row = serde_json::Map::new();
                    row.insert("step".into(), t.into());
                    for (k, &n) in pressures.rows().iter().enumerate() {
                        row.insert(m.label(n).into(), pressures.row_at(k)[t].into());
                    }
                    row
                })
                .collect();
            serde_json::to_string_pretty(&rows)? + "\n"
        }
    };
    emit(cli, &text)
}

#[derive(Serialize)]
struct RankingRow {
    iteration: usize,
    rank: usize,
    node: String,
    rmse: f64,
    sensors: String,
}

fn cmd_localize(cli: &Cli, a: &LocalizeArgs) -> Outcome {
    let m = load_model(&a.model)?;
    let measured = measurements_from_csv(&m, &read(&a.measurements)?)?;
    let sensors = a
        .sensors
        .iter()
        .map(|l| node(&m, l))
        .collect::<Result<Vec<_>, _>>()?;
    let mobile = match &a.mobile {
        Some(l) => node(&m, l)?,
        None => sensors[0],
    };
    let allowed: Vec<NodeId> = match &a.allowed {
        Some(list) => NodeSelection::Labels(list.clone()).resolve(&m)?,
        None => m.junction_ids().collect(),
    };
    let stationary = sensors.iter().copied().filter(|&s| s != mobile);
    let init = SensorConfig::new(stationary, mobile, allowed)?;
    let (d, h) = (m.demand_matrix(), m.reservoir_heads());
    let res = iterative_localize(&m, &measured, &init, &d, &h, a.leak_size, a.iterations, &SolverSettings::default())?;

    let mut rows = Vec::new();
    for (i, it) in res.iterations().iter().enumerate() {
        let mut list = vec![it.sensors.mobile()];
        list.extend(it.sensors.stationary().iter().copied());
        let sensors = list.iter().map(|&n| m.label(n)).collect::<Vec<_>>().join(";");
        for (k, c) in it.ranking.top(a.top_k).iter().enumerate() {
            rows.push(RankingRow {
                iteration: i,
                rank: k + 1,
                node: m.label(c.node).to_string(),
                rmse: c.rmse,
                sensors: sensors.clone(),
            });
        }
    }
    let text = match cli.format {
        Some(f) => table(f, &rows),
        None => {
            let last = res.iterations().len() - 1;
            let final_node = res.final_node().map(|n| m.label(n)).unwrap_or_default();
            let mut s = format!("m_hat = {final_node}\n");
            for r in rows.iter().filter(|r| r.iteration == last) {
                s.push_str(&format!("{:>4}  {:<12} {:.6}\n", r.rank, r.node, r.rmse));
            }
            s
        }
    };
    emit(cli, &text)
}

fn workers() -> Result<Option<usize>, Failure> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure(format!("{WORKERS_ENV} must be a positive integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn cmd_sweep(cli: &Cli, config: &Path, measurements: Option<&PathBuf>) -> Outcome {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.output {
        cfg.output = Some(out.clone());
    }
    let exp = Experiment::load(cfg.clone())?;
    let measured = match measurements {
        Some(p) => Some(measurements_from_csv(&exp.model, &read(p)?)?),
        None => None,
    };
    let job = || match &measured {
        Some(p) => harness::run_replay(&exp, p),
        None => harness::run_sweep(&exp),
    };
    let out: SweepOutput = match workers()? {
        Some(n) => with_workers(n, job)?,
        None => job()?,
    };
    if let Some(dir) = &cfg.output {
        harness::write_outputs(dir, &cfg, &out)?;
    }
    if out.excluded > 0 {
        eprintln!("warning: {} of {} runs excluded", out.excluded, out.runs);
    }
    let text = table(cli.format.unwrap_or(Format::Csv), &out.aggregates);
    std::io::stdout().write_all(text.as_bytes())?;
    Ok(())
}

fn cmd_gen(cli: &Cli, kind: &GenKind) -> Outcome {
    let seed = cli.seed.unwrap_or(1);
    let model = match *kind {
        GenKind::Grid {
            rows,
            cols,
            spacing,
            diameter,
            demand,
            steps,
            step_seconds,
        } => grid(&GridSpec {
            rows,
            cols,
            spacing,
            diameter,
            base_demand: demand,
            steps,
            step_seconds,
            seed,
            ..GridSpec::default()
        })?,
        GenKind::Looped { junctions, chords, steps } => random_looped(&LoopedSpec {
            junctions,
            chords,
            steps,
            seed,
            ..LoopedSpec::default()
        })?,
    };
    emit(cli, &write_inp(&model))
}
