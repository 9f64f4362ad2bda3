use std::collections::{BTreeMap, HashMap};

use leakloc::generate::{grid, GridSpec};
use leakloc::harness::{
    draw_sensors, measurement_seed, measurements_from_csv, measurements_to_csv, run_replay,
    run_sweep, write_outputs, Experiment, ExperimentConfig, NodeSelection,
};
use leakloc::leak_sim::{noised_measurement, GroundTruth, NoiseSpec};
use leakloc::{HydraulicModel, NodeId, SolverSettings};

fn small_grid() -> HydraulicModel {
    grid(&GridSpec { rows: 4, cols: 4, steps: 6, ..GridSpec::default() }).unwrap()
}

fn config(leaks: &[&str], reps: usize, iterations: usize) -> ExperimentConfig {
    ExperimentConfig {
        n_sensors: 2,
        noise_bound: 0.05,
        seed: 11,
        repetitions: reps,
        iterations,
        leak_nodes: NodeSelection::Labels(leaks.iter().map(|s| s.to_string()).collect()),
        ..ExperimentConfig::default()
    }
}

#[test]
fn sweep_counts_runs_and_rows() {
    let exp = Experiment::new(config(&["n1", "n4", "n7", "n12", "n16"], 2, 2), small_grid()).unwrap();
    let out = run_sweep(&exp).unwrap();
    assert_eq!(out.runs, 10);
    assert_eq!(out.excluded, 0);
    assert_eq!(out.records.len(), 20);
    assert_eq!(out.aggregates.len(), 2);
    assert!(out.aggregates.iter().all(|a| a.count == 10));
    let keys: Vec<_> = out.records.iter().map(|r| (r.leak_node.clone(), r.repetition, r.iteration)).collect();
    let mut sorted = keys.clone();
    sorted.sort_by_key(|(l, r, i)| (exp.model.node_id(l).unwrap(), *r, *i));
    assert_eq!(keys, sorted);
}

#[test]
fn aggregates_match_an_independent_recount() {
    let exp = Experiment::new(config(&["n2", "n6", "n11", "n15"], 3, 3), small_grid()).unwrap();
    let out = run_sweep(&exp).unwrap();
    let mut groups: BTreeMap<(usize, usize), Vec<[f64; 3]>> = BTreeMap::new();
    for r in &out.records {
        groups
            .entry((r.n_sensors, r.iteration))
            .or_default()
            .push([r.d_leak_m, r.d_sensor_m, r.rank as f64]);
    }
    assert_eq!(groups.len(), out.aggregates.len());
    for (row, ((n, it), vals)) in out.aggregates.iter().zip(&groups) {
        assert_eq!((row.n_sensors, row.iteration, row.count), (*n, *it, vals.len()));
        let got = [
            (row.d_leak_mean, row.d_leak_std),
            (row.d_sensor_mean, row.d_sensor_std),
            (row.rank_mean, row.rank_std),
        ];
        for (k, (mean, std)) in got.into_iter().enumerate() {
            let n = vals.len() as f64;
            let m = vals.iter().map(|v| v[k]).sum::<f64>() / n;
            let s = (vals.iter().map(|v| (v[k] - m).powi(2)).sum::<f64>() / n).sqrt();
            assert!((mean - m).abs() < 1e-9 && (std - s).abs() < 1e-9);
        }
    }
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let model = small_grid();
    let cfg = config(&["n3", "n9"], 2, 2);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        let exp = Experiment::new(cfg.clone(), model.clone()).unwrap();
        write_outputs(dir, &cfg, &run_sweep(&exp).unwrap()).unwrap();
    }
    for name in ["runs.csv", "aggregates.csv", "config.json"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, std::fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let runs = std::fs::read_to_string(a.path().join("runs.csv")).unwrap();
    assert!(runs.starts_with(
        "leak_node,repetition,iteration,n_sensors,sensor_list,m_s,d_leak_m,d_sensor_m,rank,rmse_best,excluded_flag"
    ));
}

#[test]
fn sensor_draws_are_uniform() {
    let allowed: Vec<NodeId> = (0..10).map(NodeId::new).collect();
    let draws = 20_000;
    let mut mobile: HashMap<NodeId, usize> = HashMap::new();
    let mut any: HashMap<NodeId, usize> = HashMap::new();
    for rep in 0..draws {
        let c = draw_sensors(5, NodeId::new(3), rep, &allowed, 3).unwrap();
        assert_eq!(c.sensors().len(), 3);
        *mobile.entry(c.mobile()).or_default() += 1;
        for s in c.sensors() {
            *any.entry(s).or_default() += 1;
        }
    }
    // Each node is mobile with p = 1/10 and carries some sensor with p = 3/10.
    for (counts, p) in [(&mobile, 0.1), (&any, 0.3)] {
        let mean = draws as f64 * p;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for n in &allowed {
            let c = counts.get(n).copied().unwrap_or(0) as f64;
            assert!((c - mean).abs() < 5.0 * sd, "{n}: {c} vs {mean}");
        }
    }
}

#[test]
fn replay_matches_sweep_for_one_leak() {
    let model = small_grid();
    let cfg = config(&["n10"], 3, 2);
    let exp = Experiment::new(cfg.clone(), model.clone()).unwrap();
    let leak = model.node_id("n10").unwrap();
    let truth = GroundTruth {
        leak_node: leak,
        leak_size: cfg.true_leak_size,
        noise: NoiseSpec::new(cfg.noise_bound, measurement_seed(cfg.seed, leak)),
    };
    let p = noised_measurement(&model, &model.demand_matrix(), &model.reservoir_heads(), &truth, &SolverSettings::default())
        .unwrap();
    let back = measurements_from_csv(&model, &measurements_to_csv(&model, &p)).unwrap();
    assert_eq!(run_replay(&exp, &back).unwrap(), run_sweep(&exp).unwrap());
}
