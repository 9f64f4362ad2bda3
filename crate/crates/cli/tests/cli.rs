use std::path::Path;
use std::process::{Command, Output};

fn leakloc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_leakloc"))
        .args(args)
        .env_remove("LEAKLOC_WORKERS")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn small_grid(dir: &Path) -> String {
    let path = dir.join("grid.inp");
    let o = leakloc(&[
        "gen-model", "--output", path.to_str().unwrap(), "grid", "--rows", "3", "--cols", "3", "--steps", "4",
    ]);
    assert!(o.status.success(), "{o:?}");
    path.to_str().unwrap().to_string()
}

#[test]
fn parse_prints_summary() {
    let dir = tempfile::tempdir().unwrap();
    let model = small_grid(dir.path());
    let o = leakloc(&["parse", &model]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "M=10 nodes, 13 pipes, T=4\n");

    let json: serde_json::Value = serde_json::from_slice(&leakloc(&["parse", &model, "--format", "json"]).stdout).unwrap();
    assert_eq!(json[0]["nodes"], 10);
    assert_eq!(json[0]["pipes"], 13);
    let csv = stdout(&leakloc(&["parse", &model, "--format", "csv"]));
    assert_eq!(csv, "nodes,junctions,reservoirs,pipes,steps\n10,9,1,13,4\n");
}

#[test]
fn shipped_model_parses() {
    let model = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/grid10x10.inp");
    let o = leakloc(&["parse", model]);
    assert_eq!(stdout(&o), "M=101 nodes, 181 pipes, T=24\n");
}

#[test]
fn exit_codes() {
    assert_eq!(leakloc(&[]).status.code(), Some(1));
    assert_eq!(leakloc(&["parse", "x.inp", "--bogus"]).status.code(), Some(1));
    assert_eq!(leakloc(&["--help"]).status.code(), Some(0));

    let o = leakloc(&["parse", "/nonexistent/model.inp"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error: "));

    let dir = tempfile::tempdir().unwrap();
    let model = small_grid(dir.path());
    let o = leakloc(&["simulate", &model, "--leak-node", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_is_seeded_and_formats_agree() {
    let dir = tempfile::tempdir().unwrap();
    let model = small_grid(dir.path());
    let run = |seed: &str, fmt: &str| {
        stdout(&leakloc(&[
            "simulate", &model, "--leak-node", "n5", "--noise-bound", "0.1", "--seed", seed, "--format", fmt,
        ]))
    };
    let a = run("7", "csv");
    assert_eq!(a, run("7", "csv"));
    assert_ne!(a, run("8", "csv"));

    let lines: Vec<&str> = a.lines().collect();
    assert_eq!(lines.len(), 5);
    let header: Vec<&str> = lines[0].split(',').collect();
    assert_eq!(header[0], "step");
    let json: serde_json::Value = serde_json::from_str(&run("7", "json")).unwrap();
    for (t, line) in lines[1..].iter().enumerate() {
        for (col, cell) in header.iter().zip(line.split(',')).skip(1) {
            let v: f64 = cell.parse().unwrap();
            assert!((json[t][col].as_f64().unwrap() - v).abs() <= 1e-12 * v.abs().max(1.0));
        }
    }
}

#[test]
fn localize_finds_a_noiseless_leak() {
    let dir = tempfile::tempdir().unwrap();
    let model = small_grid(dir.path());
    let meas = dir.path().join("meas.csv");
    let o = leakloc(&["simulate", &model, "--leak-node", "n9", "--output", meas.to_str().unwrap()]);
    assert!(o.status.success());

    let o = leakloc(&["localize", &model, "--measurements", meas.to_str().unwrap(), "--sensors", "n9,n1"]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("m_hat = n9"));
    let top: Vec<&str> = lines.collect();
    assert_eq!(top.len(), 9);
    assert!(top[0].split_whitespace().eq(["1", "n9", "0.000000"]));

    let csv = stdout(&leakloc(&[
        "localize", &model, "--measurements", meas.to_str().unwrap(), "--sensors", "n1,n9", "--iterations", "2",
        "--top-k", "3", "--format", "csv",
    ]));
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "iteration,rank,node,rmse,sensors");
    assert_eq!(rows.len(), 1 + 2 * 3);
}

#[test]
fn sweep_and_replay_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    small_grid(dir.path());
    let cfg = dir.path().join("exp.conf");
    std::fs::write(
        &cfg,
        "# small sweep\nmodel = grid.inp\nn_sensors = 2\nleak_nodes = n2, n8\nrepetitions = 2\niterations = 2\nnoise_bound = 0.05\noutput = out\n",
    )
    .unwrap();
    let o = leakloc(&["sweep", "--config", cfg.to_str().unwrap(), "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert!(stdout(&o).starts_with("n_sensors,iteration,count,"));
    let runs = std::fs::read_to_string(dir.path().join("out/runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 2 * 2 * 2);
    let config: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/config.json")).unwrap()).unwrap();
    assert_eq!(config["seed"], 3);

    let workers = Command::new(env!("CARGO_BIN_EXE_leakloc"))
        .args(["sweep", "--config", cfg.to_str().unwrap(), "--seed", "3", "--output"])
        .arg(dir.path().join("out2"))
        .env("LEAKLOC_WORKERS", "2")
        .output()
        .unwrap();
    assert!(workers.status.success());
    assert_eq!(std::fs::read_to_string(dir.path().join("out2/runs.csv")).unwrap(), runs);

    let replay_cfg = dir.path().join("replay.conf");
    std::fs::write(&replay_cfg, "model = grid.inp\nn_sensors = 2\nleak_nodes = n5\nrepetitions = 3\noutput = rep\n").unwrap();
    let meas = dir.path().join("meas.csv");
    leakloc(&["simulate", dir.path().join("grid.inp").to_str().unwrap(), "--leak-node", "n5", "--output", meas.to_str().unwrap()]);
    let o = leakloc(&["replay", "--config", replay_cfg.to_str().unwrap(), "--measurements", meas.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let rep = std::fs::read_to_string(dir.path().join("rep/runs.csv")).unwrap();
    assert_eq!(rep.lines().count(), 1 + 3 * 2);
}

#[test]
fn gen_model_is_deterministic() {
    let a = stdout(&leakloc(&["gen-model", "looped", "--junctions", "12", "--chords", "4", "--seed", "5"]));
    let b = stdout(&leakloc(&["gen-model", "looped", "--junctions", "12", "--chords", "4", "--seed", "5"]));
    assert_eq!(a, b);
    assert!(a.contains("[JUNCTIONS]") && a.contains("[PIPES]"));
}
