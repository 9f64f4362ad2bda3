//! Python bindings: `import leakloc`.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::OnceLock;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use leakloc::generate::{self, GridSpec, LoopedSpec};
use leakloc::harness::{self, Experiment, ExperimentConfig, NodeSelection};
use leakloc::{
    iterative_localize, noised_measurement, parse_inp, rank_candidates, simulate, write_inp,
    DistanceOracle, GroundTruth, HydraulicModel, NodeId, NoiseSpec, PressureMatrix, SensorConfig,
    SolverSettings,
};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

type Rows = HashMap<String, Vec<f64>>;

/// Result rows go through JSON so Python gets plain dicts and lists.
fn to_py<T: serde::Serialize + ?Sized>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

#[pyclass(name = "Model", module = "leakloc", frozen)]
struct PyModel {
    inner: HydraulicModel,
    oracle: OnceLock<DistanceOracle>,
}

impl PyModel {
    fn wrap(inner: HydraulicModel) -> Self {
        PyModel {
            inner,
            oracle: OnceLock::new(),
        }
    }

    fn node(&self, label: &str) -> PyResult<NodeId> {
        self.inner
            .node_id(label)
            .ok_or_else(|| err(format!("unknown node label {label:?}")))
    }

    fn nodes(&self, labels: &[String]) -> PyResult<Vec<NodeId>> {
        labels.iter().map(|l| self.node(l)).collect()
    }

    fn rows(&self, p: &PressureMatrix) -> Rows {
        p.rows()
            .iter()
            .enumerate()
            .map(|(k, &n)| (self.inner.label(n).to_string(), p.row_at(k).to_vec()))
            .collect()
    }

    fn matrix(&self, rows: Rows) -> PyResult<PressureMatrix> {
        let rows = rows
            .into_iter()
            .map(|(l, v)| Ok((self.node(&l)?, v)))
            .collect::<PyResult<Vec<_>>>()?;
        PressureMatrix::from_rows(rows).map_err(err)
    }

    fn oracle(&self) -> &DistanceOracle {
        self.oracle.get_or_init(|| DistanceOracle::new(&self.inner))
    }
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn from_inp(text: &str) -> PyResult<Self> {
        parse_inp(text).map(PyModel::wrap).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| err(format!("{}: {e}", path.display())))?;
        Self::from_inp(&text)
    }

    fn to_inp(&self) -> String {
        write_inp(&self.inner)
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    #[getter]
    fn pipe_count(&self) -> usize {
        self.inner.pipes().len()
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.steps()
    }

    fn labels(&self) -> Vec<String> {
        self.inner.node_ids().map(|n| self.inner.label(n).to_string()).collect()
    }

    fn junctions(&self) -> Vec<String> {
        self.inner.junction_ids().map(|n| self.inner.label(n).to_string()).collect()
    }

    /// Pressure head per node label, one value per step.
    #[pyo3(signature = (leak_node=None, leak_size=6.38, noise_bound=0.0, sigma_fraction=0.5, seed=0))]
    fn simulate(
        &self,
        py: Python<'_>,
        leak_node: Option<&str>,
        leak_size: f64,
        noise_bound: f64,
        sigma_fraction: f64,
        seed: u64,
    ) -> PyResult<Rows> {
        let settings = SolverSettings::default();
        let m = &self.inner;
        let (d, h) = (m.demand_matrix(), m.reservoir_heads());
        let p = match leak_node {
            Some(label) => {
                let leak = self.node(label)?;
                let truth = GroundTruth {
                    leak_node: leak,
                    leak_size,
                    noise: NoiseSpec {
                        bound: noise_bound,
                        sigma_fraction,
                        seed: harness::measurement_seed(seed, leak),
                    },
                };
                py.detach(|| noised_measurement(m, &d, &h, &truth, &settings)).map_err(err)?
            }
            None => py.detach(|| simulate(m, &d, &h, &settings)).map_err(err)?.pressures,
        };
        Ok(self.rows(&p))
    }

    /// Shortest path length along open pipes, m.
    fn distance(&self, a: &str, b: &str) -> PyResult<f64> {
        self.oracle().distance(self.node(a)?, self.node(b)?).map_err(err)
    }

    /// Every junction as a leak candidate, best first: `[(label, rmse), ...]`.
    #[pyo3(signature = (measured, sensors, leak_size=6.38))]
    fn rank(&self, py: Python<'_>, measured: Rows, sensors: Vec<String>, leak_size: f64) -> PyResult<Vec<(String, f64)>> {
        let m = &self.inner;
        let p = self.matrix(measured)?;
        let sensors = self.nodes(&sensors)?;
        let (d, h) = (m.demand_matrix(), m.reservoir_heads());
        let r = py
            .detach(|| rank_candidates(m, &p, &sensors, &d, &h, leak_size, &SolverSettings::default()))
            .map_err(err)?;
        Ok(r.entries().iter().map(|c| (m.label(c.node).to_string(), c.rmse)).collect())
    }

    /// Iterative localization; `sensors[0]` is the mobile sensor. Returns one
    /// dict per iteration with the sensors used, the selected node and the
    /// top of the ranking.
    #[pyo3(signature = (measured, sensors, allowed=None, leak_size=6.38, iterations=2, top_k=10))]
    #[allow(clippy::too_many_arguments)]
    fn localize(
        &self,
        py: Python<'_>,
        measured: Rows,
        sensors: Vec<String>,
        allowed: Option<Vec<String>>,
        leak_size: f64,
        iterations: usize,
        top_k: usize,
    ) -> PyResult<Py<PyAny>> {
        let m = &self.inner;
        let p = self.matrix(measured)?;
        let sensors = self.nodes(&sensors)?;
        let Some((&mobile, stationary)) = sensors.split_first() else {
            return Err(err("at least one sensor is required"));
        };
        let allowed = match allowed {
            Some(l) => NodeSelection::Labels(l).resolve(m).map_err(err)?,
            None => m.junction_ids().collect(),
        };
        let init = SensorConfig::new(stationary.iter().copied(), mobile, allowed).map_err(err)?;
        let (d, h) = (m.demand_matrix(), m.reservoir_heads());
        let res = py
            .detach(|| iterative_localize(m, &p, &init, &d, &h, leak_size, iterations, &SolverSettings::default()))
            .map_err(err)?;
        let label = |n: NodeId| m.label(n).to_string();
        let out: Vec<serde_json::Value> = res
            .iterations()
            .iter()
            .map(|it| {
                serde_json::json!({
                    "mobile": label(it.sensors.mobile()),
                    "stationary": it.sensors.stationary().iter().map(|&n| label(n)).collect::<Vec<_>>(),
                    "selected": label(it.selected),
                    "top": it.ranking.top(top_k).iter().map(|c| (label(c.node), c.rmse)).collect::<Vec<_>>(),
                })
            })
            .collect();
        to_py(py, &out)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(nodes={}, pipes={}, steps={})",
            self.inner.node_count(),
            self.inner.pipes().len(),
            self.inner.steps()
        )
    }
}

#[pyfunction]
#[pyo3(signature = (rows=10, cols=10, diameter=65.0, demand=0.3, steps=24, step_seconds=3600, seed=1))]
fn grid(rows: usize, cols: usize, diameter: f64, demand: f64, steps: usize, step_seconds: u64, seed: u64) -> PyResult<PyModel> {
    let spec = GridSpec {
        rows,
        cols,
        diameter,
        base_demand: demand,
        steps,
        step_seconds,
        seed,
        ..GridSpec::default()
    };
    generate::grid(&spec).map(PyModel::wrap).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (junctions=30, chords=10, steps=24, seed=1))]
fn random_looped(junctions: usize, chords: usize, steps: usize, seed: u64) -> PyResult<PyModel> {
    let spec = LoopedSpec {
        junctions,
        chords,
        steps,
        seed,
        ..LoopedSpec::default()
    };
    generate::random_looped(&spec).map(PyModel::wrap).map_err(err)
}

/// Runs the experiment described by a config file. Returns
/// `(runs, aggregates)` as lists of dicts; writes files too when the config
/// names an output directory.
#[pyfunction]
#[pyo3(signature = (config, seed=None))]
fn sweep(py: Python<'_>, config: PathBuf, seed: Option<u64>) -> PyResult<(Py<PyAny>, Py<PyAny>)> {
    let mut cfg = ExperimentConfig::load(&config).map_err(err)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let exp = Experiment::load(cfg.clone()).map_err(err)?;
    let out = py.detach(|| harness::run_sweep(&exp)).map_err(err)?;
    if let Some(dir) = &cfg.output {
        harness::write_outputs(dir, &cfg, &out).map_err(err)?;
    }
    Ok((to_py(py, &out.records)?, to_py(py, &out.aggregates)?))
}

#[pymodule]
#[pyo3(name = "leakloc")]
fn leakloc_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(grid, m)?)?;
    m.add_function(wrap_pyfunction!(random_looped, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    Ok(())
}
