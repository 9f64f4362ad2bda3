//! Candidate ranking by pressure RMSE and the iterative mobile-sensor loop.
//!
//! For every junction m the network is simulated with the estimated leak
//! added at m; the simulated pressures at the sensors are compared with the
//! measured ones and candidates are sorted by ascending RMSE. The best
//! candidate m_s then attracts the mobile sensor, and the ranking is redone
//! with a fresh measurement on the new sensor set.
//!
//! Candidate simulations do not depend on where the sensors are, so they are
//! computed once into a [`CandidateBank`] and reused by every iteration.

use std::collections::BTreeSet;

use rayon::prelude::*;
use thiserror::Error;

use crate::metrics::{DistanceOracle, MetricsError};
use crate::model::{DemandMatrix, HeadSeries, HydraulicModel, MatrixError, NodeId, PressureMatrix};
use crate::solver::{HydraulicSolver, SolverError, SolverSettings};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LocalizationError {
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("sensor set is empty")]
    NoSensors,
    #[error("estimated leak size must be positive, got {0}")]
    InvalidLeakSize(f64),
    #[error("every candidate simulation failed")]
    AllCandidatesFailed,
    #[error("no measurement available for sensor node {0:?}")]
    MissingMeasurement(String),
    #[error("invalid sensor configuration: {0}")]
    InvalidSensors(String),
    #[error("at least one iteration is required")]
    NoIterations,
}

/// Root mean square of the elementwise difference over all N·T entries.
pub fn rmse(measured: &PressureMatrix, simulated: &PressureMatrix) -> Result<f64, MatrixError> {
    measured.check_same_shape(simulated)?;
    let n = measured.values().len();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = measured
        .values()
        .iter()
        .zip(simulated.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((sum / n as f64).sqrt())
}

/// Stationary sensors, one mobile sensor and the nodes sensors may occupy.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorConfig {
    stationary: BTreeSet<NodeId>,
    mobile: NodeId,
    allowed: BTreeSet<NodeId>,
    history: Vec<NodeId>,
}

impl SensorConfig {
    pub fn new(
        stationary: impl IntoIterator<Item = NodeId>,
        mobile: NodeId,
        allowed: impl IntoIterator<Item = NodeId>,
    ) -> Result<Self, LocalizationError> {
        let stationary: BTreeSet<NodeId> = stationary.into_iter().collect();
        let allowed: BTreeSet<NodeId> = allowed.into_iter().collect();
        if !allowed.contains(&mobile) {
            return Err(LocalizationError::InvalidSensors(format!(
                "mobile sensor {mobile} is not an allowed location"
            )));
        }
        if let Some(s) = stationary.iter().find(|s| !allowed.contains(s)) {
            return Err(LocalizationError::InvalidSensors(format!(
                "stationary sensor {s} is not an allowed location"
            )));
        }
        if stationary.contains(&mobile) {
            return Err(LocalizationError::InvalidSensors(format!(
                "mobile sensor {mobile} coincides with a stationary sensor"
            )));
        }
        Ok(SensorConfig {
            stationary,
            mobile,
            allowed,
            history: Vec::new(),
        })
    }

    pub fn stationary(&self) -> &BTreeSet<NodeId> {
        &self.stationary
    }

    pub fn mobile(&self) -> NodeId {
        self.mobile
    }

    pub fn allowed(&self) -> &BTreeSet<NodeId> {
        &self.allowed
    }

    /// Earlier positions of the mobile sensor, oldest first.
    pub fn history(&self) -> &[NodeId] {
        &self.history
    }

    /// All sensor nodes in dense order.
    pub fn sensors(&self) -> Vec<NodeId> {
        let mut s: Vec<NodeId> = self.stationary.iter().copied().collect();
        s.push(self.mobile);
        s.sort_unstable();
        s
    }

    pub fn is_occupied(&self, node: NodeId) -> bool {
        node == self.mobile || self.stationary.contains(&node)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedCandidate {
    pub node: NodeId,
    pub rmse: f64,
    /// The candidate's simulation failed; its rmse is +∞.
    pub failed: bool,
}

/// Candidates in ascending (rmse, node index) order.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRanking {
    entries: Vec<RankedCandidate>,
}

impl CandidateRanking {
    pub fn from_candidates(mut entries: Vec<RankedCandidate>) -> Self {
        entries.sort_by(|a, b| a.rmse.total_cmp(&b.rmse).then(a.node.cmp(&b.node)));
        CandidateRanking { entries }
    }

    pub fn entries(&self) -> &[RankedCandidate] {
        &self.entries
    }

    pub fn head(&self) -> Option<&RankedCandidate> {
        self.entries.first()
    }

    /// 1-based rank of `node`.
    pub fn rank_of(&self, node: NodeId) -> Option<usize> {
        self.entries.iter().position(|c| c.node == node).map(|i| i + 1)
    }

    pub fn top(&self, k: usize) -> &[RankedCandidate] {
        &self.entries[..k.min(self.entries.len())]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Simulated pressures over all nodes with the estimated leak at each junction.
#[derive(Debug, Clone)]
pub struct CandidateBank {
    leak_size: f64,
    candidates: Vec<(NodeId, Result<PressureMatrix, SolverError>)>,
}

impl CandidateBank {
    /// Runs one simulation per junction, in parallel on the current rayon pool.
    pub fn build(
        solver: &HydraulicSolver<'_>,
        demands: &DemandMatrix,
        heads: &HeadSeries,
        leak_size: f64,
    ) -> Result<Self, LocalizationError> {
        if !(leak_size.is_finite() && leak_size > 0.0) {
            return Err(LocalizationError::InvalidLeakSize(leak_size));
        }
        let junctions: Vec<NodeId> = solver.model().junction_ids().collect();
        let candidates = junctions
            .into_par_iter()
            .map(|m| {
                let sim = demands
                    .add_leak(m, leak_size)
                    .map_err(SolverError::from)
                    .and_then(|d| solver.pressures(&d, heads));
                (m, sim)
            })
            .collect();
        Ok(CandidateBank {
            leak_size,
            candidates,
        })
    }

    pub fn leak_size(&self) -> f64 {
        self.leak_size
    }

    /// Full-network pressures for candidate `node`, if its simulation succeeded.
    pub fn pressures(&self, node: NodeId) -> Option<&PressureMatrix> {
        self.candidates
            .iter()
            .find(|(m, _)| *m == node)
            .and_then(|(_, r)| r.as_ref().ok())
    }

    pub fn failed(&self) -> impl Iterator<Item = (NodeId, &SolverError)> {
        self.candidates
            .iter()
            .filter_map(|(m, r)| r.as_ref().err().map(|e| (*m, e)))
    }

    /// Ranks every candidate against `measured`, whose rows are the sensors.
    pub fn rank(&self, measured: &PressureMatrix) -> Result<CandidateRanking, LocalizationError> {
        if measured.rows().is_empty() {
            return Err(LocalizationError::NoSensors);
        }
        let mut entries = Vec::with_capacity(self.candidates.len());
        let mut any_ok = false;
        for (m, sim) in &self.candidates {
            let entry = match sim {
                Ok(full) => {
                    any_ok = true;
                    let simulated = full.restrict(measured.rows())?;
                    RankedCandidate {
                        node: *m,
                        rmse: rmse(measured, &simulated)?,
                        failed: false,
                    }
                }
                Err(_) => RankedCandidate {
                    node: *m,
                    rmse: f64::INFINITY,
                    failed: true,
                },
            };
            entries.push(entry);
        }
        if !any_ok {
            return Err(LocalizationError::AllCandidatesFailed);
        }
        Ok(CandidateRanking::from_candidates(entries))
    }
}

/// Ranks every junction as the leak location for measurements `measured` (rows = sensors).
#[allow(clippy::too_many_arguments)]
pub fn rank_candidates(
    model: &HydraulicModel,
    measured: &PressureMatrix,
    sensors: &[NodeId],
    demands: &DemandMatrix,
    heads: &HeadSeries,
    leak_size: f64,
    settings: &SolverSettings,
) -> Result<CandidateRanking, LocalizationError> {
    if sensors.is_empty() {
        return Err(LocalizationError::NoSensors);
    }
    let measured = measured.restrict(sensors)?;
    let solver = HydraulicSolver::new(model, *settings)?;
    CandidateBank::build(&solver, demands, heads, leak_size)?.rank(&measured)
}

/// The best candidate and the full ranking.
#[allow(clippy::too_many_arguments)]
pub fn localize_once(
    model: &HydraulicModel,
    measured: &PressureMatrix,
    sensors: &[NodeId],
    demands: &DemandMatrix,
    heads: &HeadSeries,
    leak_size: f64,
    settings: &SolverSettings,
) -> Result<(NodeId, CandidateRanking), LocalizationError> {
    let ranking = rank_candidates(model, measured, sensors, demands, heads, leak_size, settings)?;
    Ok((head_node(&ranking)?, ranking))
}

fn head_node(ranking: &CandidateRanking) -> Result<NodeId, LocalizationError> {
    ranking
        .head()
        .map(|c| c.node)
        .ok_or(LocalizationError::AllCandidatesFailed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftKind {
    /// The selected node was free and the mobile sensor moved onto it.
    ToSelected,
    /// The selected node was occupied (or not allowed); moved to the closest free allowed node.
    ToNearest,
    /// No free allowed node; the sensor stayed.
    NoShift,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftOutcome {
    pub config: SensorConfig,
    pub kind: ShiftKind,
}

/// Moves the mobile sensor toward `selected`. Stationary sensors never move.
pub fn shift_mobile(
    sensors: &SensorConfig,
    selected: NodeId,
    distances: &DistanceOracle,
) -> Result<ShiftOutcome, LocalizationError> {
    let target = if sensors.allowed.contains(&selected) && !sensors.is_occupied(selected) {
        Some((selected, ShiftKind::ToSelected))
    } else {
        let from = distances.from_source(selected)?;
        sensors
            .allowed
            .iter()
            .filter(|n| !sensors.is_occupied(**n))
            .min_by(|a, b| from[a.index()].total_cmp(&from[b.index()]).then(a.cmp(b)))
            .map(|&n| (n, ShiftKind::ToNearest))
    };
    let mut config = sensors.clone();
    config.history.push(sensors.mobile);
    let kind = match target {
        Some((node, kind)) => {
            config.mobile = node;
            kind
        }
        None => ShiftKind::NoShift,
    };
    Ok(ShiftOutcome { config, kind })
}

/// Supplies measured pressures for any sensor set.
pub trait MeasurementSource: Sync {
    fn has_node(&self, node: NodeId) -> bool;

    /// Pressures at `sensors`, rows in dense order.
    fn acquire(&self, sensors: &[NodeId]) -> Result<PressureMatrix, MatrixError>;
}

/// A recorded or simulated matrix covering (at least) every node a sensor may visit.
impl MeasurementSource for PressureMatrix {
    fn has_node(&self, node: NodeId) -> bool {
        self.contains(node)
    }

    fn acquire(&self, sensors: &[NodeId]) -> Result<PressureMatrix, MatrixError> {
        self.restrict(sensors)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub sensors: SensorConfig,
    /// How the sensors got here; `None` for the initial placement.
    pub shift: Option<ShiftKind>,
    pub ranking: CandidateRanking,
    /// m_s, the head of `ranking`.
    pub selected: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationResult {
    iterations: Vec<IterationRecord>,
}

impl LocalizationResult {
    pub fn new(iterations: Vec<IterationRecord>) -> Self {
        LocalizationResult { iterations }
    }

    pub fn iterations(&self) -> &[IterationRecord] {
        &self.iterations
    }

    /// m̂, the last iteration's selection.
    pub fn final_node(&self) -> Option<NodeId> {
        self.iterations.last().map(|r| r.selected)
    }
}

/// The iterative loop over a precomputed bank.
pub fn iterative_localize_with_bank(
    model: &HydraulicModel,
    bank: &CandidateBank,
    source: &dyn MeasurementSource,
    initial: &SensorConfig,
    iterations: usize,
    distances: &DistanceOracle,
) -> Result<LocalizationResult, LocalizationError> {
    if iterations == 0 {
        return Err(LocalizationError::NoIterations);
    }
    check_source_covers(model, source, initial)?;
    let mut records = Vec::with_capacity(iterations);
    let mut config = initial.clone();
    let mut shift = None;
    for i in 0..iterations {
        if i > 0 {
            let prev: &IterationRecord = &records[i - 1];
            let outcome = shift_mobile(&config, prev.selected, distances)?;
            config = outcome.config;
            shift = Some(outcome.kind);
        }
        let measured = source.acquire(&config.sensors())?;
        let ranking = bank.rank(&measured)?;
        let selected = head_node(&ranking)?;
        records.push(IterationRecord {
            sensors: config.clone(),
            shift,
            ranking,
            selected,
        });
    }
    Ok(LocalizationResult::new(records))
}

fn check_source_covers(
    model: &HydraulicModel,
    source: &dyn MeasurementSource,
    sensors: &SensorConfig,
) -> Result<(), LocalizationError> {
    let needed = sensors
        .allowed()
        .iter()
        .chain(sensors.stationary())
        .chain(std::iter::once(&sensors.mobile));
    for &n in needed {
        if !model.contains(n) {
            return Err(LocalizationError::InvalidSensors(format!("node {n} is not in the model")));
        }
        if !source.has_node(n) {
            return Err(LocalizationError::MissingMeasurement(model.label(n).to_string()));
        }
    }
    Ok(())
}

/// Initial localization followed by `iterations - 1` mobile-sensor shifts.
#[allow(clippy::too_many_arguments)]
pub fn iterative_localize(
    model: &HydraulicModel,
    source: &dyn MeasurementSource,
    initial: &SensorConfig,
    demands: &DemandMatrix,
    heads: &HeadSeries,
    leak_size: f64,
    iterations: usize,
    settings: &SolverSettings,
) -> Result<LocalizationResult, LocalizationError> {
    if iterations == 0 {
        return Err(LocalizationError::NoIterations);
    }
    // Fail on missing measurements before any simulation runs.
    check_source_covers(model, source, initial)?;
    let solver = HydraulicSolver::new(model, *settings)?;
    let bank = CandidateBank::build(&solver, demands, heads, leak_size)?;
    let distances = DistanceOracle::new(model);
    iterative_localize_with_bank(model, &bank, source, initial, iterations, &distances)
}
