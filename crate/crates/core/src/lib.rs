//! Leak localization in water distribution networks.
//!
//! A demand-driven hydraulic solver simulates the network with a candidate
//! leak at every junction; candidates are ranked by the RMSE between their
//! simulated pressures and the measured ones at a handful of sensors. One
//! sensor is mobile and is moved toward the best candidate between rounds.

pub mod generate;
pub mod harness;
pub mod inp;
pub mod leak_sim;
pub mod localization;
pub mod metrics;
pub mod model;
pub mod seed;
pub mod solver;

pub use harness::{
    run_replay, run_sweep, AggregateRow, Experiment, ExperimentConfig, HarnessError, NodeSelection,
    RunRecord, SweepOutput,
};
pub use inp::{parse_inp, write_inp, InpDocument, InpError};
pub use model::{
    DemandMatrix, HeadSeries, HydraulicModel, MatrixError, ModelBuilder, ModelError, NodeId,
    NodeKind, PipeStatus, PressureMatrix, TimeConfig,
};
pub use solver::{simulate, solve_step, HydraulicSolver, SolveResult, SolverError, SolverSettings};
pub use leak_sim::{noised_measurement, GroundTruth, LeakSimError, NoiseSpec};
pub use localization::{
    iterative_localize, localize_once, rank_candidates, rmse, CandidateBank, CandidateRanking,
    LocalizationError, LocalizationResult, SensorConfig, ShiftKind,
};
pub use metrics::{evaluate, graph_distance, DistanceOracle, IterationMetrics, MetricsError};
