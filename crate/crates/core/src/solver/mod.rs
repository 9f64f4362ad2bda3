//! Demand-driven steady-state hydraulics by the Todini-Pilati global gradient
//! algorithm with Hazen-Williams headloss.
//!
//! Each Newton iteration linearizes every open pipe around its current flow,
//! solves the symmetric positive-definite junction-head system, and updates
//! the flows from the new heads. Steps of a simulation are independent.

mod envelope;

use thiserror::Error;

use crate::model::{
    unreachable_from_reservoirs, DemandMatrix, HeadSeries, HydraulicModel, MatrixError, NodeId,
    PressureMatrix,
};
use envelope::{EnvelopeLayout, EnvelopeMatrix};

/// Hazen-Williams flow exponent.
pub const HW_EXPONENT: f64 = 1.852;
/// SI Hazen-Williams coefficient (d in m, q in m³/s).
pub const HW_COEFFICIENT: f64 = 10.667;

/// Headloss resistance r such that h = r·q^1.852, for length (m), diameter (mm) and C.
pub fn hw_resistance(length: f64, diameter_mm: f64, roughness: f64) -> f64 {
    HW_COEFFICIENT * roughness.powf(-HW_EXPONENT) * (diameter_mm / 1000.0).powf(-4.871) * length
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings {
    pub max_iterations: usize,
    /// Convergence bound on Σ|Δq| / Σ|q|.
    pub flow_tolerance: f64,
    /// Velocity (m/s) used to set every pipe's starting flow.
    pub initial_velocity: f64,
    /// Below this flow (m³/s) headloss is continued linearly.
    pub flow_regularization: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            max_iterations: 100,
            flow_tolerance: 1e-4,
            initial_velocity: 0.3,
            flow_regularization: 1e-6,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<(), SolverError> {
        if self.max_iterations == 0
            || !(self.flow_tolerance > 0.0)
            || !(self.flow_regularization > 0.0)
            || !self.initial_velocity.is_finite()
        {
            return Err(SolverError::InvalidSettings(*self));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SolverError {
    #[error("no convergence after {iterations} iterations (relative flow change {relative_change:.3e})")]
    NonConvergence {
        iterations: usize,
        relative_change: f64,
    },
    #[error("junction {0:?} has no open path to a reservoir")]
    Disconnected(String),
    #[error("negative demand {value} at node {node:?}")]
    NegativeDemand { node: String, value: f64 },
    #[error("expected {expected} {what}, got {actual}")]
    WrongLength {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid solver settings {0:?}")]
    InvalidSettings(SolverSettings),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<SolverError>,
    },
}

/// Heads and flows of one steady state.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSolution {
    /// Hydraulic head (m) per node, dense order.
    pub heads: Vec<f64>,
    /// Flow (m³/s) per pipe in model order, positive from `from` to `to`; 0 for closed pipes.
    pub flows: Vec<f64>,
    pub iterations: usize,
    pub relative_change: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    /// heads[t][node], m
    pub heads: Vec<Vec<f64>>,
    /// flows[t][pipe], m³/s
    pub flows: Vec<Vec<f64>>,
    /// Pressure head over all nodes; reservoirs read 0.
    pub pressures: PressureMatrix,
    pub iterations_used: Vec<usize>,
    pub converged: bool,
    /// Set when any junction pressure is negative.
    pub negative_pressure: bool,
}

#[derive(Debug, Clone)]
struct Link {
    pipe: usize,
    from: usize,
    to: usize,
    resistance: f64,
    initial_flow: f64,
    /// Packed slots of (from,from), (to,to), (from,to) when the nodes are junctions.
    slot_from: Option<usize>,
    slot_to: Option<usize>,
    slot_off: Option<usize>,
}

/// Precomputed topology and factorization layout for one model.
#[derive(Debug, Clone)]
pub struct HydraulicSolver<'a> {
    model: &'a HydraulicModel,
    settings: SolverSettings,
    links: Vec<Link>,
    layout: EnvelopeLayout,
    junctions: usize,
}

impl<'a> HydraulicSolver<'a> {
    pub fn new(model: &'a HydraulicModel, settings: SolverSettings) -> Result<Self, SolverError> {
        settings.validate()?;
        if let Some(&n) = unreachable_from_reservoirs(model)
            .iter()
            .find(|n| model.is_junction(**n))
        {
            return Err(SolverError::Disconnected(model.label(n).to_string()));
        }
        let nj = model.junction_count();
        let open: Vec<(usize, &crate::model::Pipe)> =
            model.pipes().iter().enumerate().filter(|(_, p)| p.is_open()).collect();
        let edges: Vec<(usize, usize)> = open
            .iter()
            .filter(|(_, p)| p.from.index() < nj && p.to.index() < nj)
            .map(|(_, p)| (p.from.index(), p.to.index()))
            .collect();
        let layout = EnvelopeLayout::new(nj, &edges);
        let links = open
            .iter()
            .map(|&(k, p)| {
                let (a, b) = (p.from.index(), p.to.index());
                let d = p.diameter / 1000.0;
                Link {
                    pipe: k,
                    from: a,
                    to: b,
                    resistance: hw_resistance(p.length, p.diameter, p.roughness),
                    initial_flow: settings.initial_velocity * std::f64::consts::PI * d * d / 4.0,
                    slot_from: (a < nj).then(|| layout.slot(a, a)),
                    slot_to: (b < nj).then(|| layout.slot(b, b)),
                    slot_off: (a < nj && b < nj).then(|| layout.slot(a, b)),
                }
            })
            .collect();
        Ok(HydraulicSolver {
            model,
            settings,
            links,
            layout,
            junctions: nj,
        })
    }

    pub fn model(&self) -> &HydraulicModel {
        self.model
    }

    pub fn settings(&self) -> &SolverSettings {
        &self.settings
    }

    /// Steady state for one step. `demands` is per node in m³/h (reservoir
    /// entries ignored); `reservoir_heads` follows the model's reservoir order.
    pub fn solve_step(&self, demands: &[f64], reservoir_heads: &[f64]) -> Result<StepSolution, SolverError> {
        let model = self.model;
        let nj = self.junctions;
        if demands.len() != model.node_count() {
            return Err(SolverError::WrongLength {
                what: "node demands",
                expected: model.node_count(),
                actual: demands.len(),
            });
        }
        if reservoir_heads.len() != model.reservoirs().len() {
            return Err(SolverError::WrongLength {
                what: "reservoir heads",
                expected: model.reservoirs().len(),
                actual: reservoir_heads.len(),
            });
        }
        for (i, &d) in demands[..nj].iter().enumerate() {
            if !(d >= 0.0) || !d.is_finite() {
                return Err(SolverError::NegativeDemand {
                    node: model.label(NodeId(i)).to_string(),
                    value: d,
                });
            }
        }

        let demand_si: Vec<f64> = demands[..nj].iter().map(|d| d / 3600.0).collect();
        let mut heads = vec![0.0; model.node_count()];
        heads[nj..].copy_from_slice(reservoir_heads);

        let q_eps = self.settings.flow_regularization;
        let lin_pow = q_eps.powf(HW_EXPONENT - 1.0);
        let mut q: Vec<f64> = self.links.iter().map(|l| l.initial_flow).collect();
        let mut p = vec![0.0; q.len()];
        let mut y = vec![0.0; q.len()];
        let mut a: EnvelopeMatrix = self.layout.zeros();
        let mut rhs = vec![0.0; nj];
        let mut relative_change = f64::INFINITY;

        for iteration in 1..=self.settings.max_iterations {
            a.clear();
            for (i, r) in rhs.iter_mut().enumerate() {
                *r = -demand_si[i];
            }
            for (k, l) in self.links.iter().enumerate() {
                let qa = q[k].abs();
                // Below q_eps the law continues linearly with slope r·q_eps^0.852.
                let (grad, hloss) = if qa < q_eps {
                    let g = l.resistance * lin_pow;
                    (g, g * q[k])
                } else {
                    let rq = l.resistance * qa.powf(HW_EXPONENT - 1.0);
                    (HW_EXPONENT * rq, rq * q[k])
                };
                p[k] = 1.0 / grad;
                y[k] = p[k] * hloss;
                let net = q[k] - y[k];
                if let Some(s) = l.slot_from {
                    a.add(s, p[k]);
                    rhs[l.from] -= net;
                } else {
                    // from is a reservoir; only matters when `to` is a junction
                    if l.to < nj {
                        rhs[l.to] += p[k] * heads[l.from];
                    }
                }
                if let Some(s) = l.slot_to {
                    a.add(s, p[k]);
                    rhs[l.to] += net;
                } else if l.from < nj {
                    rhs[l.from] += p[k] * heads[l.to];
                }
                if let Some(s) = l.slot_off {
                    a.add(s, -p[k]);
                }
            }
            if nj > 0 {
                self.layout.factor(&mut a).map_err(|e| {
                    SolverError::Disconnected(model.label(NodeId(e.row)).to_string())
                })?;
                self.layout.solve(&a, &mut rhs);
                heads[..nj].copy_from_slice(&rhs);
            }

            let mut sum_dq = 0.0;
            let mut sum_q = 0.0;
            for (k, l) in self.links.iter().enumerate() {
                let new_q = q[k] - y[k] + p[k] * (heads[l.from] - heads[l.to]);
                sum_dq += (new_q - q[k]).abs();
                sum_q += new_q.abs();
                q[k] = new_q;
            }
            relative_change = sum_dq / sum_q.max(q_eps);
            if relative_change <= self.settings.flow_tolerance {
                let mut flows = vec![0.0; model.pipes().len()];
                for (k, l) in self.links.iter().enumerate() {
                    flows[l.pipe] = q[k];
                }
                return Ok(StepSolution {
                    heads,
                    flows,
                    iterations: iteration,
                    relative_change,
                });
            }
        }
        Err(SolverError::NonConvergence {
            iterations: self.settings.max_iterations,
            relative_change,
        })
    }

    /// Solves every step of `demands` (m³/h). `heads` rows may hold one entry
    /// (held constant) or one per step.
    pub fn simulate(&self, demands: &DemandMatrix, heads: &HeadSeries) -> Result<SolveResult, SolverError> {
        let model = self.model;
        let steps = demands.steps();
        self.check_inputs(demands, heads)?;
        let mut all_heads = Vec::with_capacity(steps);
        let mut all_flows = Vec::with_capacity(steps);
        let mut iterations_used = Vec::with_capacity(steps);
        for t in 0..steps {
            let s = self
                .solve_step(&demands.column(t), &heads.heads_at(t))
                .map_err(|e| SolverError::AtStep {
                    step: t,
                    source: Box::new(e),
                })?;
            all_heads.push(s.heads);
            all_flows.push(s.flows);
            iterations_used.push(s.iterations);
        }
        let n = model.node_count();
        let mut values = vec![0.0; n * steps];
        let mut negative_pressure = false;
        for (t, h) in all_heads.iter().enumerate() {
            for i in 0..model.junction_count() {
                let pr = h[i] - model.junctions()[i].elevation;
                negative_pressure |= pr < 0.0;
                values[i * steps + t] = pr;
            }
        }
        let pressures = PressureMatrix::new(model.node_ids().collect(), steps, values)?;
        Ok(SolveResult {
            heads: all_heads,
            flows: all_flows,
            pressures,
            iterations_used,
            converged: true,
            negative_pressure,
        })
    }

    /// Pressures only; same numbers as `simulate(..).pressures`.
    pub fn pressures(&self, demands: &DemandMatrix, heads: &HeadSeries) -> Result<PressureMatrix, SolverError> {
        let model = self.model;
        let steps = demands.steps();
        self.check_inputs(demands, heads)?;
        let nj = model.junction_count();
        let mut values = vec![0.0; model.node_count() * steps];
        for t in 0..steps {
            let s = self
                .solve_step(&demands.column(t), &heads.heads_at(t))
                .map_err(|e| SolverError::AtStep {
                    step: t,
                    source: Box::new(e),
                })?;
            for i in 0..nj {
                values[i * steps + t] = s.heads[i] - model.junctions()[i].elevation;
            }
        }
        Ok(PressureMatrix::new(model.node_ids().collect(), steps, values)?)
    }

    fn check_inputs(&self, demands: &DemandMatrix, heads: &HeadSeries) -> Result<(), SolverError> {
        let model = self.model;
        if demands.node_count() != model.node_count() || demands.junction_count() != model.junction_count() {
            return Err(SolverError::WrongLength {
                what: "demand matrix rows",
                expected: model.node_count(),
                actual: demands.node_count(),
            });
        }
        if heads.reservoir_count() != model.reservoirs().len() {
            return Err(SolverError::WrongLength {
                what: "reservoir head series",
                expected: model.reservoirs().len(),
                actual: heads.reservoir_count(),
            });
        }
        heads.check_steps(demands.steps())?;
        Ok(())
    }
}

/// One steady state of `model`.
pub fn solve_step(
    model: &HydraulicModel,
    demands: &[f64],
    reservoir_heads: &[f64],
    settings: &SolverSettings,
) -> Result<StepSolution, SolverError> {
    HydraulicSolver::new(model, *settings)?.solve_step(demands, reservoir_heads)
}

/// Full-horizon simulation, one independent steady state per step.
pub fn simulate(
    model: &HydraulicModel,
    demands: &DemandMatrix,
    heads: &HeadSeries,
    settings: &SolverSettings,
) -> Result<SolveResult, SolverError> {
    HydraulicSolver::new(model, *settings)?.simulate(demands, heads)
}
