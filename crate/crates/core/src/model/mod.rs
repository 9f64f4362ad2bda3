//! Network description shared by every other module.
//!
//! Nodes are densely indexed at build time: junctions first, then reservoirs,
//! each group in the order it was added (file order for parsed models).
//! Flows are m³/h at this level; the solver converts to m³/s internally.

mod matrix;

pub use matrix::{DemandMatrix, HeadSeries, MatrixError, PressureMatrix};

use std::collections::{HashMap, VecDeque};
use std::fmt;

use thiserror::Error;

/// Dense node index, valid for the model that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn new(index: usize) -> Self {
        NodeId(index)
    }

    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Junction,
    Reservoir,
}

/// Extra demand entry, as listed in an INP `[DEMANDS]` section.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandCategory {
    pub base: f64,
    pub pattern: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Junction {
    pub label: String,
    /// m
    pub elevation: f64,
    /// m³/h
    pub base_demand: f64,
    pub demand_pattern: Option<String>,
    /// When non-empty these replace `base_demand`/`demand_pattern`.
    pub demand_categories: Vec<DemandCategory>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reservoir {
    pub label: String,
    /// Total head in m.
    pub head: f64,
    pub head_pattern: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PipeStatus {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pipe {
    pub label: String,
    pub from: NodeId,
    pub to: NodeId,
    /// m
    pub length: f64,
    /// mm
    pub diameter: f64,
    /// Hazen-Williams C
    pub roughness: f64,
    pub status: PipeStatus,
}

impl Pipe {
    pub fn is_open(&self) -> bool {
        self.status == PipeStatus::Open
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pattern {
    pub label: String,
    pub multipliers: Vec<f64>,
}

impl Pattern {
    /// Multiplier for step `t`, wrapping around the pattern length.
    pub fn at(&self, t: usize) -> f64 {
        if self.multipliers.is_empty() {
            1.0
        } else {
            self.multipliers[t % self.multipliers.len()]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeConfig {
    /// Number of hydraulic steps T.
    pub steps: usize,
    pub step_seconds: u64,
}

impl Default for TimeConfig {
    fn default() -> Self {
        TimeConfig {
            steps: 24,
            step_seconds: 3600,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ModelError {
    #[error("duplicate node label {0:?}")]
    DuplicateNode(String),
    #[error("duplicate pipe label {0:?}")]
    DuplicatePipe(String),
    #[error("duplicate pattern label {0:?}")]
    DuplicatePattern(String),
    #[error("pipe {pipe:?} references undefined node {node:?}")]
    DanglingEndpoint { pipe: String, node: String },
    #[error("pipe {0:?} connects a node to itself")]
    SelfLoop(String),
    #[error("{item:?}: invalid {field} {value}")]
    InvalidValue {
        item: String,
        field: &'static str,
        value: f64,
    },
    #[error("{item:?} references undefined pattern {pattern:?}")]
    UnknownPattern { item: String, pattern: String },
    #[error("coordinates given for undefined node {0:?}")]
    UnknownCoordinateNode(String),
    #[error("model has junctions but no reservoir")]
    NoReservoir,
    #[error("node {0:?} is not connected to the rest of the network through open pipes")]
    Disconnected(String),
    #[error("time configuration needs at least one step")]
    NoSteps,
}

/// Immutable, validated water distribution network.
#[derive(Debug, Clone, PartialEq)]
pub struct HydraulicModel {
    title: Vec<String>,
    junctions: Vec<Junction>,
    reservoirs: Vec<Reservoir>,
    pipes: Vec<Pipe>,
    patterns: Vec<Pattern>,
    coordinates: Vec<Option<(f64, f64)>>,
    times: TimeConfig,
    labels: HashMap<String, NodeId>,
    pattern_index: HashMap<String, usize>,
}

impl HydraulicModel {
    pub fn title(&self) -> &[String] {
        &self.title
    }

    pub fn junctions(&self) -> &[Junction] {
        &self.junctions
    }

    pub fn reservoirs(&self) -> &[Reservoir] {
        &self.reservoirs
    }

    pub fn pipes(&self) -> &[Pipe] {
        &self.pipes
    }

    pub fn patterns(&self) -> &[Pattern] {
        &self.patterns
    }

    pub fn pattern(&self, label: &str) -> Option<&Pattern> {
        self.pattern_index.get(label).map(|&i| &self.patterns[i])
    }

    pub fn times(&self) -> TimeConfig {
        self.times
    }

    pub fn steps(&self) -> usize {
        self.times.steps
    }

    /// M, the total number of nodes.
    pub fn node_count(&self) -> usize {
        self.junctions.len() + self.reservoirs.len()
    }

    pub fn junction_count(&self) -> usize {
        self.junctions.len()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.node_count()).map(NodeId)
    }

    pub fn junction_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.junctions.len()).map(NodeId)
    }

    pub fn reservoir_ids(&self) -> impl Iterator<Item = NodeId> {
        (self.junctions.len()..self.node_count()).map(NodeId)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id.0 < self.node_count()
    }

    pub fn kind(&self, id: NodeId) -> NodeKind {
        if id.0 < self.junctions.len() {
            NodeKind::Junction
        } else {
            NodeKind::Reservoir
        }
    }

    pub fn is_junction(&self, id: NodeId) -> bool {
        id.0 < self.junctions.len()
    }

    pub fn junction(&self, id: NodeId) -> Option<&Junction> {
        self.junctions.get(id.0)
    }

    pub fn reservoir(&self, id: NodeId) -> Option<&Reservoir> {
        id.0.checked_sub(self.junctions.len())
            .and_then(|i| self.reservoirs.get(i))
    }

    /// Label of a node.
    ///
    /// Panics if `id` was not issued by this model.
    pub fn label(&self, id: NodeId) -> &str {
        match self.kind(id) {
            NodeKind::Junction => &self.junctions[id.0].label,
            NodeKind::Reservoir => &self.reservoirs[id.0 - self.junctions.len()].label,
        }
    }

    pub fn node_id(&self, label: &str) -> Option<NodeId> {
        self.labels.get(label).copied()
    }

    /// Elevation used to turn head into pressure; reservoirs report their head.
    pub fn elevation(&self, id: NodeId) -> f64 {
        match self.kind(id) {
            NodeKind::Junction => self.junctions[id.0].elevation,
            NodeKind::Reservoir => self.reservoirs[id.0 - self.junctions.len()].head,
        }
    }

    pub fn coordinates(&self, id: NodeId) -> Option<(f64, f64)> {
        self.coordinates.get(id.0).copied().flatten()
    }

    /// Demand matrix D (m³/h) with patterns expanded over the model's steps.
    pub fn demand_matrix(&self) -> DemandMatrix {
        let steps = self.steps();
        let mut values = vec![0.0; self.node_count() * steps];
        for (i, j) in self.junctions.iter().enumerate() {
            let row = &mut values[i * steps..(i + 1) * steps];
            if j.demand_categories.is_empty() {
                let pattern = j.demand_pattern.as_deref().and_then(|p| self.pattern(p));
                for (t, v) in row.iter_mut().enumerate() {
                    *v = j.base_demand * pattern.map_or(1.0, |p| p.at(t));
                }
            } else {
                for cat in &j.demand_categories {
                    let pattern = cat.pattern.as_deref().and_then(|p| self.pattern(p));
                    for (t, v) in row.iter_mut().enumerate() {
                        *v += cat.base * pattern.map_or(1.0, |p| p.at(t));
                    }
                }
            }
        }
        DemandMatrix::from_parts(self.junctions.len(), self.node_count(), steps, values)
    }

    /// Reservoir heads per step, with head patterns applied.
    pub fn reservoir_heads(&self) -> HeadSeries {
        let steps = self.steps();
        let rows = self
            .reservoirs
            .iter()
            .map(|r| {
                let pattern = r.head_pattern.as_deref().and_then(|p| self.pattern(p));
                (0..steps)
                    .map(|t| r.head * pattern.map_or(1.0, |p| p.at(t)))
                    .collect()
            })
            .collect();
        HeadSeries::per_reservoir(rows).expect("reservoir heads are finite")
    }

    /// Builder seeded with every item of this model, for derived variants.
    pub fn to_builder(&self) -> ModelBuilder {
        let mut b = ModelBuilder::new();
        b.title = self.title.clone();
        for j in &self.junctions {
            b.junctions.push(j.clone());
        }
        for r in &self.reservoirs {
            b.reservoirs.push(r.clone());
        }
        for p in &self.pipes {
            b.pipes.push(PipeSpec {
                label: p.label.clone(),
                from: self.label(p.from).to_string(),
                to: self.label(p.to).to_string(),
                length: p.length,
                diameter: p.diameter,
                roughness: p.roughness,
                status: p.status,
            });
        }
        b.patterns = self.patterns.clone();
        for id in self.node_ids() {
            if let Some(xy) = self.coordinates(id) {
                b.coordinates.push((self.label(id).to_string(), xy));
            }
        }
        b.times = self.times;
        b
    }
}

#[derive(Debug, Clone)]
struct PipeSpec {
    label: String,
    from: String,
    to: String,
    length: f64,
    diameter: f64,
    roughness: f64,
    status: PipeStatus,
}

/// Accumulates labelled items, then resolves and validates them in `build`.
#[derive(Debug, Clone, Default)]
pub struct ModelBuilder {
    title: Vec<String>,
    junctions: Vec<Junction>,
    reservoirs: Vec<Reservoir>,
    pipes: Vec<PipeSpec>,
    patterns: Vec<Pattern>,
    coordinates: Vec<(String, (f64, f64))>,
    times: TimeConfig,
}

impl ModelBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn title_line(&mut self, line: impl Into<String>) -> &mut Self {
        self.title.push(line.into());
        self
    }

    pub fn junction(
        &mut self,
        label: impl Into<String>,
        elevation: f64,
        base_demand: f64,
        pattern: Option<&str>,
    ) -> &mut Self {
        self.junctions.push(Junction {
            label: label.into(),
            elevation,
            base_demand,
            demand_pattern: pattern.map(str::to_string),
            demand_categories: Vec::new(),
        });
        self
    }

    /// Adds a demand category to an already declared junction. Returns false
    /// if the junction is unknown.
    pub fn demand_category(&mut self, junction: &str, base: f64, pattern: Option<&str>) -> bool {
        match self.junctions.iter_mut().find(|j| j.label == junction) {
            Some(j) => {
                j.demand_categories.push(DemandCategory {
                    base,
                    pattern: pattern.map(str::to_string),
                });
                true
            }
            None => false,
        }
    }

    pub fn reservoir(&mut self, label: impl Into<String>, head: f64, pattern: Option<&str>) -> &mut Self {
        self.reservoirs.push(Reservoir {
            label: label.into(),
            head,
            head_pattern: pattern.map(str::to_string),
        });
        self
    }

    #[allow(clippy::too_many_arguments)]
    pub fn pipe(
        &mut self,
        label: impl Into<String>,
        from: impl Into<String>,
        to: impl Into<String>,
        length: f64,
        diameter: f64,
        roughness: f64,
        status: PipeStatus,
    ) -> &mut Self {
        self.pipes.push(PipeSpec {
            label: label.into(),
            from: from.into(),
            to: to.into(),
            length,
            diameter,
            roughness,
            status,
        });
        self
    }

    /// Appends multipliers to a pattern, creating it on first use.
    pub fn pattern(&mut self, label: impl Into<String>, multipliers: &[f64]) -> &mut Self {
        let label = label.into();
        match self.patterns.iter_mut().find(|p| p.label == label) {
            Some(p) => p.multipliers.extend_from_slice(multipliers),
            None => self.patterns.push(Pattern {
                label,
                multipliers: multipliers.to_vec(),
            }),
        }
        self
    }

    pub fn coordinates(&mut self, node: impl Into<String>, x: f64, y: f64) -> &mut Self {
        self.coordinates.push((node.into(), (x, y)));
        self
    }

    pub fn times(&mut self, times: TimeConfig) -> &mut Self {
        self.times = times;
        self
    }

    pub fn build(&self) -> Result<HydraulicModel, ModelError> {
        let model = self.build_unchecked_topology()?;
        check_connectivity(&model)?;
        Ok(model)
    }

    /// Everything `build` checks except connectivity; the solver relies on
    /// its own reachability check for models built this way.
    pub(crate) fn build_unchecked_topology(&self) -> Result<HydraulicModel, ModelError> {
        if self.times.steps == 0 {
            return Err(ModelError::NoSteps);
        }
        let mut pattern_index = HashMap::new();
        for (i, p) in self.patterns.iter().enumerate() {
            if pattern_index.insert(p.label.clone(), i).is_some() {
                return Err(ModelError::DuplicatePattern(p.label.clone()));
            }
            for &m in &p.multipliers {
                finite(&p.label, "multiplier", m)?;
            }
        }
        let check_pattern = |item: &str, pattern: &Option<String>| match pattern {
            Some(p) if !pattern_index.contains_key(p) => Err(ModelError::UnknownPattern {
                item: item.to_string(),
                pattern: p.clone(),
            }),
            _ => Ok(()),
        };

        let mut labels = HashMap::new();
        let nj = self.junctions.len();
        for (i, j) in self.junctions.iter().enumerate() {
            if labels.insert(j.label.clone(), NodeId(i)).is_some() {
                return Err(ModelError::DuplicateNode(j.label.clone()));
            }
            finite(&j.label, "elevation", j.elevation)?;
            nonnegative(&j.label, "base demand", j.base_demand)?;
            check_pattern(&j.label, &j.demand_pattern)?;
            for c in &j.demand_categories {
                nonnegative(&j.label, "base demand", c.base)?;
                check_pattern(&j.label, &c.pattern)?;
            }
        }
        for (i, r) in self.reservoirs.iter().enumerate() {
            if labels.insert(r.label.clone(), NodeId(nj + i)).is_some() {
                return Err(ModelError::DuplicateNode(r.label.clone()));
            }
            finite(&r.label, "head", r.head)?;
            check_pattern(&r.label, &r.head_pattern)?;
        }

        let mut pipe_labels = std::collections::HashSet::new();
        let mut pipes = Vec::with_capacity(self.pipes.len());
        for p in &self.pipes {
            if !pipe_labels.insert(p.label.as_str()) {
                return Err(ModelError::DuplicatePipe(p.label.clone()));
            }
            let resolve = |node: &str| {
                labels.get(node).copied().ok_or_else(|| ModelError::DanglingEndpoint {
                    pipe: p.label.clone(),
                    node: node.to_string(),
                })
            };
            let from = resolve(&p.from)?;
            let to = resolve(&p.to)?;
            if from == to {
                return Err(ModelError::SelfLoop(p.label.clone()));
            }
            positive(&p.label, "length", p.length)?;
            positive(&p.label, "diameter", p.diameter)?;
            positive(&p.label, "roughness", p.roughness)?;
            pipes.push(Pipe {
                label: p.label.clone(),
                from,
                to,
                length: p.length,
                diameter: p.diameter,
                roughness: p.roughness,
                status: p.status,
            });
        }

        let mut coordinates = vec![None; labels.len()];
        for (node, (x, y)) in &self.coordinates {
            let id = labels
                .get(node)
                .ok_or_else(|| ModelError::UnknownCoordinateNode(node.clone()))?;
            finite(node, "x coordinate", *x)?;
            finite(node, "y coordinate", *y)?;
            coordinates[id.0] = Some((*x, *y));
        }

        Ok(HydraulicModel {
            title: self.title.clone(),
            junctions: self.junctions.clone(),
            reservoirs: self.reservoirs.clone(),
            pipes,
            patterns: self.patterns.clone(),
            coordinates,
            times: self.times,
            labels,
            pattern_index,
        })
    }
}

fn finite(item: &str, field: &'static str, value: f64) -> Result<(), ModelError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(ModelError::InvalidValue {
            item: item.to_string(),
            field,
            value,
        })
    }
}

fn nonnegative(item: &str, field: &'static str, value: f64) -> Result<(), ModelError> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(ModelError::InvalidValue {
            item: item.to_string(),
            field,
            value,
        })
    }
}

fn positive(item: &str, field: &'static str, value: f64) -> Result<(), ModelError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(ModelError::InvalidValue {
            item: item.to_string(),
            field,
            value,
        })
    }
}

/// Adjacency over open pipes: for each node, (neighbour, pipe index).
pub(crate) fn open_adjacency(model: &HydraulicModel) -> Vec<Vec<(NodeId, usize)>> {
    let mut adj = vec![Vec::new(); model.node_count()];
    for (k, p) in model.pipes().iter().enumerate() {
        if p.is_open() {
            adj[p.from.0].push((p.to, k));
            adj[p.to.0].push((p.from, k));
        }
    }
    adj
}

/// Nodes not reachable from any reservoir over open pipes, in dense order.
pub(crate) fn unreachable_from_reservoirs(model: &HydraulicModel) -> Vec<NodeId> {
    let adj = open_adjacency(model);
    let mut seen = vec![false; model.node_count()];
    let mut queue: VecDeque<NodeId> = model.reservoir_ids().collect();
    for r in &queue {
        seen[r.0] = true;
    }
    while let Some(n) = queue.pop_front() {
        for &(m, _) in &adj[n.0] {
            if !seen[m.0] {
                seen[m.0] = true;
                queue.push_back(m);
            }
        }
    }
    model.node_ids().filter(|n| !seen[n.0]).collect()
}

fn check_connectivity(model: &HydraulicModel) -> Result<(), ModelError> {
    if model.node_count() == 0 {
        return Ok(());
    }
    if model.reservoirs.is_empty() && !model.junctions.is_empty() {
        return Err(ModelError::NoReservoir);
    }
    if let Some(&n) = unreachable_from_reservoirs(model).first() {
        return Err(ModelError::Disconnected(model.label(n).to_string()));
    }
    // Reachable from some reservoir is not enough: the graph must be a single piece.
    let adj = open_adjacency(model);
    let mut seen = vec![false; model.node_count()];
    let mut stack = vec![NodeId(0)];
    seen[0] = true;
    while let Some(n) = stack.pop() {
        for &(m, _) in &adj[n.0] {
            if !seen[m.0] {
                seen[m.0] = true;
                stack.push(m);
            }
        }
    }
    match seen.iter().position(|s| !s) {
        Some(i) => Err(ModelError::Disconnected(model.label(NodeId(i)).to_string())),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_node() -> ModelBuilder {
        let mut b = ModelBuilder::new();
        b.reservoir("R", 50.0, None)
            .junction("J", 0.0, 1.0, None)
            .pipe("P", "R", "J", 100.0, 100.0, 130.0, PipeStatus::Open);
        b
    }

    #[test]
    fn junctions_are_indexed_before_reservoirs() {
        let m = two_node().build().unwrap();
        assert_eq!(m.node_id("J"), Some(NodeId(0)));
        assert_eq!(m.node_id("R"), Some(NodeId(1)));
        assert_eq!(m.kind(NodeId(1)), NodeKind::Reservoir);
    }

    #[test]
    fn label_index_round_trip() {
        let mut b = ModelBuilder::new();
        b.reservoir("R1", 40.0, None);
        for i in 0..20 {
            b.junction(format!("j{i}"), 0.0, 0.0, None);
            let prev = if i == 0 { "R1".to_string() } else { format!("j{}", i - 1) };
            b.pipe(format!("p{i}"), prev, format!("j{i}"), 10.0, 50.0, 100.0, PipeStatus::Open);
        }
        let m = b.build().unwrap();
        for id in m.node_ids() {
            assert_eq!(m.node_id(m.label(id)), Some(id));
        }
    }

    #[test]
    fn dangling_endpoint_names_the_node() {
        let mut b = two_node();
        b.pipe("P2", "J", "nodeX", 1.0, 1.0, 1.0, PipeStatus::Open);
        let err = b.build().unwrap_err();
        assert_eq!(
            err,
            ModelError::DanglingEndpoint {
                pipe: "P2".into(),
                node: "nodeX".into()
            }
        );
        assert!(err.to_string().contains("nodeX"));
    }

    #[test]
    fn rejects_bad_pipe_values() {
        let mut b = two_node();
        b.junction("K", 0.0, 0.0, None)
            .pipe("P2", "J", "K", 0.0, 100.0, 130.0, PipeStatus::Open);
        assert!(matches!(b.build(), Err(ModelError::InvalidValue { field: "length", .. })));

        let mut b = two_node();
        b.pipe("P2", "J", "J", 1.0, 1.0, 1.0, PipeStatus::Open);
        assert_eq!(b.build().unwrap_err(), ModelError::SelfLoop("P2".into()));
    }

    #[test]
    fn rejects_negative_demand() {
        let mut b = ModelBuilder::new();
        b.reservoir("R", 50.0, None)
            .junction("J", 0.0, -1.0, None)
            .pipe("P", "R", "J", 100.0, 100.0, 130.0, PipeStatus::Open);
        assert!(b.build().is_err());
    }

    #[test]
    fn closed_pipe_can_disconnect() {
        let mut b = ModelBuilder::new();
        b.reservoir("R", 50.0, None)
            .junction("J", 0.0, 1.0, None)
            .pipe("P", "R", "J", 100.0, 100.0, 130.0, PipeStatus::Closed);
        assert_eq!(b.build().unwrap_err(), ModelError::Disconnected("J".into()));
    }

    #[test]
    fn junctions_without_reservoir_fail() {
        let mut b = ModelBuilder::new();
        b.junction("A", 0.0, 1.0, None)
            .junction("B", 0.0, 1.0, None)
            .pipe("P", "A", "B", 1.0, 1.0, 1.0, PipeStatus::Open);
        assert_eq!(b.build().unwrap_err(), ModelError::NoReservoir);
    }

    #[test]
    fn empty_model_is_valid() {
        let m = ModelBuilder::new().build().unwrap();
        assert_eq!(m.node_count(), 0);
        assert_eq!(m.steps(), 24);
    }

    #[test]
    fn demand_matrix_expands_patterns() {
        let mut b = two_node();
        b.pattern("day", &[0.5, 1.5]);
        b.junction("K", 1.0, 2.0, Some("day"))
            .pipe("P2", "J", "K", 10.0, 50.0, 100.0, PipeStatus::Open);
        b.times(TimeConfig {
            steps: 3,
            step_seconds: 3600,
        });
        let m = b.build().unwrap();
        let d = m.demand_matrix();
        let k = m.node_id("K").unwrap();
        assert_eq!(d.row(k), &[1.0, 3.0, 1.0]);
        assert_eq!(d.row(m.node_id("J").unwrap()), &[1.0, 1.0, 1.0]);
        assert_eq!(d.row(m.node_id("R").unwrap()), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn demand_categories_override_base() {
        let mut b = two_node();
        b.pattern("x2", &[2.0]);
        assert!(b.demand_category("J", 3.0, None));
        assert!(b.demand_category("J", 0.5, Some("x2")));
        assert!(!b.demand_category("missing", 1.0, None));
        let m = b.build().unwrap();
        let d = m.demand_matrix();
        assert!(d.row(NodeId(0)).iter().all(|&v| v == 4.0));
    }
}
