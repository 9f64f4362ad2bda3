//! Graph distances along open pipes and the per-iteration evaluation
//! measures: detection distance, closest-sensor distance and rank.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::OnceLock;

use thiserror::Error;

use crate::localization::LocalizationResult;
use crate::model::{open_adjacency, HydraulicModel, NodeId};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MetricsError {
    #[error("node {0} is not part of the model")]
    UnknownNode(NodeId),
    #[error("true leak node {0} is missing from the ranking of iteration {1}")]
    NotRanked(NodeId, usize),
}

/// Shortest-path lengths (m) over open pipes, computed per source on first
/// use and cached. Unreachable pairs are `f64::INFINITY`.
#[derive(Debug)]
pub struct DistanceOracle {
    adjacency: Vec<Vec<(usize, f64)>>,
    rows: Vec<OnceLock<Vec<f64>>>,
}

#[derive(Clone, Copy, PartialEq)]
struct Frontier {
    dist: f64,
    node: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, then node index
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl DistanceOracle {
    pub fn new(model: &HydraulicModel) -> Self {
        let adjacency = open_adjacency(model)
            .into_iter()
            .map(|list| {
                list.into_iter()
                    .map(|(n, k)| (n.index(), model.pipes()[k].length))
                    .collect()
            })
            .collect();
        DistanceOracle {
            adjacency,
            rows: (0..model.node_count()).map(|_| OnceLock::new()).collect(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.rows.len()
    }

    /// Distances from `source` to every node.
    pub fn from_source(&self, source: NodeId) -> Result<&[f64], MetricsError> {
        let cell = self
            .rows
            .get(source.index())
            .ok_or(MetricsError::UnknownNode(source))?;
        Ok(cell.get_or_init(|| self.dijkstra(source.index())))
    }

    pub fn distance(&self, a: NodeId, b: NodeId) -> Result<f64, MetricsError> {
        if b.index() >= self.rows.len() {
            return Err(MetricsError::UnknownNode(b));
        }
        Ok(self.from_source(a)?[b.index()])
    }

    fn dijkstra(&self, source: usize) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.adjacency.len()];
        dist[source] = 0.0;
        let mut heap = BinaryHeap::from([Frontier {
            dist: 0.0,
            node: source,
        }]);
        while let Some(Frontier { dist: d, node }) = heap.pop() {
            if d > dist[node] {
                continue;
            }
            for &(next, w) in &self.adjacency[node] {
                let nd = d + w;
                if nd < dist[next] {
                    dist[next] = nd;
                    heap.push(Frontier { dist: nd, node: next });
                }
            }
        }
        dist
    }
}

/// Shortest open-pipe path length between two nodes; `INFINITY` if disconnected.
pub fn graph_distance(model: &HydraulicModel, a: NodeId, b: NodeId) -> Result<f64, MetricsError> {
    if !model.contains(b) {
        return Err(MetricsError::UnknownNode(b));
    }
    DistanceOracle::new(model).distance(a, b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationMetrics {
    pub iteration: usize,
    /// Distance from the selected node to the true leak, m.
    pub d_leak: f64,
    /// Distance from the closest sensor to the true leak, m.
    pub d_sensor: f64,
    /// 1-based position of the true leak in the ranking.
    pub rank: usize,
}

pub fn evaluate(
    result: &LocalizationResult,
    truth: NodeId,
    oracle: &DistanceOracle,
) -> Result<Vec<IterationMetrics>, MetricsError> {
    let from_truth = oracle.from_source(truth)?;
    result
        .iterations()
        .iter()
        .enumerate()
        .map(|(i, it)| {
            let rank = it
                .ranking
                .rank_of(truth)
                .ok_or(MetricsError::NotRanked(truth, i))?;
            let d_sensor = it
                .sensors
                .sensors()
                .iter()
                .map(|s| from_truth[s.index()])
                .fold(f64::INFINITY, f64::min);
            Ok(IterationMetrics {
                iteration: i,
                d_leak: from_truth[it.selected.index()],
                d_sensor,
                rank,
            })
        })
        .collect()
}
