use thiserror::Error;

use super::NodeId;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MatrixError {
    #[error("node {0} is not a row of the matrix")]
    UnknownRow(NodeId),
    #[error("node {0} is a reservoir; leaks can only be placed on junctions")]
    LeakOnReservoir(NodeId),
    #[error("invalid leak size {0} (must be finite and >= 0)")]
    InvalidLeakSize(f64),
    #[error("matrix shapes differ: {left_rows}x{left_steps} vs {right_rows}x{right_steps}")]
    ShapeMismatch {
        left_rows: usize,
        left_steps: usize,
        right_rows: usize,
        right_steps: usize,
    },
    #[error("matrices are indexed by different node sets")]
    RowSetMismatch,
    #[error("row order must be strictly increasing and duplicate-free")]
    RowOrder,
    #[error("expected {expected} values, got {actual}")]
    WrongLength { expected: usize, actual: usize },
    #[error("non-finite entry at row {row}, step {step}")]
    NonFinite { row: usize, step: usize },
    #[error("reservoir row {0} must be all zero")]
    ReservoirDemand(NodeId),
    #[error("head series has {actual} steps, expected 1 or {expected}")]
    StepMismatch { expected: usize, actual: usize },
}

/// Water demand per node and step, m³/h. Rows are all M nodes in dense order.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandMatrix {
    junctions: usize,
    nodes: usize,
    steps: usize,
    values: Vec<f64>,
}

impl DemandMatrix {
    /// `rows` holds one vector per node in dense order; reservoir rows
    /// (indices `junctions..`) must be zero.
    pub fn new(junctions: usize, rows: Vec<Vec<f64>>) -> Result<Self, MatrixError> {
        let nodes = rows.len();
        let steps = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(nodes * steps);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != steps {
                return Err(MatrixError::WrongLength {
                    expected: steps,
                    actual: row.len(),
                });
            }
            for (t, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(MatrixError::NonFinite { row: i, step: t });
                }
                if i >= junctions && v != 0.0 {
                    return Err(MatrixError::ReservoirDemand(NodeId(i)));
                }
            }
            values.extend(row);
        }
        Ok(Self::from_parts(junctions.min(nodes), nodes, steps, values))
    }

    pub(crate) fn from_parts(junctions: usize, nodes: usize, steps: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), nodes * steps);
        DemandMatrix {
            junctions,
            nodes,
            steps,
            values,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn junction_count(&self) -> usize {
        self.junctions
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn row(&self, node: NodeId) -> &[f64] {
        &self.values[node.0 * self.steps..(node.0 + 1) * self.steps]
    }

    pub fn get(&self, node: NodeId, step: usize) -> f64 {
        self.values[node.0 * self.steps + step]
    }

    /// Demands of every node at one step.
    pub fn column(&self, step: usize) -> Vec<f64> {
        (0..self.nodes).map(|i| self.values[i * self.steps + step]).collect()
    }

    /// Copy of `self` with `leak` m³/h added to every step of `node`'s row.
    pub fn add_leak(&self, node: NodeId, leak: f64) -> Result<DemandMatrix, MatrixError> {
        self.add_leak_pattern(node, &vec![leak; self.steps])
    }

    /// Copy of `self` with `pattern[t]` m³/h added to step t of `node`'s row.
    pub fn add_leak_pattern(&self, node: NodeId, pattern: &[f64]) -> Result<DemandMatrix, MatrixError> {
        if node.0 >= self.nodes {
            return Err(MatrixError::UnknownRow(node));
        }
        if node.0 >= self.junctions {
            return Err(MatrixError::LeakOnReservoir(node));
        }
        if pattern.len() != self.steps {
            return Err(MatrixError::StepMismatch { expected: self.steps, actual: pattern.len() });
        }
        if let Some(&bad) = pattern.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(MatrixError::InvalidLeakSize(bad));
        }
        let mut out = self.clone();
        let row = &mut out.values[node.0 * self.steps..(node.0 + 1) * self.steps];
        for (v, l) in row.iter_mut().zip(pattern) {
            *v += l;
        }
        Ok(out)
    }

    /// Applies `f(node, step, value)` to every junction entry.
    pub(crate) fn map_junctions(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> DemandMatrix {
        let mut out = self.clone();
        for i in 0..self.junctions {
            for t in 0..self.steps {
                let k = i * self.steps + t;
                out.values[k] = f(i, t, self.values[k]);
            }
        }
        out
    }
}

/// Pressure head (m) for an explicit, ordered set of nodes over T steps.
#[derive(Debug, Clone, PartialEq)]
pub struct PressureMatrix {
    rows: Vec<NodeId>,
    steps: usize,
    values: Vec<f64>,
}

impl PressureMatrix {
    /// `rows` must be strictly increasing; `values` is row-major.
    pub fn new(rows: Vec<NodeId>, steps: usize, values: Vec<f64>) -> Result<Self, MatrixError> {
        if rows.windows(2).any(|w| w[0] >= w[1]) {
            return Err(MatrixError::RowOrder);
        }
        if values.len() != rows.len() * steps {
            return Err(MatrixError::WrongLength {
                expected: rows.len() * steps,
                actual: values.len(),
            });
        }
        Ok(PressureMatrix { rows, steps, values })
    }

    /// Builds from unordered `(node, series)` pairs; rows are sorted into dense order.
    pub fn from_rows(mut rows: Vec<(NodeId, Vec<f64>)>) -> Result<Self, MatrixError> {
        rows.sort_by_key(|(n, _)| *n);
        let steps = rows.first().map_or(0, |(_, r)| r.len());
        let mut ids = Vec::with_capacity(rows.len());
        let mut values = Vec::with_capacity(rows.len() * steps);
        for (n, r) in rows {
            if r.len() != steps {
                return Err(MatrixError::WrongLength {
                    expected: steps,
                    actual: r.len(),
                });
            }
            ids.push(n);
            values.extend(r);
        }
        Self::new(ids, steps, values)
    }

    pub fn rows(&self) -> &[NodeId] {
        &self.rows
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row_position(&self, node: NodeId) -> Option<usize> {
        self.rows.binary_search(&node).ok()
    }

    pub fn row(&self, node: NodeId) -> Option<&[f64]> {
        self.row_position(node)
            .map(|i| &self.values[i * self.steps..(i + 1) * self.steps])
    }

    pub fn row_at(&self, position: usize) -> &[f64] {
        &self.values[position * self.steps..(position + 1) * self.steps]
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.row_position(node).is_some()
    }

    /// Projection onto `sensors`, rows in dense order regardless of input order.
    pub fn restrict(&self, sensors: &[NodeId]) -> Result<PressureMatrix, MatrixError> {
        let mut wanted = sensors.to_vec();
        wanted.sort_unstable();
        wanted.dedup();
        let mut values = Vec::with_capacity(wanted.len() * self.steps);
        for &n in &wanted {
            let row = self.row(n).ok_or(MatrixError::UnknownRow(n))?;
            values.extend_from_slice(row);
        }
        Ok(PressureMatrix {
            rows: wanted,
            steps: self.steps,
            values,
        })
    }

    /// Fails unless `other` has the same row set and step count.
    pub fn check_same_shape(&self, other: &PressureMatrix) -> Result<(), MatrixError> {
        if self.rows.len() != other.rows.len() || self.steps != other.steps {
            return Err(MatrixError::ShapeMismatch {
                left_rows: self.rows.len(),
                left_steps: self.steps,
                right_rows: other.rows.len(),
                right_steps: other.steps,
            });
        }
        if self.rows != other.rows {
            return Err(MatrixError::RowSetMismatch);
        }
        Ok(())
    }

    pub(crate) fn map_values(&self, mut f: impl FnMut(usize, f64) -> f64) -> PressureMatrix {
        PressureMatrix {
            rows: self.rows.clone(),
            steps: self.steps,
            values: self.values.iter().enumerate().map(|(k, &v)| f(k, v)).collect(),
        }
    }
}

/// Fixed heads (m) per reservoir and step. A single column is broadcast to every step.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadSeries {
    rows: Vec<Vec<f64>>,
}

impl HeadSeries {
    /// One row per reservoir, in the model's reservoir order.
    pub fn per_reservoir(rows: Vec<Vec<f64>>) -> Result<Self, MatrixError> {
        for (i, r) in rows.iter().enumerate() {
            if let Some(t) = r.iter().position(|v| !v.is_finite()) {
                return Err(MatrixError::NonFinite { row: i, step: t });
            }
        }
        Ok(HeadSeries { rows })
    }

    /// The same head series for `reservoirs` reservoirs.
    pub fn uniform(reservoirs: usize, heads: Vec<f64>) -> Result<Self, MatrixError> {
        Self::per_reservoir(vec![heads; reservoirs])
    }

    pub fn reservoir_count(&self) -> usize {
        self.rows.len()
    }

    /// Validates that every row has 1 or `steps` entries.
    pub fn check_steps(&self, steps: usize) -> Result<(), MatrixError> {
        for r in &self.rows {
            if r.len() != 1 && r.len() != steps {
                return Err(MatrixError::StepMismatch {
                    expected: steps,
                    actual: r.len(),
                });
            }
        }
        Ok(())
    }

    pub fn heads_at(&self, step: usize) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| if r.len() == 1 { r[0] } else { r[step] })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn abc() -> PressureMatrix {
        PressureMatrix::new(
            vec![NodeId(0), NodeId(1), NodeId(2)],
            4,
            (0..12).map(f64::from).collect(),
        )
        .unwrap()
    }

    #[test]
    fn restrict_to_all_rows_is_identity() {
        let p = abc();
        assert_eq!(p.restrict(&[NodeId(2), NodeId(0), NodeId(1)]).unwrap(), p);
    }

    #[test]
    fn restrict_projects_single_row() {
        let p = abc();
        let r = p.restrict(&[NodeId(1)]).unwrap();
        assert_eq!(r.rows(), &[NodeId(1)]);
        assert_eq!(r.values(), &[4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn restrict_unknown_sensor_names_it() {
        let err = abc().restrict(&[NodeId(7)]).unwrap_err();
        assert_eq!(err, MatrixError::UnknownRow(NodeId(7)));
        assert!(err.to_string().contains("#7"));
    }

    #[test]
    fn restrict_large_matches_rowwise_copy() {
        let m = 782;
        let t = 5;
        let values: Vec<f64> = (0..m * t).map(|k| (k as f64).sin()).collect();
        let p = PressureMatrix::new((0..m).map(NodeId).collect(), t, values.clone()).unwrap();
        // 33 sensors in scrambled order
        let sensors: Vec<NodeId> = (0..33).map(|i| NodeId((i * 397 + 11) % m)).rev().collect();
        let r = p.restrict(&sensors).unwrap();

        let mut expected_rows: Vec<usize> = sensors.iter().map(|n| n.0).collect();
        expected_rows.sort();
        let mut expected = Vec::new();
        for &i in &expected_rows {
            for s in 0..t {
                expected.push(values[i * t + s]);
            }
        }
        assert_eq!(r.rows().len(), 33);
        assert_eq!(r.rows().iter().map(|n| n.0).collect::<Vec<_>>(), expected_rows);
        assert_eq!(r.values(), expected.as_slice());
    }

    #[test]
    fn new_rejects_unsorted_rows() {
        assert_eq!(
            PressureMatrix::new(vec![NodeId(1), NodeId(0)], 1, vec![0.0, 0.0]).unwrap_err(),
            MatrixError::RowOrder
        );
    }

    fn demand(rows: Vec<Vec<f64>>, junctions: usize) -> DemandMatrix {
        DemandMatrix::new(junctions, rows).unwrap()
    }

    #[test]
    fn add_leak_zero_is_identity() {
        let d = demand(vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![0.0, 0.0]], 2);
        assert_eq!(d.add_leak(NodeId(1), 0.0).unwrap(), d);
    }

    #[test]
    fn add_leak_adds_to_one_row() {
        let d = demand(vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![0.0, 0.0]], 2);
        let l = d.add_leak(NodeId(0), 6.38).unwrap();
        for (got, want) in l.row(NodeId(0)).iter().zip([7.38, 8.38]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!(l.row(NodeId(1)), d.row(NodeId(1)));
        assert_eq!(l.row(NodeId(2)), d.row(NodeId(2)));
        // input untouched
        assert_eq!(d.row(NodeId(0)), &[1.0, 2.0]);
    }

    #[test]
    fn add_leak_on_reservoir_fails() {
        let d = demand(vec![vec![1.0], vec![0.0]], 1);
        assert_eq!(d.add_leak(NodeId(1), 1.0).unwrap_err(), MatrixError::LeakOnReservoir(NodeId(1)));
        assert!(d.add_leak(NodeId(0), -1.0).is_err());
        assert!(d.add_leak(NodeId(5), 1.0).is_err());
    }

    #[test]
    fn reservoir_rows_must_be_zero() {
        assert!(DemandMatrix::new(1, vec![vec![1.0], vec![0.5]]).is_err());
        assert!(DemandMatrix::new(1, vec![vec![f64::NAN], vec![0.0]]).is_err());
    }

    #[test]
    fn head_series_broadcasts_single_column() {
        let h = HeadSeries::per_reservoir(vec![vec![50.0], vec![1.0, 2.0, 3.0]]).unwrap();
        assert!(h.check_steps(3).is_ok());
        assert!(h.check_steps(2).is_err());
        assert_eq!(h.heads_at(2), vec![50.0, 3.0]);
    }

    proptest! {
        #[test]
        fn add_leak_raises_column_sums_by_leak(
            entries in prop::collection::vec(0.0f64..100.0, 15),
            node in 0usize..5,
            leak in 0.0f64..50.0,
        ) {
            let rows: Vec<Vec<f64>> = entries.chunks(3).map(|c| c.to_vec()).collect();
            let d = DemandMatrix::new(5, rows.clone()).unwrap();
            let l = d.add_leak(NodeId(node), leak).unwrap();
            for t in 0..3 {
                let before: f64 = rows.iter().map(|r| r[t]).sum();
                let after: f64 = (0..5).map(|i| l.get(NodeId(i), t)).sum();
                prop_assert!((after - before - leak).abs() <= 1e-9 * (1.0 + before.abs()));
            }
        }

        #[test]
        fn add_leak_is_additive(
            entries in prop::collection::vec(0.0f64..100.0, 6),
            a in 0.0f64..10.0,
            b in 0.0f64..10.0,
        ) {
            let rows: Vec<Vec<f64>> = entries.chunks(2).map(|c| c.to_vec()).collect();
            let d = DemandMatrix::new(3, rows).unwrap();
            let twice = d.add_leak(NodeId(1), a).unwrap().add_leak(NodeId(1), b).unwrap();
            let once = d.add_leak(NodeId(1), a + b).unwrap();
            for t in 0..2 {
                let x = twice.get(NodeId(1), t);
                let y = once.get(NodeId(1), t);
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
                prop_assert_eq!(twice.get(NodeId(0), t), once.get(NodeId(0), t));
            }
        }

        #[test]
        fn nested_restrict_equals_inner(
            outer_mask in prop::collection::vec(any::<bool>(), 10),
            inner_mask in prop::collection::vec(any::<bool>(), 10),
        ) {
            let p = PressureMatrix::new((0..10).map(NodeId).collect(), 2, (0..20).map(f64::from).collect()).unwrap();
            let outer: Vec<NodeId> = (0..10).filter(|&i| outer_mask[i]).map(NodeId).collect();
            let inner: Vec<NodeId> = outer.iter().copied().filter(|n| inner_mask[n.0]).collect();
            let nested = p.restrict(&outer).unwrap().restrict(&inner).unwrap();
            prop_assert_eq!(nested, p.restrict(&inner).unwrap());
        }
    }
}
