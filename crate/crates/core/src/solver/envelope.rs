//! Symmetric positive-definite solve by envelope (profile) Cholesky under a
//! reverse Cuthill-McKee ordering.
//!
//! The symbolic part (ordering and envelope layout) depends only on the
//! sparsity pattern and is computed once per network; each Newton iteration
//! refills the values and refactors.

use std::collections::VecDeque;

#[derive(Debug, Clone)]
pub(crate) struct EnvelopeLayout {
    /// perm[new] = original index
    perm: Vec<usize>,
    /// inv[original] = new index
    inv: Vec<usize>,
    /// First stored column of each row (new numbering).
    first: Vec<usize>,
    /// Start of each row in the packed storage; row i holds columns first[i]..=i.
    offset: Vec<usize>,
    len: usize,
}

/// A matrix with the layout's envelope, ready to be filled.
#[derive(Debug, Clone)]
pub(crate) struct EnvelopeMatrix {
    values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct NotPositiveDefinite {
    /// Original index of the row whose pivot vanished.
    pub row: usize,
}

impl EnvelopeLayout {
    /// `edges` lists off-diagonal nonzeros (i, j), i != j, in original numbering.
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        let perm = reverse_cuthill_mckee(&adj);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (old, list) in adj.iter().enumerate() {
            let i = inv[old];
            for &o in list {
                let j = inv[o];
                if j < i && j < first[i] {
                    first[i] = j;
                }
            }
        }
        let mut offset = Vec::with_capacity(n + 1);
        let mut len = 0;
        for i in 0..n {
            offset.push(len);
            len += i - first[i] + 1;
        }
        offset.push(len);
        EnvelopeLayout {
            perm,
            inv,
            first,
            offset,
            len,
        }
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    pub fn zeros(&self) -> EnvelopeMatrix {
        EnvelopeMatrix {
            values: vec![0.0; self.len],
        }
    }

    /// Packed position of entry (a, b) in original numbering. The entry must
    /// be inside the envelope (diagonal or a declared edge).
    pub fn slot(&self, a: usize, b: usize) -> usize {
        let (i, j) = {
            let (x, y) = (self.inv[a], self.inv[b]);
            if x >= y {
                (x, y)
            } else {
                (y, x)
            }
        };
        debug_assert!(j >= self.first[i]);
        self.offset[i] + (j - self.first[i])
    }

    /// In-place Cholesky factorization A = L Lᵀ.
    pub fn factor(&self, m: &mut EnvelopeMatrix) -> Result<(), NotPositiveDefinite> {
        let v = &mut m.values;
        for i in 0..self.dim() {
            let fi = self.first[i];
            let oi = self.offset[i];
            for j in fi..i {
                let fj = self.first[j];
                let oj = self.offset[j];
                let k0 = fi.max(fj);
                let mut s = v[oi + (j - fi)];
                for k in k0..j {
                    s -= v[oi + (k - fi)] * v[oj + (k - fj)];
                }
                v[oi + (j - fi)] = s / v[oj + (j - fj)];
            }
            let mut d = v[oi + (i - fi)];
            for k in fi..i {
                let l = v[oi + (k - fi)];
                d -= l * l;
            }
            // A vanishing pivot means a junction with no path to a fixed head.
            if !(d > 0.0) || !d.is_finite() {
                return Err(NotPositiveDefinite { row: self.perm[i] });
            }
            v[oi + (i - fi)] = d.sqrt();
        }
        Ok(())
    }

    /// Solves with a factored matrix; `rhs` is in original numbering and is
    /// overwritten with the solution.
    pub fn solve(&self, m: &EnvelopeMatrix, rhs: &mut [f64]) {
        let n = self.dim();
        let v = &m.values;
        let mut y: Vec<f64> = self.perm.iter().map(|&o| rhs[o]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let oi = self.offset[i];
            let mut s = y[i];
            for k in fi..i {
                s -= v[oi + (k - fi)] * y[k];
            }
            y[i] = s / v[oi + (i - fi)];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let oi = self.offset[i];
            y[i] /= v[oi + (i - fi)];
            let yi = y[i];
            for k in fi..i {
                y[k] -= v[oi + (k - fi)] * yi;
            }
        }
        for (new, &old) in self.perm.iter().enumerate() {
            rhs[old] = y[new];
        }
    }
}

impl EnvelopeMatrix {
    pub fn add(&mut self, slot: usize, value: f64) {
        self.values[slot] += value;
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Reverse Cuthill-McKee; each component starts from its lowest-degree node
/// (lowest index on ties), neighbours are visited by ascending (degree, index).
fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));
    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut next: Vec<usize> = adj[u].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_by_key(|&w| (degree[w], w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}
