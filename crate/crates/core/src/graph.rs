//! Undirected graphs in CSR form and the symmetric normalized coupling operator
//! `S = (D + I)^{-1/2} (A + I) (D + I)^{-1/2}`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dense::Matrix;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("edge {position}: node {node} out of range for {num_nodes} nodes")]
    NodeOutOfRange {
        /// Zero-based position of the offending pair in the edge sequence.
        position: usize,
        node: usize,
        num_nodes: usize,
    },
}

/// Immutable undirected graph. Each undirected edge is stored in both directions;
/// self-loops are never stored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    num_nodes: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    degrees: Vec<usize>,
}

impl Graph {
    /// Builds a graph from undirected pairs. Duplicates (in either orientation) are
    /// merged and self-loops dropped.
    pub fn from_edges(edges: &[(usize, usize)], num_nodes: usize) -> Result<Self, GraphError> {
        let mut degrees = vec![0usize; num_nodes];
        for (position, &(u, v)) in edges.iter().enumerate() {
            for node in [u, v] {
                if node >= num_nodes {
                    return Err(GraphError::NodeOutOfRange {
                        position,
                        node,
                        num_nodes,
                    });
                }
            }
            if u != v {
                degrees[u] += 1;
                degrees[v] += 1;
            }
        }

        // counting sort into rows, then sort+dedup each row
        let mut row_offsets = Vec::with_capacity(num_nodes + 1);
        row_offsets.push(0);
        for &d in &degrees {
            row_offsets.push(row_offsets.last().unwrap() + d);
        }
        let mut cursor = row_offsets[..num_nodes].to_vec();
        let mut cols = vec![0usize; *row_offsets.last().unwrap()];
        for &(u, v) in edges {
            if u == v {
                continue;
            }
            cols[cursor[u]] = v;
            cursor[u] += 1;
            cols[cursor[v]] = u;
            cursor[v] += 1;
        }

        let mut col_indices = Vec::with_capacity(cols.len());
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        offsets.push(0);
        for i in 0..num_nodes {
            let row = &mut cols[row_offsets[i]..row_offsets[i + 1]];
            row.sort_unstable();
            let start = col_indices.len();
            for &c in row.iter() {
                if col_indices.len() == start || *col_indices.last().unwrap() != c {
                    col_indices.push(c);
                }
            }
            degrees[i] = col_indices.len() - start;
            offsets.push(col_indices.len());
        }

        Ok(Self {
            num_nodes,
            row_offsets: offsets,
            col_indices,
            degrees,
        })
    }

    pub fn edgeless(num_nodes: usize) -> Self {
        Self {
            num_nodes,
            row_offsets: vec![0; num_nodes + 1],
            col_indices: Vec::new(),
            degrees: vec![0; num_nodes],
        }
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of undirected edges.
    #[inline]
    pub fn num_edges(&self) -> usize {
        self.col_indices.len() / 2
    }

    #[inline]
    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    #[inline]
    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    #[inline]
    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    #[inline]
    pub fn degree(&self, node: usize) -> usize {
        self.degrees[node]
    }

    /// Sorted neighbor list of `node`.
    #[inline]
    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[node]..self.row_offsets[node + 1]]
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`, in row order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes).flat_map(move |u| {
            self.neighbors(u)
                .iter()
                .copied()
                .filter(move |&v| v > u)
                .map(move |v| (u, v))
        })
    }

    pub fn mean_degree(&self) -> f64 {
        if self.num_nodes == 0 {
            0.0
        } else {
            self.col_indices.len() as f64 / self.num_nodes as f64
        }
    }

    /// True if every node is reachable from node 0 (vacuously true for `n <= 1`).
    pub fn is_connected(&self) -> bool {
        if self.num_nodes <= 1 {
            return true;
        }
        let mut seen = vec![false; self.num_nodes];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &v in self.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == self.num_nodes
    }

    /// Two-coloring check via BFS over every component.
    pub fn is_bipartite(&self) -> bool {
        let mut color = vec![u8::MAX; self.num_nodes];
        let mut queue = alloc::collections::VecDeque::new();
        for start in 0..self.num_nodes {
            if color[start] != u8::MAX {
                continue;
            }
            color[start] = 0;
            queue.push_back(start);
            while let Some(u) = queue.pop_front() {
                for &v in self.neighbors(u) {
                    if color[v] == u8::MAX {
                        color[v] = 1 - color[u];
                        queue.push_back(v);
                    } else if color[v] == color[u] {
                        return false;
                    }
                }
            }
        }
        true
    }
}

/// Sparse symmetric operator with `s_ij = 1/sqrt((d_i + 1)(d_j + 1))` on every edge
/// and on the diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingMatrix {
    num_nodes: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl CouplingMatrix {
    pub fn new(graph: &Graph) -> Self {
        let n = graph.num_nodes();
        let nnz = graph.col_indices().len() + n;
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        row_offsets.push(0);
        for i in 0..n {
            let di = graph.degree(i) + 1;
            let neighbors = graph.neighbors(i);
            // neighbors are sorted, so the diagonal slots in at its rank
            let split = neighbors.partition_point(|&j| j < i);
            let weight = |j: usize| 1.0 / libm::sqrt((di * (graph.degree(j) + 1)) as f64);
            for &j in &neighbors[..split] {
                col_indices.push(j);
                values.push(weight(j));
            }
            col_indices.push(i);
            values.push(1.0 / di as f64);
            for &j in &neighbors[split..] {
                col_indices.push(j);
                values.push(weight(j));
            }
            row_offsets.push(col_indices.len());
        }
        Self {
            num_nodes: n,
            row_offsets,
            col_indices,
            values,
        }
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    #[inline]
    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(column, weight)` pairs of row `i`, columns increasing.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_offsets[i]..self.row_offsets[i + 1];
        self.col_indices[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    /// Stored weight at `(i, j)`, zero when absent.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_offsets[i]..self.row_offsets[i + 1];
        match self.col_indices[range.clone()].binary_search(&j) {
            Ok(p) => self.values[range.start + p],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.num_nodes, self.num_nodes);
        for i in 0..self.num_nodes {
            for (j, w) in self.row(i) {
                m[(i, j)] = w;
            }
        }
        m
    }

    /// Sparse-dense product `S · dense`.
    ///
    /// Panics if `dense.rows() != self.num_nodes()`.
    pub fn spmm(&self, dense: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(dense.rows(), dense.cols());
        self.spmm_into(dense, &mut out);
        out
    }

    /// Writes `S · dense` into `out`, which must already have the right shape.
    pub fn spmm_into(&self, dense: &Matrix, out: &mut Matrix) {
        assert_eq!(
            dense.rows(),
            self.num_nodes,
            "spmm: dense operand has {} rows, operator has {} nodes",
            dense.rows(),
            self.num_nodes
        );
        assert_eq!(out.shape(), dense.shape(), "spmm: output shape mismatch");
        for i in 0..self.num_nodes {
            let out_row = out.row_mut(i);
            out_row.iter_mut().for_each(|x| *x = 0.0);
            for p in self.row_offsets[i]..self.row_offsets[i + 1] {
                let w = self.values[p];
                for (o, &x) in out_row.iter_mut().zip(dense.row(self.col_indices[p])) {
                    *o += w * x;
                }
            }
        }
    }

    /// `S^k · dense` via `k` sequential products.
    pub fn power_apply(&self, dense: &Matrix, k: usize) -> Matrix {
        let mut current = dense.clone();
        let mut scratch = Matrix::zeros(dense.rows(), dense.cols());
        for _ in 0..k {
            self.spmm_into(&current, &mut scratch);
            core::mem::swap(&mut current, &mut scratch);
        }
        current
    }
}

pub fn build_graph(edges: &[(usize, usize)], num_nodes: usize) -> Result<Graph, GraphError> {
    Graph::from_edges(edges, num_nodes)
}

pub fn normalized_coupling(graph: &Graph) -> CouplingMatrix {
    CouplingMatrix::new(graph)
}
