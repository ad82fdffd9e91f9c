//! Shortest paths on the directed `k x k` grid.
//!
//! Nodes are numbered row-major, node `0` is the top-left source and node
//! `k^2 - 1` the bottom-right sink. Every node has an edge to its right and
//! to its lower neighbour, so the graph is a DAG and every unit source-sink
//! flow is a monotone lattice path. Edges are ordered with all right edges
//! first (row-major), then all down edges (row-major).

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::polytope::{StandardFormPolytope, DEFAULT_RANK_TOLERANCE};

#[derive(Debug, Clone)]
pub struct GridShortestPath {
    k: usize,
    edges: Vec<(usize, usize)>,
    incidence: DMatrix<f64>,
    b_flow: DVector<f64>,
    polytope: StandardFormPolytope,
}

/// Number of directed edges of the `k x k` grid, `2k(k-1)`.
pub fn grid_edge_count(k: usize) -> usize {
    2 * k * k.saturating_sub(1)
}

/// Builds the grid, its node-edge incidence matrix, and the flow polytope.
///
/// The incidence matrix has rank `k^2 - 1` (its rows sum to zero); the sink
/// row is dropped so the constraint matrix of the polytope has full row rank.
pub fn build_grid(k: usize) -> Result<GridShortestPath> {
    if k < 2 {
        return Err(Error::InvalidSize(format!("grid side must be at least 2, got {k}")));
    }
    let nodes = k * k;
    let mut edges = Vec::with_capacity(grid_edge_count(k));
    for r in 0..k {
        for c in 0..k - 1 {
            edges.push((r * k + c, r * k + c + 1));
        }
    }
    for r in 0..k - 1 {
        for c in 0..k {
            edges.push((r * k + c, (r + 1) * k + c));
        }
    }

    let mut incidence = DMatrix::zeros(nodes, edges.len());
    for (j, &(tail, head)) in edges.iter().enumerate() {
        incidence[(tail, j)] = 1.0;
        incidence[(head, j)] = -1.0;
    }
    let mut b_flow = DVector::zeros(nodes);
    b_flow[0] = 1.0;
    b_flow[nodes - 1] = -1.0;

    let a = incidence.rows(0, nodes - 1).into_owned();
    let b = b_flow.rows(0, nodes - 1).into_owned();
    let polytope = StandardFormPolytope::new(a, b, DEFAULT_RANK_TOLERANCE)?;

    Ok(GridShortestPath {
        k,
        edges,
        incidence,
        b_flow,
        polytope,
    })
}

impl GridShortestPath {
    pub fn side(&self) -> usize {
        self.k
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// `(tail, head)` node pairs in edge order.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Full node-edge incidence matrix, `k^2 x |E|`.
    pub fn incidence(&self) -> &DMatrix<f64> {
        &self.incidence
    }

    /// `+1` at the source, `-1` at the sink.
    pub fn b_flow(&self) -> &DVector<f64> {
        &self.b_flow
    }

    pub fn polytope(&self) -> &StandardFormPolytope {
        &self.polytope
    }

    pub fn source(&self) -> usize {
        0
    }

    pub fn sink(&self) -> usize {
        self.k * self.k - 1
    }

    fn right_edge(&self, r: usize, c: usize) -> usize {
        r * (self.k - 1) + c
    }

    fn down_edge(&self, r: usize, c: usize) -> usize {
        self.k * (self.k - 1) + r * self.k + c
    }

    /// Indicator of a minimum-cost source-sink path.
    ///
    /// The grid is a DAG in row-major order, so a single dynamic-programming
    /// sweep is exact. Ties prefer arriving through a right edge.
    pub fn shortest_path_oracle(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("shortest_path_oracle", self.num_edges(), w.len())?;
        if let Some((index, &value)) = w.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(Error::NegativeWeight { index, value });
        }
        let k = self.k;
        let mut dist = vec![f64::INFINITY; k * k];
        let mut via = vec![usize::MAX; k * k];
        dist[0] = 0.0;
        for r in 0..k {
            for c in 0..k {
                let v = r * k + c;
                if c > 0 {
                    let e = self.right_edge(r, c - 1);
                    let cand = dist[v - 1] + w[e];
                    if cand < dist[v] {
                        dist[v] = cand;
                        via[v] = e;
                    }
                }
                if r > 0 {
                    let e = self.down_edge(r - 1, c);
                    let cand = dist[v - k] + w[e];
                    if cand < dist[v] {
                        dist[v] = cand;
                        via[v] = e;
                    }
                }
            }
        }
        let mut x = DVector::zeros(self.num_edges());
        let mut v = self.sink();
        while v != self.source() {
            let e = via[v];
            x[e] = 1.0;
            v = self.edges[e].0;
        }
        Ok(x)
    }

    /// Follows the larger relaxed edge value out of each node, starting at
    /// the source, until the sink is reached. Ties go right.
    pub fn decode_path_greedy(&self, x_relaxed: &DVector<f64>) -> DVector<f64> {
        let k = self.k;
        let mut x = DVector::zeros(self.num_edges());
        let (mut r, mut c) = (0, 0);
        while (r, c) != (k - 1, k - 1) {
            let right = (c + 1 < k).then(|| self.right_edge(r, c));
            let down = (r + 1 < k).then(|| self.down_edge(r, c));
            let go_right = match (right, down) {
                (Some(er), Some(ed)) => x_relaxed[er] >= x_relaxed[ed],
                (Some(_), None) => true,
                _ => false,
            };
            if go_right {
                x[right.unwrap()] = 1.0;
                c += 1;
            } else {
                x[down.unwrap()] = 1.0;
                r += 1;
            }
        }
        x
    }

    /// Whether `x` is a 0/1 indicator satisfying flow conservation.
    pub fn is_path(&self, x: &DVector<f64>) -> bool {
        x.len() == self.num_edges()
            && x.iter().all(|&v| v == 0.0 || v == 1.0)
            && (&self.incidence * x - &self.b_flow).amax() < 1e-9
    }
}
