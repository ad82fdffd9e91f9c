//! Benchmark problems: instances, exact oracles, decoders and data generation.

pub mod dataset;
pub mod grid;
pub mod knapsack;

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;

use crate::error::{check_len, Error, Result};
use crate::polytope::StandardFormPolytope;

pub use dataset::{gen_costs_linear, gen_costs_pyepo, gen_dataset, Dataset, DatasetMeta, Record};
pub use grid::{build_grid, grid_edge_count, GridShortestPath};
pub use knapsack::Knapsack;

/// Optimization direction of the original integer program.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DatasetKind {
    GridPyepo,
    GridLinear,
    KnapsackPyepo,
}

impl DatasetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::GridPyepo => "grid_pyepo",
            DatasetKind::GridLinear => "grid_linear",
            DatasetKind::KnapsackPyepo => "knapsack_pyepo",
        }
    }

    pub fn is_grid(self) -> bool {
        !matches!(self, DatasetKind::KnapsackPyepo)
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid_pyepo" => Ok(DatasetKind::GridPyepo),
            "grid_linear" => Ok(DatasetKind::GridLinear),
            "knapsack_pyepo" => Ok(DatasetKind::KnapsackPyepo),
            other => Err(Error::InvalidConfig(format!(
                "unknown dataset kind '{other}' (expected grid_pyepo, grid_linear or knapsack_pyepo)"
            ))),
        }
    }
}

/// A benchmark instance seen through its canonical standard-form relaxation.
///
/// Costs, labels and decoded decisions live in native coordinates (edges for
/// the grid, items for the knapsack). The splitting layer works in canonical
/// coordinates, where the knapsack objective is negated and padded with zeros
/// for the slack variables.
#[derive(Debug, Clone)]
pub enum Problem {
    Grid(GridShortestPath),
    Knapsack(Knapsack),
}

impl Problem {
    pub fn polytope(&self) -> &StandardFormPolytope {
        match self {
            Problem::Grid(g) => g.polytope(),
            Problem::Knapsack(ks) => ks.polytope(),
        }
    }

    /// Length of native cost and solution vectors.
    pub fn cost_dim(&self) -> usize {
        match self {
            Problem::Grid(g) => g.num_edges(),
            Problem::Knapsack(ks) => ks.num_items(),
        }
    }

    pub fn canonical_dim(&self) -> usize {
        self.polytope().dim()
    }

    pub fn sense(&self) -> Sense {
        match self {
            Problem::Grid(_) => Sense::Minimize,
            Problem::Knapsack(_) => Sense::Maximize,
        }
    }

    /// Canonical minimization cost for a native cost vector.
    pub fn canonical_cost(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("canonical_cost", self.cost_dim(), w.len())?;
        Ok(match self {
            Problem::Grid(_) => w.clone(),
            Problem::Knapsack(ks) => {
                let mut c = DVector::zeros(ks.canonical_dim());
                c.rows_mut(0, w.len()).copy_from(&(-w));
                c
            }
        })
    }

    /// Pulls a gradient with respect to the canonical cost back to native costs.
    pub fn cost_grad_to_native(&self, g: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("cost_grad_to_native", self.canonical_dim(), g.len())?;
        Ok(match self {
            Problem::Grid(_) => g.clone(),
            Problem::Knapsack(_) => -g.rows(0, self.cost_dim()).into_owned(),
        })
    }

    /// Native part of a canonical point.
    pub fn native_solution(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("native_solution", self.canonical_dim(), x.len())?;
        Ok(x.rows(0, self.cost_dim()).into_owned())
    }

    /// Zero-pads a gradient with respect to the native solution to canonical length.
    pub fn lift_solution_grad(&self, g: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("lift_solution_grad", self.cost_dim(), g.len())?;
        let mut out = DVector::zeros(self.canonical_dim());
        out.rows_mut(0, g.len()).copy_from(g);
        Ok(out)
    }

    /// Exact optimal binary decision in native coordinates.
    pub fn oracle(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Problem::Grid(g) => g.shortest_path_oracle(w),
            Problem::Knapsack(ks) => ks.knapsack_oracle(w),
        }
    }

    /// Feasible binary decision from a relaxed canonical point.
    pub fn decode(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("decode", self.canonical_dim(), x.len())?;
        Ok(match self {
            Problem::Grid(g) => g.decode_path_greedy(x),
            Problem::Knapsack(ks) => ks.decode_knapsack(x),
        })
    }

    /// Nonnegative objective gap of `x_pred` against `x_star` under the true costs.
    pub fn regret(&self, w: &DVector<f64>, x_pred: &DVector<f64>, x_star: &DVector<f64>) -> Result<f64> {
        check_len("regret cost", self.cost_dim(), w.len())?;
        check_len("regret prediction", self.cost_dim(), x_pred.len())?;
        check_len("regret label", self.cost_dim(), x_star.len())?;
        let gap = w.dot(x_pred) - w.dot(x_star);
        Ok(match self.sense() {
            Sense::Minimize => gap,
            Sense::Maximize => -gap,
        })
    }
}
