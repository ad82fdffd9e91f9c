//! Multi-dimensional 0-1 knapsack.
//!
//! `maximize w^T x  subject to  S x <= c,  x in {0,1}^l` with `S` of size
//! `k x l`. The relaxation is put in standard form with slacks `y` for the
//! capacities and `u` for the upper bounds:
//!
//! ```text
//! [ -S  -I_k  0  ] [x]   [-c]
//! [ I_l  0   I_l ] [y] = [ 1]      (x, y, u) >= 0
//!                  [u]
//! ```
//!
//! so the canonical dimension is `2l + k` with `k + l` equality rows.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::polytope::{StandardFormPolytope, DEFAULT_RANK_TOLERANCE};

#[derive(Debug, Clone)]
pub struct Knapsack {
    sizes: DMatrix<f64>,
    capacities: DVector<f64>,
    polytope: StandardFormPolytope,
}

/// Canonical constraint matrix and right-hand side for `sizes` (`k x l`) and `capacities`.
pub fn canonical_form(sizes: &DMatrix<f64>, capacities: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let (k, l) = sizes.shape();
    let mut a = DMatrix::zeros(k + l, 2 * l + k);
    a.view_mut((0, 0), (k, l)).copy_from(&(-sizes));
    for j in 0..k {
        a[(j, l + j)] = -1.0;
    }
    for i in 0..l {
        a[(k + i, i)] = 1.0;
        a[(k + i, l + k + i)] = 1.0;
    }
    let mut b = DVector::from_element(k + l, 1.0);
    b.rows_mut(0, k).copy_from(&(-capacities));
    (a, b)
}

impl Knapsack {
    pub fn new(sizes: DMatrix<f64>, capacities: DVector<f64>) -> Result<Self> {
        let (k, l) = sizes.shape();
        if k == 0 || l == 0 {
            return Err(Error::InvalidSize(format!(
                "knapsack needs items and constraints, got {k}x{l}"
            )));
        }
        check_len("knapsack capacities", k, capacities.len())?;
        if sizes.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidConfig("knapsack item sizes must be positive".into()));
        }
        if capacities.iter().any(|&c| !(c >= 0.0)) {
            return Err(Error::InvalidConfig("knapsack capacities must be nonnegative".into()));
        }
        let (a, b) = canonical_form(&sizes, &capacities);
        let polytope = StandardFormPolytope::new(a, b, DEFAULT_RANK_TOLERANCE)?;
        Ok(Self {
            sizes,
            capacities,
            polytope,
        })
    }

    pub fn num_items(&self) -> usize {
        self.sizes.ncols()
    }

    pub fn num_constraints(&self) -> usize {
        self.sizes.nrows()
    }

    pub fn sizes(&self) -> &DMatrix<f64> {
        &self.sizes
    }

    pub fn capacities(&self) -> &DVector<f64> {
        &self.capacities
    }

    pub fn polytope(&self) -> &StandardFormPolytope {
        &self.polytope
    }

    pub fn canonical_dim(&self) -> usize {
        2 * self.num_items() + self.num_constraints()
    }

    pub fn is_feasible(&self, x: &DVector<f64>) -> bool {
        (&self.sizes * x - &self.capacities).iter().all(|&v| v <= 1e-9)
    }

    /// Canonical point `(x, c - Sx, 1 - x)` for an item selection.
    pub fn canonical_point(&self, x: &DVector<f64>) -> DVector<f64> {
        let (k, l) = (self.num_constraints(), self.num_items());
        let mut out = DVector::zeros(2 * l + k);
        out.rows_mut(0, l).copy_from(x);
        out.rows_mut(l, k).copy_from(&(&self.capacities - &self.sizes * x));
        out.rows_mut(l + k, l).copy_from(&x.map(|v| 1.0 - v));
        out
    }

    /// Exact maximum-value selection by depth-first branch and bound.
    ///
    /// The bound at each node is the smallest of the fractional (Dantzig)
    /// bounds of the single-constraint relaxations over the undecided items.
    /// Items with nonpositive value are never selected.
    pub fn knapsack_oracle(&self, w: &DVector<f64>) -> Result<DVector<f64>> {
        let l = self.num_items();
        check_len("knapsack_oracle", l, w.len())?;
        let k = self.num_constraints();

        let mut candidates: Vec<usize> = (0..l).filter(|&i| w[i] > 0.0).collect();
        let weight = |i: usize| -> f64 { (0..k).map(|j| self.sizes[(j, i)] / self.capacities[j].max(1e-12)).sum() };
        candidates.sort_by(|&a, &b| (w[b] / weight(b)).total_cmp(&(w[a] / weight(a))).then(a.cmp(&b)));

        // per-constraint orderings by value density, over candidate positions
        let by_density: Vec<Vec<usize>> = (0..k)
            .map(|j| {
                let mut pos: Vec<usize> = (0..candidates.len()).collect();
                pos.sort_by(|&a, &b| {
                    let (ia, ib) = (candidates[a], candidates[b]);
                    (w[ib] / self.sizes[(j, ib)])
                        .total_cmp(&(w[ia] / self.sizes[(j, ia)]))
                        .then(a.cmp(&b))
                });
                pos
            })
            .collect();

        let mut search = Search {
            ks: self,
            w,
            items: &candidates,
            by_density: &by_density,
            chosen: vec![false; candidates.len()],
            best_value: 0.0,
            best: vec![false; candidates.len()],
        };
        let mut remaining = self.capacities.clone();
        search.dfs(0, 0.0, &mut remaining);

        let mut x = DVector::zeros(l);
        for (p, &i) in candidates.iter().enumerate() {
            if search.best[p] {
                x[i] = 1.0;
            }
        }
        Ok(x)
    }

    /// Thresholds the item coordinates of a canonical point at 0.5, then
    /// drops the selected items with the lowest relaxed value until every
    /// capacity holds.
    pub fn decode_knapsack(&self, x_canonical: &DVector<f64>) -> DVector<f64> {
        let l = self.num_items();
        let relaxed = x_canonical.rows(0, l);
        let mut x = DVector::from_fn(l, |i, _| if relaxed[i] >= 0.5 { 1.0 } else { 0.0 });
        let mut selected: Vec<usize> = (0..l).filter(|&i| x[i] == 1.0).collect();
        selected.sort_by(|&a, &b| relaxed[a].total_cmp(&relaxed[b]).then(a.cmp(&b)));
        let mut drop = selected.into_iter();
        while !self.is_feasible(&x) {
            match drop.next() {
                Some(i) => x[i] = 0.0,
                None => break,
            }
        }
        x
    }
}

struct Search<'a> {
    ks: &'a Knapsack,
    w: &'a DVector<f64>,
    items: &'a [usize],
    by_density: &'a [Vec<usize>],
    chosen: Vec<bool>,
    best_value: f64,
    best: Vec<bool>,
}

impl Search<'_> {
    fn bound(&self, depth: usize, remaining: &DVector<f64>) -> f64 {
        let mut tightest = f64::INFINITY;
        for (j, order) in self.by_density.iter().enumerate() {
            let mut cap = remaining[j];
            let mut total = 0.0;
            for &p in order {
                if p < depth {
                    continue;
                }
                let i = self.items[p];
                let s = self.ks.sizes[(j, i)];
                if s <= cap {
                    cap -= s;
                    total += self.w[i];
                } else {
                    total += self.w[i] * cap / s;
                    break;
                }
            }
            tightest = tightest.min(total);
        }
        tightest
    }

    fn dfs(&mut self, depth: usize, value: f64, remaining: &mut DVector<f64>) {
        if value > self.best_value {
            self.best_value = value;
            self.best.copy_from_slice(&self.chosen);
        }
        if depth == self.items.len() {
            return;
        }
        if value + self.bound(depth, remaining) <= self.best_value {
            return;
        }
        let i = self.items[depth];
        let col = self.ks.sizes.column(i);
        if col.iter().zip(remaining.iter()).all(|(s, r)| s <= r) {
            *remaining -= &col;
            self.chosen[depth] = true;
            self.dfs(depth + 1, value + self.w[i], remaining);
            self.chosen[depth] = false;
            *remaining += &col;
        }
        self.dfs(depth + 1, value, remaining);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn brute_force(ks: &Knapsack, w: &DVector<f64>) -> f64 {
        let l = ks.num_items();
        let mut best = 0.0f64;
        for mask in 0u32..(1 << l) {
            let x = DVector::from_fn(l, |i, _| ((mask >> i) & 1) as f64);
            if ks.is_feasible(&x) {
                best = best.max(w.dot(&x));
            }
        }
        best
    }

    #[test]
    fn canonical_dimensions() {
        let ks = Knapsack::new(DMatrix::from_element(2, 5, 1.0), DVector::from_vec(vec![2.0, 3.0])).unwrap();
        let a = ks.polytope().a();
        assert_eq!(a.shape(), (2 + 5, 2 * 5 + 2));
    }

    #[test]
    fn capacity_admits_one_item() {
        let ks = Knapsack::new(
            DMatrix::from_row_slice(1, 3, &[2.0, 2.0, 2.0]),
            DVector::from_vec(vec![2.0]),
        )
        .unwrap();
        let x = ks.knapsack_oracle(&DVector::from_vec(vec![3.0, 2.0, 1.0])).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn everything_fits() {
        let sizes = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 1.0, 1.0, 1.0]);
        let ks = Knapsack::new(sizes, DVector::from_vec(vec![6.0, 3.0])).unwrap();
        let x = ks.knapsack_oracle(&DVector::from_vec(vec![0.1, 0.2, 0.3])).unwrap();
        assert_eq!(x.as_slice(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn oracle_matches_enumeration() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for trial in 0..40 {
            let l = 4 + trial % 12;
            let sizes = DMatrix::from_fn(2, l, |_, _| rng.random_range(0.2..2.0));
            let caps = DVector::from_fn(2, |j, _| 0.4 * sizes.row(j).sum());
            let ks = Knapsack::new(sizes, caps).unwrap();
            let w = DVector::from_fn(l, |_, _| rng.random_range(0.0..2.0));
            let x = ks.knapsack_oracle(&w).unwrap();
            assert!(ks.is_feasible(&x));
            assert!((w.dot(&x) - brute_force(&ks, &w)).abs() < 1e-12, "trial {trial}");
        }
    }

    #[test]
    fn oracle_solution_is_canonically_feasible() {
        let sizes = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 3.0, 1.5, 2.0, 1.0, 1.0, 0.5]);
        let ks = Knapsack::new(sizes, DVector::from_vec(vec![3.5, 2.5])).unwrap();
        let x = ks
            .knapsack_oracle(&DVector::from_vec(vec![1.0, 2.0, 1.5, 0.7]))
            .unwrap();
        let xc = ks.canonical_point(&x);
        let p = ks.polytope();
        assert!((p.a() * &xc - p.b()).amax() < 1e-9);
        assert!(xc.iter().all(|&v| v >= -1e-12));
    }

    #[test]
    fn decode_examples() {
        let sizes = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        let ks = Knapsack::new(sizes, DVector::from_vec(vec![2.0])).unwrap();
        let exact = DVector::from_vec(vec![1.0, 0.0, 1.0]);
        assert_eq!(ks.decode_knapsack(&ks.canonical_point(&exact)), exact);

        let low = DVector::from_element(ks.canonical_dim(), 0.4);
        assert_eq!(ks.decode_knapsack(&low), DVector::zeros(3));

        // all three cross the threshold but only two fit: drop the weakest
        let mut over = DVector::zeros(ks.canonical_dim());
        over.rows_mut(0, 3).copy_from(&DVector::from_vec(vec![0.9, 0.6, 0.8]));
        let x = ks.decode_knapsack(&over);
        assert_eq!(x.as_slice(), &[1.0, 0.0, 1.0]);
        assert!(ks.is_feasible(&x));
    }

    #[test]
    fn invalid_instances() {
        assert!(Knapsack::new(DMatrix::from_element(1, 3, 1.0), DVector::from_vec(vec![1.0, 1.0])).is_err());
        assert!(Knapsack::new(DMatrix::from_element(1, 3, -1.0), DVector::from_vec(vec![1.0])).is_err());
    }
}
