//! Standard-form polytopes `{x : Ax = b, x >= 0}` and the projection
//! operators used by the splitting solver.
//!
//! The feasible set is split as the intersection of the affine subspace
//! `C1 = {x : Ax = b}` and the nonnegative orthant `C2 = {x : x >= 0}`.
//! Both projections have closed forms once a compact SVD `A = U diag(sigma) V^T`
//! is available, and that SVD is computed exactly once, in
//! [`StandardFormPolytope::new`].

use faer::Mat;
use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};

/// Relative threshold on singular values below which `A` is treated as rank deficient.
pub const DEFAULT_RANK_TOLERANCE: f64 = 1e-10;

/// Relative singular-value threshold for the LICQ rank test.
pub const DEFAULT_LICQ_TOLERANCE: f64 = 1e-8;

/// Default zero test for the active set, on the scale of `x`.
pub const DEFAULT_ACTIVE_TOLERANCE: f64 = 1e-6;

/// The polytope `{x in R^n : Ax = b, x >= 0}` with `A` of full row rank,
/// stored together with the compact SVD factors of `A`.
#[derive(Debug, Clone)]
pub struct StandardFormPolytope {
    a: DMatrix<f64>,
    b: DVector<f64>,
    svd_u: DMatrix<f64>,
    svd_sigma: DVector<f64>,
    svd_v: DMatrix<f64>,
    rank_tolerance: f64,
    /// `A^+ b`, the minimum-norm point of the affine hull.
    min_norm_point: DVector<f64>,
}

impl StandardFormPolytope {
    /// Builds the polytope and computes the compact SVD of `a`.
    ///
    /// Requires `m < n` and full row rank, judged by every singular value
    /// exceeding `rank_tolerance * sigma_max`.
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, rank_tolerance: f64) -> Result<Self> {
        let (m, n) = a.shape();
        if m == 0 || m >= n {
            return Err(Error::InvalidSize(format!(
                "standard form needs 0 < m < n, got a {m}x{n} constraint matrix"
            )));
        }
        check_len("polytope right-hand side", m, b.len())?;

        let af = Mat::<f64>::from_fn(m, n, |i, j| a[(i, j)]);
        let svd = af.thin_svd().map_err(|_| Error::SvdFailed)?;
        let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());

        let sigma = DVector::from_fn(m, |i, _| s[i]);
        let sigma_max = sigma.max();
        let threshold = rank_tolerance * sigma_max;
        let sigma_min = sigma.min();
        if !(sigma_min > threshold) {
            return Err(Error::RankDeficient {
                sigma: sigma_min,
                threshold,
            });
        }

        let svd_u = DMatrix::from_fn(m, m, |i, j| u[(i, j)]);
        let svd_v = DMatrix::from_fn(n, m, |i, j| v[(i, j)]);

        let mut poly = Self {
            a,
            b,
            svd_u,
            svd_sigma: sigma,
            svd_v,
            rank_tolerance,
            min_norm_point: DVector::zeros(n),
        };
        poly.min_norm_point = poly.apply_pseudo_inverse(&poly.b);
        Ok(poly)
    }

    /// Number of equality constraints `m`.
    pub fn num_constraints(&self) -> usize {
        self.a.nrows()
    }

    /// Ambient dimension `n`.
    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn svd_u(&self) -> &DMatrix<f64> {
        &self.svd_u
    }

    pub fn svd_sigma(&self) -> &DVector<f64> {
        &self.svd_sigma
    }

    /// Right singular vectors, `n x m` with orthonormal columns spanning the row space of `A`.
    pub fn svd_v(&self) -> &DMatrix<f64> {
        &self.svd_v
    }

    pub fn rank_tolerance(&self) -> f64 {
        self.rank_tolerance
    }

    /// The minimum-norm solution of `Ax = b`.
    pub fn min_norm_point(&self) -> &DVector<f64> {
        &self.min_norm_point
    }

    /// Applies `A^+ = V diag(sigma)^-1 U^T` to an `m`-vector without forming `A^+`.
    pub fn apply_pseudo_inverse(&self, r: &DVector<f64>) -> DVector<f64> {
        let mut coeffs = self.svd_u.tr_mul(r);
        coeffs.component_div_assign(&self.svd_sigma);
        &self.svd_v * coeffs
    }

    /// Euclidean projection onto the affine hull `{x : Ax = b}`:
    /// `z - A^+(Az - b)`.
    pub fn project_affine(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("project_affine", self.dim(), z.len())?;
        let mut y = z.clone();
        let mut coeffs = DVector::zeros(self.num_constraints());
        self.project_affine_in_place(&mut y, &mut coeffs);
        Ok(y)
    }

    /// In-place affine projection used by the solver's inner loop.
    ///
    /// Uses `A^+ A = V V^T`, so `z - A^+(Az - b) = z - V (V^T z) + A^+ b`.
    /// `coeffs` is scratch space of length `m`.
    pub(crate) fn project_affine_in_place(&self, y: &mut DVector<f64>, coeffs: &mut DVector<f64>) {
        self.project_null_space_in_place(y, coeffs);
        *y += &self.min_norm_point;
    }

    /// Orthogonal projection onto `Null(A)`: `v - V (V^T v)`.
    ///
    /// This is the Jacobian of [`Self::project_affine`] at every point.
    pub fn project_null_space(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("project_null_space", self.dim(), v.len())?;
        let mut r = v.clone();
        let mut coeffs = DVector::zeros(self.num_constraints());
        self.project_null_space_in_place(&mut r, &mut coeffs);
        Ok(r)
    }

    pub(crate) fn project_null_space_in_place(&self, v: &mut DVector<f64>, coeffs: &mut DVector<f64>) {
        coeffs.gemv_tr(1.0, &self.svd_v, v, 0.0);
        v.gemv(-1.0, &self.svd_v, coeffs, 1.0);
    }

    /// Dense `n x n` matrix of the null-space projector `I - V V^T`.
    pub fn null_space_projector(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::identity(n, n) - &self.svd_v * self.svd_v.transpose()
    }

    /// Checks the linear independence constraint qualification at `x`:
    /// the rows of `A` stacked with the unit vectors of the active
    /// nonnegativity constraints must have full row rank.
    pub fn licq_holds(&self, x: &DVector<f64>, tolerance: f64) -> Result<bool> {
        self.licq_holds_with(x, DEFAULT_ACTIVE_TOLERANCE, tolerance)
    }

    /// [`Self::licq_holds`] with an explicit zero tolerance for the active set.
    pub fn licq_holds_with(&self, x: &DVector<f64>, active_tolerance: f64, rank_tolerance: f64) -> Result<bool> {
        check_len("licq_holds", self.dim(), x.len())?;
        let active = active_set(x, active_tolerance);
        let (m, n) = self.a.shape();
        let rows = m + active.len();
        if rows > n {
            return Ok(false);
        }
        let mut stacked = DMatrix::zeros(rows, n);
        stacked.rows_mut(0, m).copy_from(&self.a);
        for (r, &i) in active.indices().iter().enumerate() {
            stacked[(m + r, i)] = 1.0;
        }
        let sv = stacked.singular_values();
        let max = sv.max();
        let min = sv.min();
        Ok(max > 0.0 && min > rank_tolerance * max)
    }
}

/// Projection onto the nonnegative orthant, `max(0, z)` componentwise.
pub fn project_nonneg(z: &DVector<f64>) -> DVector<f64> {
    z.map(|v| v.max(0.0))
}

/// Diagonal of the selected Clarke-Jacobian element of [`project_nonneg`]:
/// 1 where `z_i > 0`, 0 otherwise (including `z_i = 0`).
pub fn relu_jacobian_diag(z: &DVector<f64>) -> DVector<f64> {
    z.map(|v| if v > 0.0 { 1.0 } else { 0.0 })
}

/// Indices of coordinates considered to sit on their nonnegativity bound.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSet {
    indices: Vec<usize>,
    tolerance: f64,
}

impl ActiveSet {
    /// Zero-based indices, in increasing order.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }
}

/// Coordinates `i` with `|x_i| <= tolerance`.
pub fn active_set(x: &DVector<f64>, tolerance: f64) -> ActiveSet {
    let indices = x
        .iter()
        .enumerate()
        .filter(|(_, v)| v.abs() <= tolerance)
        .map(|(i, _)| i)
        .collect();
    ActiveSet { indices, tolerance }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_vec_close(a: &DVector<f64>, b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    fn poly(rows: &[&[f64]], b: &[f64]) -> Result<StandardFormPolytope> {
        let m = rows.len();
        let n = rows[0].len();
        let a = DMatrix::from_fn(m, n, |i, j| rows[i][j]);
        StandardFormPolytope::new(a, DVector::from_column_slice(b), DEFAULT_RANK_TOLERANCE)
    }

    #[test]
    fn single_row_svd_by_hand() {
        let p = poly(&[&[1.0, 1.0]], &[1.0]).unwrap();
        assert!((p.svd_sigma()[0] - 2f64.sqrt()).abs() < 1e-12);
        let v = p.svd_v().column(0);
        // singular vectors are defined up to sign
        let s = v[0].signum();
        assert!((s * v[0] - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((s * v[1] - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn square_matrix_is_rejected() {
        let err = poly(&[&[1.0, 0.0], &[0.0, 1.0]], &[1.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::InvalidSize(_)));
    }

    #[test]
    fn duplicated_row_is_rank_deficient() {
        let err = poly(&[&[1.0, 1.0, 0.0], &[1.0, 1.0, 0.0]], &[1.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { .. }));
    }

    #[test]
    fn rhs_length_is_checked() {
        let err = poly(&[&[1.0, 1.0, 0.0]], &[1.0, 2.0]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn affine_projection_examples() {
        let p = poly(&[&[1.0, 1.0]], &[1.0]).unwrap();
        let y = p.project_affine(&DVector::from_vec(vec![0.0, 0.0])).unwrap();
        assert_vec_close(&y, &[0.5, 0.5], 1e-12);
        let y = p.project_affine(&DVector::from_vec(vec![0.5, 0.5])).unwrap();
        assert_vec_close(&y, &[0.5, 0.5], 1e-12);
    }

    #[test]
    fn affine_projection_onto_line_matches_grid_search() {
        // nearest point of {x1 + 2 x2 = 2} to (1, 1); brute force along the line
        let p = poly(&[&[1.0, 2.0]], &[2.0]).unwrap();
        let y = p.project_affine(&DVector::from_vec(vec![1.0, 1.0])).unwrap();
        let mut best = (f64::INFINITY, 0.0);
        let steps = 400_000;
        for i in 0..=steps {
            let x1 = -2.0 + 6.0 * i as f64 / steps as f64;
            let x2 = (2.0 - x1) / 2.0;
            let d = (x1 - 1.0).powi(2) + (x2 - 1.0).powi(2);
            if d < best.0 {
                best = (d, x1);
            }
        }
        let x1 = best.1;
        assert_vec_close(&y, &[x1, (2.0 - x1) / 2.0], 1e-4);
        assert_vec_close(&y, &[0.8, 0.6], 1e-12);
    }

    #[test]
    fn affine_projection_rejects_wrong_length() {
        let p = poly(&[&[1.0, 1.0]], &[1.0]).unwrap();
        assert!(p.project_affine(&DVector::zeros(3)).is_err());
        assert!(p.project_null_space(&DVector::zeros(1)).is_err());
    }

    #[test]
    fn nonneg_projection() {
        let z = DVector::from_vec(vec![-1.0, 2.0, 0.0]);
        assert_eq!(project_nonneg(&z).as_slice(), &[0.0, 2.0, 0.0]);
        let pos = DVector::from_vec(vec![0.1, 3.0]);
        assert_eq!(project_nonneg(&pos), pos);
        let neg = DVector::from_vec(vec![-0.1, -3.0]);
        assert_eq!(project_nonneg(&neg), DVector::zeros(2));
    }

    #[test]
    fn null_space_examples() {
        let p = poly(&[&[1.0, 1.0]], &[1.0]).unwrap();
        let r = p.project_null_space(&DVector::from_vec(vec![1.0, -1.0])).unwrap();
        assert_vec_close(&r, &[1.0, -1.0], 1e-12);
        let r = p.project_null_space(&DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert_vec_close(&r, &[0.0, 0.0], 1e-12);
    }

    #[test]
    fn relu_jacobian_tie_break() {
        let z = DVector::from_vec(vec![-1.0, 2.0, 0.0]);
        assert_eq!(relu_jacobian_diag(&z).as_slice(), &[0.0, 1.0, 0.0]);
        assert_eq!(
            relu_jacobian_diag(&DVector::from_vec(vec![0.3, 1.0])).as_slice(),
            &[1.0, 1.0]
        );
        assert_eq!(relu_jacobian_diag(&DVector::zeros(3)).as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn active_set_examples() {
        let s = active_set(&DVector::from_vec(vec![0.0, 0.5, 1e-9]), 1e-6);
        assert_eq!(s.indices(), &[0, 2]);
        assert!(active_set(&DVector::from_vec(vec![0.1, 0.5]), 1e-6).is_empty());
        assert_eq!(active_set(&DVector::zeros(3), 1e-6).indices(), &[0, 1, 2]);
    }

    #[test]
    fn licq_examples() {
        let p = poly(&[&[1.0, 1.0]], &[1.0]).unwrap();
        let t = DEFAULT_LICQ_TOLERANCE;
        assert!(p.licq_holds(&DVector::from_vec(vec![0.5, 0.5]), t).unwrap());
        assert!(p.licq_holds(&DVector::from_vec(vec![0.0, 1.0]), t).unwrap());
        // both coordinates active: three vectors in R^2
        assert!(!p.licq_holds(&DVector::from_vec(vec![0.0, 0.0]), t).unwrap());

        let q = poly(&[&[1.0, 0.0]], &[0.5]).unwrap();
        assert!(q.licq_holds(&DVector::from_vec(vec![0.5, 0.0]), t).unwrap());
        assert!(!q.licq_holds(&DVector::from_vec(vec![0.0, 0.5]), t).unwrap());
    }
}
