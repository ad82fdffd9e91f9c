//! Davis-Yin three-operator splitting for the regularized relaxation
//!
//! ```text
//! minimize  w^T x + (gamma / 2) ||x||^2   subject to  Ax = b, x >= 0
//! ```
//!
//! The solver iterates the fixed-point map
//!
//! ```text
//! T(z) = z - P2(z) + P1((2 - alpha gamma) P2(z) - z - alpha w)
//! ```
//!
//! where `P1` projects onto `{Ax = b}` and `P2` onto the nonnegative orthant.
//! The shadow iterate `x = P2(z)` converges to the minimizer for every
//! `alpha in (0, 2 / gamma)`.
//!
//! Besides the forward solve this module exposes the analytic Jacobian of `T`
//! with respect to `z` and a spectral-norm estimate of it; both are used by
//! the verification suites, never by training.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::polytope::{project_nonneg, relu_jacobian_diag, StandardFormPolytope};

/// Step size, regularization weight, and stopping rule of the splitting solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DysConfig {
    pub alpha: f64,
    pub gamma: f64,
    /// Maximum number of applications of `T`.
    pub max_iter: usize,
    /// Stop once `||z_{k+1} - z_k||_2 <= tol`.
    pub tol: f64,
    /// Retain the per-iteration residuals in [`DysState::residual_history`].
    pub keep_history: bool,
}

impl Default for DysConfig {
    /// The experimental configuration: `alpha = 0.05`, `gamma = 5e-4`,
    /// `K = 1000`, `tol = 0.01`.
    fn default() -> Self {
        Self {
            alpha: 0.05,
            gamma: 5e-4,
            max_iter: 1000,
            tol: 0.01,
            keep_history: false,
        }
    }
}

impl DysConfig {
    pub fn new(alpha: f64, gamma: f64, max_iter: usize, tol: f64) -> Self {
        Self {
            alpha,
            gamma,
            max_iter,
            tol,
            keep_history: false,
        }
    }

    pub fn with_history(mut self) -> Self {
        self.keep_history = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 2.0 / self.gamma) {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie in (0, 2/gamma) = (0, {}), got {}",
                2.0 / self.gamma,
                self.alpha
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "tol must be nonnegative, got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

/// Result of a forward solve.
#[derive(Debug, Clone)]
pub struct DysState {
    /// Final iterate `z_K`.
    pub z: DVector<f64>,
    /// Shadow iterate `max(0, z_K)`.
    pub x: DVector<f64>,
    pub iterations_run: usize,
    /// `||z_K - z_{K-1}||_2`.
    pub final_residual: f64,
    /// `||z_{k+1} - z_k||_2` for `k = 0..iterations_run`, if requested.
    pub residual_history: Option<Vec<f64>>,
}

impl DysState {
    /// `||A x - b||_2`, a diagnostic of how far the shadow iterate is from the affine hull.
    pub fn feasibility_residual(&self, poly: &StandardFormPolytope) -> f64 {
        (poly.a() * &self.x - poly.b()).norm()
    }

    pub fn converged(&self, cfg: &DysConfig) -> bool {
        self.final_residual <= cfg.tol
    }
}

/// Scratch buffers for repeated applications of `T`.
struct Workspace {
    x: DVector<f64>,
    y: DVector<f64>,
    coeffs: DVector<f64>,
}

impl Workspace {
    fn new(n: usize, m: usize) -> Self {
        Self {
            x: DVector::zeros(n),
            y: DVector::zeros(n),
            coeffs: DVector::zeros(m),
        }
    }

    /// Overwrites `z` with `T(z)` and returns `||T(z) - z||_2`.
    fn step(&mut self, poly: &StandardFormPolytope, w: &DVector<f64>, cfg: &DysConfig, z: &mut DVector<f64>) -> f64 {
        let relax = 2.0 - cfg.alpha * cfg.gamma;
        for ((xi, yi), (&zi, &wi)) in self.x.iter_mut().zip(self.y.iter_mut()).zip(z.iter().zip(w.iter())) {
            *xi = zi.max(0.0);
            *yi = relax * *xi - zi - cfg.alpha * wi;
        }
        poly.project_affine_in_place(&mut self.y, &mut self.coeffs);
        // T(z) - z = P1(y) - P2(z)
        let mut sq = 0.0;
        for ((zi, &pi), &xi) in z.iter_mut().zip(self.y.iter()).zip(self.x.iter()) {
            let d = pi - xi;
            *zi += d;
            sq += d * d;
        }
        sq.sqrt()
    }
}

/// One application of the fixed-point map `T` at `z`.
pub fn apply_t(
    poly: &StandardFormPolytope,
    w: &DVector<f64>,
    cfg: &DysConfig,
    z: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = poly.dim();
    check_len("apply_t cost vector", n, w.len())?;
    check_len("apply_t iterate", n, z.len())?;
    let mut ws = Workspace::new(n, poly.num_constraints());
    let mut out = z.clone();
    ws.step(poly, w, cfg, &mut out);
    Ok(out)
}

/// Iterates `z_{k+1} = T(z_k)` from `z0` until the residual drops to `cfg.tol`
/// or `cfg.max_iter` steps have run.
pub fn solve_fixed_point(
    poly: &StandardFormPolytope,
    w: &DVector<f64>,
    cfg: &DysConfig,
    z0: &DVector<f64>,
) -> Result<DysState> {
    cfg.validate()?;
    let n = poly.dim();
    check_len("solve_fixed_point cost vector", n, w.len())?;
    check_len("solve_fixed_point initial iterate", n, z0.len())?;

    let mut ws = Workspace::new(n, poly.num_constraints());
    let mut z = z0.clone();
    let mut history = cfg.keep_history.then(|| Vec::with_capacity(cfg.max_iter.min(1 << 20)));
    let mut residual = f64::INFINITY;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        residual = ws.step(poly, w, cfg, &mut z);
        iterations += 1;
        if !residual.is_finite() {
            return Err(Error::NonFinite {
                iteration: iterations,
                residual,
            });
        }
        if let Some(h) = history.as_mut() {
            h.push(residual);
        }
        if residual <= cfg.tol {
            break;
        }
    }

    Ok(DysState {
        x: project_nonneg(&z),
        z,
        iterations_run: iterations,
        final_residual: residual,
        residual_history: history,
    })
}

/// Convenience wrapper starting from the zero vector.
pub fn solve(poly: &StandardFormPolytope, w: &DVector<f64>, cfg: &DysConfig) -> Result<DysState> {
    solve_fixed_point(poly, w, cfg, &DVector::zeros(poly.dim()))
}

/// Jacobian of `T` with respect to `z`:
///
/// ```text
/// dT/dz = P_{H1^perp} P_{H2,z^perp} + (1 - alpha gamma) P_{H1} P_{H2,z}
/// ```
///
/// with `H1 = Null(A)` and `H2,z = span{e_i : z_i > 0}`.
pub fn jacobian_t_z(poly: &StandardFormPolytope, z: &DVector<f64>, cfg: &DysConfig) -> Result<DMatrix<f64>> {
    let n = poly.dim();
    check_len("jacobian_t_z", n, z.len())?;
    let mask = relu_jacobian_diag(z);
    let v = poly.svd_v();
    let row_space = v * v.transpose();
    let null_space = DMatrix::identity(n, n) - &row_space;
    let scale = 1.0 - cfg.alpha * cfg.gamma;

    // right-multiplying by a diagonal projector selects columns
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        if mask[j] > 0.0 {
            jac.set_column(j, &(null_space.column(j) * scale));
        } else {
            jac.set_column(j, &row_space.column(j));
        }
    }
    Ok(jac)
}

/// Spectral norm of `dT/dz` at `z`, by power iteration on `J^T J`.
pub fn contraction_norm_at(poly: &StandardFormPolytope, z: &DVector<f64>, cfg: &DysConfig) -> Result<f64> {
    let jac = jacobian_t_z(poly, z, cfg)?;
    Ok(spectral_norm(&jac))
}

/// Largest singular value by power iteration (at most 200 sweeps, or until
/// the relative change drops below `1e-10`).
pub fn spectral_norm(mat: &DMatrix<f64>) -> f64 {
    let n = mat.ncols();
    if n == 0 || mat.nrows() == 0 {
        return 0.0;
    }
    // fixed, non-symmetric start vector so the iteration is reproducible
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * ((i * 7 + 3) % 11) as f64);
    v /= v.norm();
    let mut estimate = 0.0;
    for _ in 0..200 {
        let u = mat * &v;
        let mut next = mat.tr_mul(&u);
        let norm = next.norm();
        if norm == 0.0 {
            return 0.0;
        }
        next /= norm;
        let sigma = (mat * &next).norm();
        let done = (sigma - estimate).abs() <= 1e-10 * sigma.max(f64::MIN_POSITIVE);
        estimate = sigma;
        v = next;
        if done {
            break;
        }
    }
    estimate
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polytope::DEFAULT_RANK_TOLERANCE;

    fn simplex2() -> StandardFormPolytope {
        StandardFormPolytope::new(
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_vec(vec![1.0]),
            DEFAULT_RANK_TOLERANCE,
        )
        .unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(DysConfig::default().validate().is_ok());
        assert!(DysConfig::new(0.0, 1.0, 10, 0.0).validate().is_err());
        assert!(DysConfig::new(2.0, 1.0, 10, 0.0).validate().is_err());
        assert!(DysConfig::new(1.0, 0.0, 10, 0.0).validate().is_err());
        assert!(DysConfig::new(1.0, 1.0, 0, 0.0).validate().is_err());
        assert!(DysConfig::new(1.0, 1.0, 1, -1.0).validate().is_err());
    }

    #[test]
    fn uniform_point_is_fixed_for_zero_cost() {
        let p = simplex2();
        let cfg = DysConfig::new(1.0, 1.0, 10, 0.0);
        let z = DVector::from_vec(vec![0.5, 0.5]);
        let tz = apply_t(&p, &DVector::zeros(2), &cfg, &z).unwrap();
        assert!((tz - z).norm() < 1e-14);
    }

    #[test]
    fn negative_iterate_specialization() {
        let p = simplex2();
        let cfg = DysConfig::new(0.7, 0.5, 10, 0.0);
        let w = DVector::from_vec(vec![0.3, -1.2]);
        let z = DVector::from_vec(vec![-1.0, -0.25]);
        let tz = apply_t(&p, &w, &cfg, &z).unwrap();
        let expected = &z + p.project_affine(&(-&z - &w * cfg.alpha)).unwrap();
        assert!((tz - expected).norm() < 1e-14);
    }

    #[test]
    fn apply_t_term_by_term() {
        let p = simplex2();
        let cfg = DysConfig::new(0.4, 2.0, 10, 0.0);
        let w = DVector::from_vec(vec![1.5, -0.5]);
        let z = DVector::from_vec(vec![0.8, -0.3]);
        let x = project_nonneg(&z);
        let inner = &x * (2.0 - cfg.alpha * cfg.gamma) - &z - &w * cfg.alpha;
        let expected = &z - &x + p.project_affine(&inner).unwrap();
        let tz = apply_t(&p, &w, &cfg, &z).unwrap();
        assert!((tz - expected).norm() < 1e-14);
    }

    #[test]
    fn converges_to_vertex_on_segment() {
        // f(t) = t + 0.05 (t^2 + (1-t)^2) is increasing on [0, 1], so x = (0, 1)
        let p = simplex2();
        let cfg = DysConfig::new(1.0, 0.1, 100_000, 1e-12);
        let st = solve(&p, &DVector::from_vec(vec![1.0, 0.0]), &cfg).unwrap();
        assert!(st.x[0].abs() < 1e-8 && (st.x[1] - 1.0).abs() < 1e-8, "{:?}", st.x);
        assert!(st.iterations_run < cfg.max_iter);
        assert!(st.final_residual <= cfg.tol);
    }

    #[test]
    fn zero_cost_gives_min_norm_point() {
        let a = DMatrix::from_row_slice(1, 4, &[1.0, 1.0, 1.0, 1.0]);
        let p = StandardFormPolytope::new(a, DVector::from_vec(vec![1.0]), DEFAULT_RANK_TOLERANCE).unwrap();
        let cfg = DysConfig::new(1.0, 1.0, 10_000, 1e-12);
        let st = solve(&p, &DVector::zeros(4), &cfg).unwrap();
        for v in st.x.iter() {
            assert!((v - 0.25).abs() < 1e-9);
        }
    }

    #[test]
    fn history_is_opt_in() {
        let p = simplex2();
        let w = DVector::from_vec(vec![1.0, 0.0]);
        let cfg = DysConfig::new(1.0, 0.1, 50, 0.0);
        assert!(solve(&p, &w, &cfg).unwrap().residual_history.is_none());
        let st = solve(&p, &w, &cfg.with_history()).unwrap();
        let h = st.residual_history.unwrap();
        assert_eq!(h.len(), st.iterations_run);
        assert_eq!(*h.last().unwrap(), st.final_residual);
    }

    #[test]
    fn max_iter_caps_the_run() {
        let p = simplex2();
        let cfg = DysConfig::new(0.01, 0.1, 3, 0.0);
        let st = solve(&p, &DVector::from_vec(vec![1.0, 0.0]), &cfg).unwrap();
        assert_eq!(st.iterations_run, 3);
        assert_eq!(st.x, project_nonneg(&st.z));
    }

    #[test]
    fn non_finite_cost_is_reported() {
        let p = simplex2();
        let cfg = DysConfig::new(1.0, 0.1, 10, 0.0);
        let err = solve(&p, &DVector::from_vec(vec![f64::NAN, 0.0]), &cfg).unwrap_err();
        assert!(matches!(err, Error::NonFinite { iteration: 1, .. }));
    }

    #[test]
    fn dimension_errors() {
        let p = simplex2();
        let cfg = DysConfig::default();
        assert!(apply_t(&p, &DVector::zeros(3), &cfg, &DVector::zeros(2)).is_err());
        assert!(solve(&p, &DVector::zeros(1), &cfg).is_err());
        assert!(jacobian_t_z(&p, &DVector::zeros(3), &cfg).is_err());
    }

    #[test]
    fn jacobian_special_cases() {
        let a = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 0.0, 1.0, 0.0, 1.0, 1.0, -1.0]);
        let p = StandardFormPolytope::new(a, DVector::from_vec(vec![1.0, 0.5]), DEFAULT_RANK_TOLERANCE).unwrap();
        let z = DVector::from_vec(vec![0.5, -0.2, 1.0, -3.0]);
        let v = p.svd_v();
        let row = v * v.transpose();

        // alpha gamma = 1: only the first term survives
        let cfg = DysConfig::new(2.0, 0.5, 1, 0.0);
        let j = jacobian_t_z(&p, &z, &cfg).unwrap();
        let d_perp = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0, 0.0, 1.0]));
        assert!((j - &row * &d_perp).abs().max() < 1e-14);

        // strictly positive z: (1 - alpha gamma) P_{H1}
        let cfg = DysConfig::new(0.5, 0.5, 1, 0.0);
        let zp = DVector::from_vec(vec![0.5, 0.2, 1.0, 3.0]);
        let j = jacobian_t_z(&p, &zp, &cfg).unwrap();
        let expected = p.null_space_projector() * 0.75;
        assert!((j - expected).abs().max() < 1e-14);
        let norm = contraction_norm_at(&p, &zp, &cfg).unwrap();
        assert!((norm - 0.75).abs() < 1e-9);
    }

    #[test]
    fn contraction_below_one_at_simplex_fixed_point() {
        let p = simplex2();
        let cfg = DysConfig::new(1.0, 0.1, 100_000, 1e-13);
        let st = solve(&p, &DVector::from_vec(vec![1.0, 0.0]), &cfg).unwrap();
        assert!(p.licq_holds(&st.x, 1e-8).unwrap());
        let norm = contraction_norm_at(&p, &st.z, &cfg).unwrap();
        assert!(norm < 1.0, "norm {norm}");
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, -2.0, 1.0]));
        assert!((spectral_norm(&m) - 2.0).abs() < 1e-8);
        assert_eq!(spectral_norm(&DMatrix::zeros(3, 3)), 0.0);
    }
}
