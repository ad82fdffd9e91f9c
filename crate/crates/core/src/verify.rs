//! Property suites for the splitting layer and its backward pass.
//!
//! Every suite draws its instances from a seeded ChaCha8 stream and compares
//! against an independent reference (exhaustive active-set enumeration,
//! finite differences, or an exact combinatorial oracle). The same functions
//! back `dysnet verify` and the acceptance tests.

use std::fmt;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dys::{apply_t, contraction_norm_at, jacobian_t_z, solve, DysConfig};
use crate::error::Result;
use crate::jfb::{grad_wrt_cost, loss_grad_x_l2};
use crate::polytope::{StandardFormPolytope, DEFAULT_LICQ_TOLERANCE, DEFAULT_RANK_TOLERANCE};
use crate::problems::dataset::{gen_dataset, DatasetMeta};
use crate::problems::knapsack::canonical_form;
use crate::problems::{build_grid, grid_edge_count, DatasetKind};

/// Result of one suite.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// What was measured against what threshold.
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<6} {:<28} {:>8.2}s  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.seconds,
            self.detail
        )
    }
}

/// Instance sizes for [`run_all`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Fast,
    Full,
}

/// A random feasible `{Ax = b, x >= 0}` with Gaussian `A` (`m x n`) and
/// `b = A x0` for a nonnegative `x0` with `support` positive entries.
pub fn random_polytope<R: Rng + ?Sized>(
    rng: &mut R,
    m: usize,
    n: usize,
    support: usize,
) -> Result<(StandardFormPolytope, DVector<f64>)> {
    let a = DMatrix::from_fn(m, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut x0 = DVector::zeros(n);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..support.min(n) {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
        x0[idx[i]] = rng.random_range(0.2..1.5);
    }
    let b = &a * &x0;
    Ok((StandardFormPolytope::new(a, b, DEFAULT_RANK_TOLERANCE)?, x0))
}

fn objective(w: &DVector<f64>, gamma: f64, x: &DVector<f64>) -> f64 {
    w.dot(x) + 0.5 * gamma * x.norm_squared()
}

/// Minimizer of `w^T x + (gamma/2)||x||^2` over `{Ax = b, x >= 0}` by
/// enumerating every support set `F`, solving the equality-constrained
/// problem on `F` from its KKT system, and keeping the best nonnegative,
/// feasible candidate. Exponential in `n`; meant for `n <= 12`.
pub fn qp_oracle(a: &DMatrix<f64>, b: &DVector<f64>, w: &DVector<f64>, gamma: f64) -> Option<DVector<f64>> {
    let (m, n) = a.shape();
    assert!(n < 24, "qp_oracle enumerates 2^n supports");
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 1u32..(1 << n) {
        let free: Vec<usize> = (0..n).filter(|&i| (mask >> i) & 1 == 1).collect();
        let af = DMatrix::from_fn(m, free.len(), |r, c| a[(r, free[c])]);
        let wf = DVector::from_fn(free.len(), |i, _| w[free[i]]);
        // gamma x + w + A^T lambda = 0,  A x = b
        let gram = &af * af.transpose();
        let rhs = -(b * gamma) - &af * &wf;
        let Ok(pinv) = gram.pseudo_inverse(1e-12) else { continue };
        let lambda = pinv * rhs;
        let xf = -(&wf + af.transpose() * lambda) / gamma;
        if xf.iter().any(|&v| v < -1e-10) || (&af * &xf - b).amax() > 1e-8 {
            continue;
        }
        let mut x = DVector::zeros(n);
        for (k, &i) in free.iter().enumerate() {
            x[i] = xf[k].max(0.0);
        }
        let f = objective(w, gamma, &x);
        if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
            best = Some((f, x));
        }
    }
    if best.is_none() && (b.amax() <= 1e-12) {
        return Some(DVector::zeros(n));
    }
    best.map(|(_, x)| x)
}

fn outcome(name: &'static str, passed: bool, detail: String, start: Instant) -> CheckOutcome {
    CheckOutcome {
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Tight solves agree with [`qp_oracle`] in the max norm.
pub fn check_qp_equivalence(instances: usize, seed: u64) -> Result<CheckOutcome> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut matched = 0;
    for t in 0..instances {
        let n = rng.random_range(3..=12);
        let m = rng.random_range(1..=5.min(n - 1));
        let support = rng.random_range(m..=n);
        let (poly, _) = random_polytope(&mut rng, m, n, support)?;
        let w = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let gamma = if t % 2 == 0 { 0.1 } else { 1.0 };
        let cfg = DysConfig::new(1.0 / gamma, gamma, 100_000, 1e-9);
        let st = solve(&poly, &w, &cfg)?;
        let Some(reference) = qp_oracle(poly.a(), poly.b(), &w, gamma) else {
            continue;
        };
        let err = (&st.x - reference).amax();
        worst = worst.max(err);
        matched += usize::from(err <= 1e-4);
    }
    Ok(outcome(
        "qp_oracle_equivalence",
        matched == instances,
        format!("{matched}/{instances} within 1e-4 (worst {worst:.2e})"),
        start,
    ))
}

/// `k ||z_{k+1} - z_k||^2` at `k = 100, 1000` stays within 10x its value at `k = 10`.
pub fn check_convergence_rate(instances: usize, seed: u64) -> Result<CheckOutcome> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ok = 0;
    let mut worst_ratio = 0.0f64;
    for t in 0..instances {
        let n = rng.random_range(3..=12);
        let m = rng.random_range(1..=5.min(n - 1));
        let support = rng.random_range(m..=n);
        let (poly, _) = random_polytope(&mut rng, m, n, support)?;
        let w = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let gamma = if t % 2 == 0 { 0.1 } else { 1.0 };
        let cfg = DysConfig::new(1.0 / gamma, gamma, 1001, 0.0).with_history();
        let st = solve(&poly, &w, &cfg)?;
        let h = st.residual_history.unwrap_or_default();
        let scaled = |k: usize| h.get(k).map_or(0.0, |r| k as f64 * r * r);
        let base = scaled(10);
        let peak = scaled(100).max(scaled(1000));
        let ratio = if base > 0.0 {
            peak / base
        } else if peak == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        worst_ratio = worst_ratio.max(ratio);
        ok += usize::from(ratio <= 10.0);
    }
    Ok(outcome(
        "convergence_rate",
        ok == instances,
        format!("{ok}/{instances} with k*r_k^2 <= 10x its k=10 value (worst ratio {worst_ratio:.3})"),
        start,
    ))
}

/// The analytic Jacobian of `T` matches central differences at points with
/// every coordinate at least `1e-3` away from zero.
pub fn check_jacobian(points: usize, seed: u64) -> Result<CheckOutcome> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..points {
        let n = rng.random_range(3..=12);
        let m = rng.random_range(1..=5.min(n - 1));
        let (poly, _) = random_polytope(&mut rng, m, n, n)?;
        let w = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let gamma = rng.random_range(0.05..2.0);
        let cfg = DysConfig::new(rng.random_range(0.05..1.95) / gamma, gamma, 1, 0.0);
        let z = DVector::from_fn(n, |_, _| {
            let mag = rng.random_range(1e-3..2.0);
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        });
        let jac = jacobian_t_z(&poly, &z, &cfg)?;
        let mut probe = z.clone();
        for j in 0..n {
            probe[j] = z[j] + h;
            let up = apply_t(&poly, &w, &cfg, &probe)?;
            probe[j] = z[j] - h;
            let dn = apply_t(&poly, &w, &cfg, &probe)?;
            probe[j] = z[j];
            let fd = (up - dn) / (2.0 * h);
            worst = worst.max((fd - jac.column(j)).amax());
        }
    }
    Ok(outcome(
        "jacobian_finite_difference",
        worst < 1e-6,
        format!("{points} points, max abs error {worst:.2e} (< 1e-6)"),
        start,
    ))
}

/// At fixed points where LICQ holds, the spectral norm of `dT/dz` is below `1 - 1e-6`.
pub fn check_contraction(instances: usize, seed: u64) -> Result<CheckOutcome> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut qualified = 0;
    let mut contracting = 0;
    let mut worst = 0.0f64;
    let mut attempts = 0;
    while qualified < instances && attempts < 50 * instances {
        attempts += 1;
        let n = rng.random_range(3..=12);
        let m = rng.random_range(1..=5.min(n - 1));
        let support = rng.random_range(m..=n);
        let (poly, _) = random_polytope(&mut rng, m, n, support)?;
        let w = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let gamma = [0.1, 0.5, 1.0][attempts % 3];
        let alpha = rng.random_range(0.05..1.95) / gamma;
        let cfg = DysConfig::new(alpha, gamma, 100_000, 1e-10);
        let st = solve(&poly, &w, &cfg)?;
        if !poly.licq_holds(&st.x, DEFAULT_LICQ_TOLERANCE)? {
            continue;
        }
        qualified += 1;
        let norm = contraction_norm_at(&poly, &st.z, &cfg)?;
        worst = worst.max(norm);
        contracting += usize::from(norm < 1.0 - 1e-6);
    }
    Ok(outcome(
        "contraction_under_licq",
        qualified == instances && contracting == instances,
        format!("{contracting}/{qualified} LICQ fixed points with ||dT/dz|| < 1 - 1e-6 (max {worst:.6})"),
        start,
    ))
}

/// Monte-Carlo check that the JFB parameter gradient of a tiny affine
/// pipeline `d -> W d + c -> layer -> ||x - x*||^2` has positive inner
/// product with the finite-difference gradient. Trials whose fixed point
/// fails LICQ or whose Jacobian norm is not below one are excluded.
pub fn check_descent(trials: usize, seed: u64) -> Result<CheckOutcome> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut qualified = 0;
    let mut positive = 0;
    let mut flat = 0;
    let fd_h = 1e-6;
    for _ in 0..trials {
        let n = rng.random_range(3..=8);
        let m = rng.random_range(1..=3.min(n - 1));
        // x0 supported on m coordinates is a vertex of the polytope
        let (poly, x_star) = random_polytope(&mut rng, m, n, m)?;
        let p = 3;
        let weights = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let bias = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let d = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let gamma = 1.0;
        let cfg = DysConfig::new(1.0, gamma, 200_000, 1e-11);

        let predict = |wm: &DMatrix<f64>, c: &DVector<f64>| -> DVector<f64> { wm * &d + c };
        let loss = |wm: &DMatrix<f64>, c: &DVector<f64>| -> Result<f64> {
            let st = solve(&poly, &predict(wm, c), &cfg)?;
            Ok((&st.x - &x_star).norm_squared())
        };

        let st = solve(&poly, &predict(&weights, &bias), &cfg)?;
        if !poly.licq_holds(&st.x, DEFAULT_LICQ_TOLERANCE)? || contraction_norm_at(&poly, &st.z, &cfg)? >= 1.0 {
            continue;
        }
        qualified += 1;

        let g_w = grad_wrt_cost(&poly, &st.z, &loss_grad_x_l2(&st.x, &x_star)?, cfg.alpha)?.grad_w;
        // parameters: W (n x p) then c (n); the cost map is affine
        let mut inner = 0.0;
        let mut fd_norm_sq = 0.0;
        let mut probe_w = weights.clone();
        for i in 0..n {
            for j in 0..p {
                probe_w[(i, j)] = weights[(i, j)] + fd_h;
                let up = loss(&probe_w, &bias)?;
                probe_w[(i, j)] = weights[(i, j)] - fd_h;
                let dn = loss(&probe_w, &bias)?;
                probe_w[(i, j)] = weights[(i, j)];
                let fd = (up - dn) / (2.0 * fd_h);
                fd_norm_sq += fd * fd;
                inner += (g_w[i] * d[j]) * fd;
            }
        }
        let mut probe_c = bias.clone();
        for i in 0..n {
            probe_c[i] = bias[i] + fd_h;
            let up = loss(&weights, &probe_c)?;
            probe_c[i] = bias[i] - fd_h;
            let dn = loss(&weights, &probe_c)?;
            probe_c[i] = bias[i];
            let fd = (up - dn) / (2.0 * fd_h);
            fd_norm_sq += fd * fd;
            inner += g_w[i] * fd;
        }
        positive += usize::from(inner > 0.0);
        flat += usize::from(inner <= 0.0 && fd_norm_sq.sqrt() <= 1e-8);
    }
    let rate = if qualified > 0 {
        positive as f64 / qualified as f64
    } else {
        0.0
    };
    Ok(outcome(
        "descent_direction",
        qualified > 0 && rate >= 0.95,
        format!(
            "{positive}/{qualified} qualifying trials positive ({:.1}% >= 95%); {flat} of the rest have zero finite-difference gradient",
            100.0 * rate
        ),
        start,
    ))
}

/// Largest deviation `||x_gamma - x_oracle||_inf` per cost vector for each
/// `gamma` in `gammas`, on the 5x5 shortest-path polytope.
pub fn gamma_sweep_errors(cost_vectors: usize, gammas: &[f64], seed: u64) -> Result<Vec<Vec<f64>>> {
    let meta = DatasetMeta::grid(DatasetKind::GridPyepo, 5, seed);
    let ds = gen_dataset(&meta, cost_vectors)?;
    let grid = build_grid(5)?;
    let mut out = Vec::with_capacity(cost_vectors);
    for r in &ds.records {
        let mut row = Vec::with_capacity(gammas.len());
        for &gamma in gammas {
            let cfg = DysConfig::new(1.0 / gamma, gamma, 1_000_000, 1e-11);
            let st = solve(grid.polytope(), &r.w, &cfg)?;
            row.push((&st.x - &r.x).amax());
        }
        out.push(row);
    }
    Ok(out)
}

/// As `gamma` shrinks the relaxed solution approaches the oracle path.
pub fn check_gamma_sweep(cost_vectors: usize, seed: u64) -> Result<CheckOutcome> {
    let start = Instant::now();
    let gammas = [1e-1, 1e-2, 1e-3, 1e-4];
    let errors = gamma_sweep_errors(cost_vectors, &gammas, seed)?;
    let mut ok = 0;
    let mut worst_final = 0.0f64;
    for row in &errors {
        let monotone = row.windows(2).all(|p| p[1] <= p[0] + 1e-6);
        let last = *row.last().unwrap();
        worst_final = worst_final.max(last);
        ok += usize::from(monotone && last < 0.05);
    }
    Ok(outcome(
        "gamma_sweep_vertex",
        ok == cost_vectors,
        format!("{ok}/{cost_vectors} monotone with final error < 0.05 (worst final {worst_final:.2e})"),
        start,
    ))
}

/// Edge counts of the grid and the canonical knapsack dimensions.
pub fn check_structure() -> CheckOutcome {
    let start = Instant::now();
    let mut failures = Vec::new();
    for (k, expected) in [(5, 40), (10, 180), (20, 760), (30, 1740), (50, 4900)] {
        let got = grid_edge_count(k);
        if got != expected {
            failures.push(format!("grid {k}: {got} edges"));
        }
    }
    for &(items, cons) in &[(20usize, 2usize), (7, 3)] {
        let (a, b) = canonical_form(
            &DMatrix::from_element(cons, items, 1.0),
            &DVector::from_element(cons, 1.0),
        );
        if a.shape() != (cons + items, 2 * items + cons) || b.len() != cons + items {
            failures.push(format!("knapsack {items}x{cons}: {:?}", a.shape()));
        }
    }
    let passed = failures.is_empty();
    outcome(
        "structural_constants",
        passed,
        if passed {
            "grid edge counts and knapsack canonical shapes".into()
        } else {
            failures.join("; ")
        },
        start,
    )
}

/// Runs every suite at `level`.
pub fn run_all(level: Level, seed: u64) -> Result<Vec<CheckOutcome>> {
    let (qp, rate, jac, contr, desc) = match level {
        Level::Fast => (15, 8, 30, 15, 40),
        Level::Full => (50, 20, 100, 50, 200),
    };
    let mut out = vec![
        check_structure(),
        check_qp_equivalence(qp, seed)?,
        check_convergence_rate(rate, seed.wrapping_add(1))?,
        check_jacobian(jac, seed.wrapping_add(2))?,
        check_contraction(contr, seed.wrapping_add(3))?,
        check_descent(desc, seed.wrapping_add(4))?,
    ];
    if level == Level::Full {
        out.push(check_gamma_sweep(10, seed.wrapping_add(5))?);
    }
    Ok(out)
}
