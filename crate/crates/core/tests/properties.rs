use dysnet::jfb::grad_wrt_cost;
use dysnet::polytope::{active_set, project_nonneg, DEFAULT_ACTIVE_TOLERANCE};
use dysnet::predictor::{forward, init_params, MlpConfig};
use dysnet::verify::random_polytope;
use dysnet::{solve, DysConfig, StandardFormPolytope};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn instance(seed: u64, m: usize, extra: usize) -> (StandardFormPolytope, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_polytope(&mut rng, m, m + extra, m + extra / 2).unwrap()
}

fn vector(values: &[f64], n: usize) -> DVector<f64> {
    DVector::from_fn(n, |i, _| {
        values[i % values.len()] * (1.0 + 0.1 * (i / values.len()) as f64)
    })
}

fn rank_by_elimination(mut a: DMatrix<f64>, tol: f64) -> usize {
    let (rows, cols) = a.shape();
    let scale = a.amax().max(1.0);
    let mut rank = 0;
    for c in 0..cols {
        if rank == rows {
            break;
        }
        let (pivot, value) = (rank..rows)
            .map(|r| (r, a[(r, c)].abs()))
            .fold((rank, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if value <= tol * scale {
            continue;
        }
        a.swap_rows(rank, pivot);
        for r in rank + 1..rows {
            let f = a[(r, c)] / a[(rank, c)];
            for k in c..cols {
                a[(r, k)] -= f * a[(rank, k)];
            }
        }
        rank += 1;
    }
    rank
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn affine_projection_is_idempotent_and_feasible(
        seed in any::<u64>(), m in 1usize..5, extra in 1usize..6,
        z in prop::collection::vec(-10.0f64..10.0, 1..12),
    ) {
        let (poly, _) = instance(seed, m, extra);
        let z = vector(&z, poly.dim());
        let p = poly.project_affine(&z).unwrap();
        let pp = poly.project_affine(&p).unwrap();
        prop_assert!((&p - &pp).amax() < 1e-8);
        prop_assert!((poly.a() * &p - poly.b()).amax() < 1e-8 * (1.0 + z.amax()));
    }

    #[test]
    fn projections_are_nonexpansive(
        seed in any::<u64>(), m in 1usize..5, extra in 1usize..6,
        u in prop::collection::vec(-10.0f64..10.0, 1..12),
        v in prop::collection::vec(-10.0f64..10.0, 1..12),
    ) {
        let (poly, _) = instance(seed, m, extra);
        let (u, v) = (vector(&u, poly.dim()), vector(&v, poly.dim()));
        let d = (&u - &v).norm();
        let affine = (poly.project_affine(&u).unwrap() - poly.project_affine(&v).unwrap()).norm();
        let orthant = (project_nonneg(&u) - project_nonneg(&v)).norm();
        prop_assert!(affine <= d * (1.0 + 1e-10) + 1e-12);
        prop_assert!(orthant <= d * (1.0 + 1e-12));
    }

    #[test]
    fn affine_projection_derivative_is_null_space_projector(
        seed in any::<u64>(), m in 1usize..5, extra in 1usize..6,
        z in prop::collection::vec(-5.0f64..5.0, 1..12),
        dir in prop::collection::vec(-1.0f64..1.0, 1..12),
    ) {
        let (poly, _) = instance(seed, m, extra);
        let (z, dir) = (vector(&z, poly.dim()), vector(&dir, poly.dim()));
        let h = 1e-3;
        let fd = (poly.project_affine(&(&z + &dir * h)).unwrap() - poly.project_affine(&(&z - &dir * h)).unwrap()) / (2.0 * h);
        let exact = poly.project_null_space(&dir).unwrap();
        prop_assert!((&fd - &exact).amax() < 1e-7);
        let dense = poly.null_space_projector() * &dir;
        prop_assert!((&dense - &exact).amax() < 1e-10);
        prop_assert!((poly.a() * &exact).amax() < 1e-9 * (1.0 + dir.amax()));
    }

    #[test]
    fn licq_agrees_with_row_reduction(
        seed in any::<u64>(), m in 1usize..4, extra in 1usize..5,
        pattern in prop::collection::vec(any::<bool>(), 1..10),
    ) {
        let (poly, x0) = instance(seed, m, extra);
        let n = poly.dim();
        let x = DVector::from_fn(n, |i, _| if pattern[i % pattern.len()] { 0.0 } else { x0[i] + 1.0 });
        let active = active_set(&x, DEFAULT_ACTIVE_TOLERANCE);
        let mut stacked = DMatrix::zeros(m + active.len(), n);
        stacked.rows_mut(0, m).copy_from(poly.a());
        for (r, &i) in active.indices().iter().enumerate() {
            stacked[(m + r, i)] = 1.0;
        }
        let full_rank = m + active.len() <= n && rank_by_elimination(stacked, 1e-9) == m + active.len();
        prop_assert_eq!(poly.licq_holds(&x, 1e-9).unwrap(), full_rank);
    }

    #[test]
    fn jfb_gradient_lies_in_null_space(
        seed in any::<u64>(), m in 1usize..5, extra in 1usize..6,
        w in prop::collection::vec(-3.0f64..3.0, 1..12),
        g in prop::collection::vec(-3.0f64..3.0, 1..12),
    ) {
        let (poly, _) = instance(seed, m, extra);
        let (w, g) = (vector(&w, poly.dim()), vector(&g, poly.dim()));
        let cfg = DysConfig::new(1.0, 1.0, 2000, 1e-9);
        let st = solve(&poly, &w, &cfg).unwrap();
        let grad = grad_wrt_cost(&poly, &st.z, &g, cfg.alpha).unwrap().grad_w;
        let scale = 1.0 + g.amax() * poly.a().amax();
        prop_assert!((poly.a() * &grad).amax() < 1e-9 * scale);
    }

    #[test]
    fn solver_output_is_nonnegative(
        seed in any::<u64>(), m in 1usize..5, extra in 1usize..6,
        w in prop::collection::vec(-3.0f64..3.0, 1..12),
    ) {
        let (poly, _) = instance(seed, m, extra);
        let w = vector(&w, poly.dim());
        let cfg = DysConfig::new(1.0, 1.0, 5000, 1e-10);
        let st = solve(&poly, &w, &cfg).unwrap();
        prop_assert!(st.x.iter().all(|&v| v >= 0.0));
        if st.converged(&cfg) {
            prop_assert!(st.feasibility_residual(&poly) < 1e-6);
        }
    }
}

#[test]
fn dropout_preserves_expectation() {
    let mut cfg = MlpConfig::new(vec![5, 8, 6]);
    cfg.dropout_rate = 0.3;
    cfg.seed = 11;
    let params = init_params(&cfg).unwrap();
    let d = DVector::from_vec(vec![0.3, -1.2, 0.7, 0.0, 2.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (eval, _) = forward(&params, &d, false, &mut rng).unwrap();
    let trials = 40_000;
    let mut mean = DVector::zeros(eval.len());
    let mut dropped = 0usize;
    for _ in 0..trials {
        let (out, cache) = forward(&params, &d, true, &mut rng).unwrap();
        mean += out;
        dropped += cache.dropout_mask().unwrap().iter().filter(|&&v| v == 0.0).count();
    }
    mean /= trials as f64;
    let rate = dropped as f64 / (trials * eval.len()) as f64;
    assert!((rate - 0.3).abs() < 0.01, "drop rate {rate}");
    let sd = eval.amax() * (0.3f64 / 0.7).sqrt() / (trials as f64).sqrt();
    assert!((&mean - &eval).amax() < 5.0 * sd, "mean {mean} vs eval {eval}");
}
