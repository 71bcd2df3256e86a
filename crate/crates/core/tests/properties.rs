use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use sfnn_core::fixed_point::{estimate_contraction, iterate, relax, ErrorBoundReport};
use sfnn_core::linalg::{linear_fit, solve_affine_fixed_point, spectral_norm, spectral_radius};
use sfnn_core::networks::{run_dsfnn, Activation, NonlinearDsfnn};
use sfnn_core::stochastic::sample_brownian;
use sfnn_core::{FixedPointConfig, Grid, KappaSchedule, KernelSpec, Norm, RandomSeed};

fn matrix(n: usize, entries: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| entries[(i * n + j) % entries.len()])
}

/// Random square matrix rescaled to spectral norm `target`.
fn with_norm(n: usize, entries: &[f64], target: f64) -> DMatrix<f64> {
    let m = matrix(n, entries);
    let s = spectral_norm(&m, 1e-12, 10_000);
    if s == 0.0 {
        m
    } else {
        m * (target / s)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn relaxed_iteration_equals_picard_on_relaxed_operator(
        entries in prop::collection::vec(-1.0f64..1.0, 16),
        b in prop::collection::vec(-1.0f64..1.0, 4),
        kappa in 0.05f64..1.0,
    ) {
        let w = with_norm(4, &entries, 0.8);
        let b = DVector::from_vec(b);
        let op = |y: &DVector<f64>| &w * y + &b;
        let relaxed = |y: &DVector<f64>| relax(y, op(y), kappa);
        let y0 = DVector::zeros(4);
        for steps in 1..8 {
            let km = FixedPointConfig::fixed_depth(steps).with_kappa(KappaSchedule::Constant(kappa));
            let (a, _) = iterate(op, &y0, &km).unwrap();
            let (c, _) = iterate(relaxed, &y0, &FixedPointConfig::fixed_depth(steps)).unwrap();
            prop_assert_eq!(a, c);
        }
    }

    #[test]
    fn contractive_affine_iteration_matches_direct_solve(
        n in 2usize..40,
        entries in prop::collection::vec(-1.0f64..1.0, 64),
        rho in 0.05f64..0.9,
    ) {
        let m = matrix(n, &entries);
        let r = spectral_radius(&m, 1e-12, 20_000).unwrap().value;
        prop_assume!(r > 1e-6);
        let w = with_norm(n, &entries, rho);
        let b = DVector::from_fn(n, |i, _| (i as f64).cos());
        let eps = 1e-13;
        let (y, trace) = iterate(|y| &w * y + &b, &b, &FixedPointConfig::new(eps, 5000)).unwrap();
        prop_assert!(trace.converged);
        let direct = solve_affine_fixed_point(&w, &b).unwrap();
        prop_assert!((&y - &direct).norm() / direct.norm() <= 1e-10);
    }

    #[test]
    fn residual_logs_are_asymptotically_linear(
        entries in prop::collection::vec(-1.0f64..1.0, 25),
        rho in 0.3f64..0.9,
    ) {
        let m = matrix(5, &entries);
        let w = with_norm(5, (&m + m.transpose()).as_slice(), rho);
        let b = DVector::from_element(5, 1.0);
        let (_, trace) = iterate(|y| &w * y + &b, &b, &FixedPointConfig::new(1e-14, 10_000)).unwrap();
        let r = &trace.residuals;
        prop_assume!(r.len() >= 15 && r.iter().all(|x| *x > 0.0));
        let tail = &r[r.len() - 12..r.len() - 2];
        let xs: Vec<f64> = (0..10).map(|k| k as f64).collect();
        let ys: Vec<f64> = tail.iter().map(|x| x.ln()).collect();
        let (slope, r2) = linear_fit(&xs, &ys);
        prop_assert!(slope < 0.0);
        prop_assert!(r2 > 0.98, "R² {}", r2);
        let ratio = trace.ratio_estimates[trace.ratio_estimates.len() - 3];
        prop_assert!(ratio <= rho * 1.05, "ratio {} vs norm {}", ratio, rho);
    }

    #[test]
    fn error_bound_dominates_measured_error(
        entries in prop::collection::vec(-1.0f64..1.0, 36),
        q in 0.1f64..0.9,
    ) {
        let w = with_norm(6, &entries, q);
        let g = DVector::from_fn(6, |i, _| 1.0 + i as f64);
        let direct = solve_affine_fixed_point(&w, &g).unwrap();
        let gap = (&w * &g).norm();
        for depth in 1..=30 {
            let (y, _) = iterate(|y| &w * y + &g, &g, &FixedPointConfig::fixed_depth(depth)).unwrap();
            let bound = ErrorBoundReport::bound_at(q, 0.0, gap, depth);
            prop_assert!((&y - &direct).norm() <= bound * (1.0 + 1e-9) + 1e-14);
        }
    }

    #[test]
    fn probed_contraction_never_exceeds_spectral_norm(
        entries in prop::collection::vec(-1.0f64..1.0, 16),
        probes in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 8), 2..6),
    ) {
        let w = matrix(4, &entries);
        let sigma = spectral_norm(&w, 1e-14, 100_000);
        let pairs: Vec<_> = probes
            .iter()
            .map(|p| (DVector::from_column_slice(&p[..4]), DVector::from_column_slice(&p[4..])))
            .collect();
        match estimate_contraction(|y| &w * y, &pairs, &Norm::L2 { weight: 1.0 }) {
            Ok(q) => prop_assert!(q <= sigma * (1.0 + 1e-9)),
            Err(_) => prop_assert!(pairs.iter().all(|(u, v)| u == v)),
        }
    }

    #[test]
    fn certified_dsfnn_converges(
        k_scale in 0.0f64..0.6,
        g_scale in 0.0f64..0.6,
        seed in any::<u64>(),
    ) {
        let grid = Grid::new(0.0, 1.0, 33).unwrap();
        let path = sample_brownian(&grid, RandomSeed::new(seed, 0)).unwrap();
        let spec = KernelSpec::new(move |t, s| k_scale * (t - s).cos(), |t| t.sin())
            .with_stochastic(move |t, s| g_scale * (t * s).exp() / std::f64::consts::E);
        let net = NonlinearDsfnn::from_spec(&grid, &spec, Some(&path), Activation::Tanh).unwrap();
        prop_assume!(net.contraction_certificate() < 1.0);
        let (_, trace) = run_dsfnn(&net, &FixedPointConfig::new(1e-12, 2000)).unwrap();
        prop_assert!(trace.converged);
    }

    #[test]
    fn activations_are_one_lipschitz(x in -50.0f64..50.0, y in -50.0f64..50.0) {
        for act in [Activation::Identity, Activation::Tanh, Activation::Softplus] {
            prop_assert!((act.apply(x) - act.apply(y)).abs() <= act.lipschitz() * (x - y).abs() + 1e-12);
            prop_assert!(act.apply(0.0).is_finite());
        }
    }

    #[test]
    fn coarsened_paths_sum_fine_increments(seed in any::<u64>(), factor in 1usize..6) {
        let fine_grid = Grid::new(0.0, 2.0, 8 * factor * 3 + 1).unwrap();
        let fine = sample_brownian(&fine_grid, RandomSeed::new(seed, 1)).unwrap();
        let coarse = fine.coarsen(factor).unwrap();
        for (c, chunk) in fine.increments.chunks(factor).enumerate() {
            prop_assert!((chunk.iter().sum::<f64>() - coarse.increments[c]).abs() < 1e-12);
        }
        let (wc, wf) = (coarse.cumulative(), fine.cumulative());
        prop_assert!((wc[wc.len() - 1] - wf[wf.len() - 1]).abs() < 1e-12);
    }
}
